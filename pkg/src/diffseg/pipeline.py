"""End-to-end orchestration with content-addressed stage caching.

Each stage's key hashes its own config slice plus its parents' keys, so
changing any upstream setting invalidates exactly the downstream stages.
Stage artifacts live in ``<run_root>/<nn>_<stage>-<key>/``; a ``_complete.json``
marker holds output checksums, the stage seed, timestamps, and the audited
list of files the stage read.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autoencoder as ae
from .classifier import ClassifierModel, train_classifier
from .config import RunConfig
from .io_utils import read_json, record_reads, sha256_file, sha256_json, write_json
from .manipulate import generate_pairs_batch, select_alpha
from .maskgen import (
    DegenerateInputError,
    PseudoMask,
    difference_map,
    otsu_threshold,
    refine,
)
from .phantom import (
    LABEL_NEG,
    LABEL_POS,
    DatasetManifest,
    build_dataset,
    load_slice,
    twin_gt_mask,
)
from .io_utils import load_image_png, load_mask_png, save_image_png, save_mask_png
from .segnet import SegModel, dice, evaluate as seg_evaluate, train_unet

STAGE_ORDER = ["phantom", "diffae", "classifier", "sweep", "pairs",
               "maskgen", "segnet", "evaluate"]


class StageError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


class InvalidStateError(RuntimeError):
    """Report requested for a run that has not completed evaluation."""


def _log(event: str, **kv) -> None:
    print(json.dumps({"event": event, **kv}, sort_keys=True), file=sys.stderr)


@dataclass
class StageRecord:
    name: str
    key: str
    seed: int
    status: str  # "completed" | "cached"
    dir: str
    outputs: dict = field(default_factory=dict)  # name -> {"path", "sha256"}
    reads: list = field(default_factory=list)
    started: float = 0.0
    finished: float = 0.0


@dataclass
class RunManifest:
    run_id: str
    config_hash: str
    config: dict
    stages: list  # list of StageRecord as dicts
    created: float = 0.0

    def stage(self, name: str) -> dict:
        for s in self.stages:
            if s["name"] == name:
                return s
        raise KeyError(name)

    def save(self, path: str | Path) -> None:
        write_json(path, dataclasses.asdict(self))

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        d = read_json(path)
        return cls(**d)


def _checksum_outputs(stage_dir: Path) -> dict:
    outputs = {}
    for p in sorted(stage_dir.rglob("*")):
        if p.is_file() and p.name != "_complete.json":
            outputs[str(p.relative_to(stage_dir))] = {
                "path": str(p), "sha256": sha256_file(p)}
    return outputs


def _verify_outputs(record: dict) -> None:
    for name, meta in record["outputs"].items():
        p = Path(meta["path"])
        if not p.exists() or sha256_file(p) != meta["sha256"]:
            raise StageError(f"input artifact {name} missing or checksum mismatch: {p}")


class _Run:
    """Shared state handed to stage functions."""

    def __init__(self, config: RunConfig, run_root: Path):
        self.config = config
        self.run_root = run_root
        self.dirs: dict[str, Path] = {}
        self.records: dict[str, dict] = {}

    # lazily loaded artifacts
    def dataset(self) -> tuple[DatasetManifest, Path]:
        root = self.dirs["phantom"] / "data"
        return DatasetManifest.load(root / "manifest.json"), root

    def checkpoint(self) -> ae.DiffAECheckpoint:
        p = self.dirs["diffae"] / "ckpt.npz"
        if not p.exists():
            raise FileNotFoundError(f"missing checkpoint {p}; was diffae trained?")
        return ae.DiffAECheckpoint.load(p)

    def classifier(self) -> ClassifierModel:
        p = self.dirs["classifier"] / "classifier.json"
        if not p.exists():
            raise FileNotFoundError(f"missing classifier model {p}")
        return ClassifierModel.load(p)

    def alpha_star(self) -> float:
        if self.config.pairs.alpha is not None:
            return float(self.config.pairs.alpha)
        return float(read_json(self.dirs["sweep"] / "summary.json")["alpha_star"])


# ---------------------------------------------------------------- stages

def _stage_phantom(run: _Run, out: Path, seed: int) -> None:
    cfg = dataclasses.replace(run.config.phantom, seed=seed)
    build_dataset(cfg, out / "data")


def _stage_diffae(run: _Run, out: Path, seed: int) -> None:
    cfg = dataclasses.replace(run.config.diffae, seed=seed)
    manifest, root = run.dataset()
    if cfg.steps <= 0:
        write_json(out / "skipped.json", {"reason": "diffae steps <= 0, no checkpoint"})
        return
    ck = ae.train_diffae(manifest, root, cfg)
    ck.save(out / "ckpt.npz")
    write_json(out / "loss_records.json", ck.loss_records)


def _encode_split_latents(run: _Run, splits: tuple[str, ...]):
    manifest, root = run.dataset()
    ck = run.checkpoint()
    entries = []
    for split in splits:
        entries.extend(sorted(manifest.select(split=split), key=lambda e: e["id"]))
    X = np.stack([load_slice(e, root).pixels for e in entries])
    Z = ae.encode_batch(X, ck)
    y = np.array([1 if e["label"] == LABEL_POS else 0 for e in entries])
    return entries, Z, y


def _stage_classifier(run: _Run, out: Path, seed: int) -> None:
    cfg = dataclasses.replace(run.config.classifier, seed=seed)
    entries, Z, y = _encode_split_latents(run, ("train", "val"))
    model = train_classifier(list(zip(Z, y.tolist())), cfg)
    model.save(out / "classifier.json")
    np.savez(out / "latents.npz", ids=np.array([e["id"] for e in entries]),
             z=Z, label=y)


def _stage_sweep(run: _Run, out: Path, seed: int) -> None:
    cfg = run.config.sweep
    manifest, root = run.dataset()
    ck = run.checkpoint()
    model = run.classifier()
    negatives = sorted(manifest.select(split="train", label=LABEL_NEG),
                       key=lambda e: e["id"])[: cfg.n_negatives]
    positives = sorted(manifest.select(split="train", label=LABEL_POS),
                       key=lambda e: e["id"])[: cfg.n_real_fibrotic]
    neg_slices = [load_slice(e, root) for e in negatives]
    pos_slices = [load_slice(e, root) for e in positives]
    alpha_star, table = select_alpha(list(cfg.alphas), neg_slices, pos_slices, ck, model)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["alpha", "fid", "n_generated"])
        w.writerows(table)
    write_json(out / "summary.json",
               {"alpha_star": alpha_star, "table": [list(r) for r in table]})


def _stage_pairs(run: _Run, out: Path, seed: int) -> None:
    cfg = run.config.pairs
    manifest, root = run.dataset()
    ck = run.checkpoint()
    model = run.classifier()
    alpha = run.alpha_star()
    negatives = []
    for split in ("train", "val"):
        negatives.extend(sorted(manifest.select(split=split, label=LABEL_NEG),
                                key=lambda e: e["id"]))
    negatives = negatives[: cfg.count]
    (out / "orig").mkdir(exist_ok=True)
    (out / "fib").mkdir(exist_ok=True)
    listing = []
    for i in range(0, len(negatives), 32):
        chunk = negatives[i:i + 32]
        X = np.stack([load_slice(e, root).pixels for e in chunk])
        orig, fib = generate_pairs_batch(X, alpha, ck, model,
                                         normalize=cfg.normalize_gradient)
        for e, o, fb in zip(chunk, orig, fib):
            save_image_png(out / "orig" / f"{e['id']}.png", np.clip(o, -1, 1))
            save_image_png(out / "fib" / f"{e['id']}.png", np.clip(fb, -1, 1))
            listing.append({"id": e["id"], "orig": f"orig/{e['id']}.png",
                            "fib": f"fib/{e['id']}.png"})
    write_json(out / "pairs.json", {"alpha": alpha, "pairs": listing})


def _stage_maskgen(run: _Run, out: Path, seed: int) -> None:
    cfg = run.config.maskgen
    manifest, root = run.dataset()
    pair_dir = run.dirs["pairs"]
    pairs = read_json(pair_dir / "pairs.json")["pairs"]
    lung_by_id = {e["id"]: e for e in manifest.entries}
    (out / "masks").mkdir(exist_ok=True)
    for p in pairs:
        orig = load_image_png(pair_dir / p["orig"])
        fib = load_image_png(pair_dir / p["fib"])
        lung = load_mask_png(root / lung_by_id[p["id"]]["lung_path"])
        pm = refine(difference_map(orig, fib), lung, p["id"], cfg)
        save_mask_png(out / "masks" / f"{p['id']}.png", pm.mask)
        write_json(out / "masks" / f"{p['id']}.json", {
            "source_id": p["id"], "component_count": pm.component_count,
            "params": dataclasses.asdict(cfg)})


def _stage_segnet(run: _Run, out: Path, seed: int) -> None:
    cfg = dataclasses.replace(run.config.segnet, seed=seed)
    pair_dir = run.dirs["pairs"]
    mask_dir = run.dirs["maskgen"] / "masks"
    pairs_meta = read_json(pair_dir / "pairs.json")["pairs"]
    pairs = []
    for p in pairs_meta:
        img = load_image_png(pair_dir / p["fib"])
        mask = load_mask_png(mask_dir / f"{p['id']}.png")
        meta = read_json(mask_dir / f"{p['id']}.json")
        pairs.append((img, PseudoMask(mask=mask, source_slice_id=p["id"],
                                      component_count=meta["component_count"])))
    models = train_unet(pairs, folds=run.config.segnet_folds, config=cfg)
    cv = []
    for m in models:
        m.save(out / f"fold_{m.fold_index}.npz")
        cv.append({"fold": m.fold_index, "val_dice": m.val_dice})
    write_json(out / "cv.json", cv)


def _stage_evaluate(run: _Run, out: Path, seed: int) -> None:
    cfg = run.config.evaluate
    manifest, root = run.dataset()
    models = [SegModel.load(p) for p in sorted(run.dirs["segnet"].glob("fold_*.npz"))]
    test_entries = sorted(manifest.select(split="test", label=LABEL_POS),
                          key=lambda e: e["id"])
    test_slices = [load_slice(e, root, with_gt=True) for e in test_entries]
    report = seg_evaluate(models, test_slices, threshold=cfg.threshold)
    report.save(out / "eval.json")
    with open(out / "dice.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "dice"])
        for p in report.per_slice:
            w.writerow([p["id"], p["dice"]])

    # refinement ablation on generated pairs, scored against the lesion mask
    # of each negative slice's fibrotic phantom twin
    pair_dir = run.dirs["pairs"]
    mask_dir = run.dirs["maskgen"] / "masks"
    pairs_meta = read_json(pair_dir / "pairs.json")["pairs"][: cfg.ablation_pairs]
    by_id = {e["id"]: e for e in manifest.entries}
    refined_d, raw_d = [], []
    for p in pairs_meta:
        gt = twin_gt_mask(by_id[p["id"]], manifest.size)
        refined = load_mask_png(mask_dir / f"{p['id']}.png")
        diff = difference_map(load_image_png(pair_dir / p["orig"]),
                              load_image_png(pair_dir / p["fib"]))
        try:
            _, raw = otsu_threshold(diff)
        except DegenerateInputError:
            raw = np.zeros_like(refined)
        refined_d.append(dice(refined, gt))
        raw_d.append(dice(raw, gt))
    write_json(out / "ablation.json", {
        "n_pairs": len(pairs_meta),
        "refined_mean_dice": float(np.mean(refined_d)),
        "raw_otsu_mean_dice": float(np.mean(raw_d)),
    })


_STAGE_FNS = {
    "phantom": _stage_phantom,
    "diffae": _stage_diffae,
    "classifier": _stage_classifier,
    "sweep": _stage_sweep,
    "pairs": _stage_pairs,
    "maskgen": _stage_maskgen,
    "segnet": _stage_segnet,
    "evaluate": _stage_evaluate,
}

# which config slice feeds each stage's cache key
def _stage_config_slice(config: RunConfig, stage: str) -> dict:
    c = config.to_dict()
    slices = {
        "phantom": {"phantom": c["phantom"]},
        "diffae": {"diffae": c["diffae"]},
        "classifier": {"classifier": c["classifier"]},
        "sweep": {"sweep": c["sweep"]},
        "pairs": {"pairs": c["pairs"]},
        "maskgen": {"maskgen": c["maskgen"]},
        "segnet": {"segnet": c["segnet"], "folds": c["segnet_folds"]},
        "evaluate": {"evaluate": c["evaluate"]},
    }
    return slices[stage]


_PARENTS = {
    "phantom": [],
    "diffae": ["phantom"],
    "classifier": ["phantom", "diffae"],
    "sweep": ["phantom", "diffae", "classifier"],
    "pairs": ["phantom", "diffae", "classifier", "sweep"],
    "maskgen": ["phantom", "pairs"],
    "segnet": ["pairs", "maskgen"],
    "evaluate": ["phantom", "pairs", "maskgen", "segnet"],
}


def run_all(config: RunConfig, run_root: str | Path) -> RunManifest:
    """Execute the eight stages, reusing completed stage directories."""
    run_root = Path(run_root)
    run_root.mkdir(parents=True, exist_ok=True)
    run = _Run(config, run_root)
    keys: dict[str, str] = {}
    records = []
    for i, name in enumerate(STAGE_ORDER):
        seed = config.stage_seed(name)
        key = sha256_json({"stage": name, "seed": seed,
                           "config": _stage_config_slice(config, name),
                           "parents": [keys[p] for p in _PARENTS[name]]})[:12]
        keys[name] = key
        stage_dir = run_root / f"{i:02d}_{name}-{key}"
        run.dirs[name] = stage_dir
        marker = stage_dir / "_complete.json"
        if marker.exists():
            rec = read_json(marker)
            rec["status"] = "cached"
            _log("stage_cached", stage=name, key=key)
            run.records[name] = rec
            records.append(rec)
            continue
        for parent in _PARENTS[name]:
            _verify_outputs(run.records[parent])
        stage_dir.mkdir(parents=True, exist_ok=True)
        _log("stage_start", stage=name, key=key)
        reads: list[str] = []
        started = time.time()
        try:
            with record_reads(reads):
                _STAGE_FNS[name](run, stage_dir, seed)
        except Exception as exc:
            _log("stage_failed", stage=name, error=str(exc))
            raise StageError(f"stage '{name}' failed: {exc}") from exc
        rec = dataclasses.asdict(StageRecord(
            name=name, key=key, seed=seed, status="completed",
            dir=str(stage_dir), outputs=_checksum_outputs(stage_dir),
            reads=sorted(set(reads)), started=started, finished=time.time()))
        write_json(marker, rec)
        run.records[name] = rec
        records.append(rec)
        _log("stage_done", stage=name, key=key,
             seconds=round(rec["finished"] - rec["started"], 1))

    manifest = RunManifest(run_id=config.config_hash()[:12],
                           config_hash=config.config_hash(),
                           config=config.to_dict(), stages=records,
                           created=time.time())
    manifest.save(run_root / f"manifest-{manifest.run_id}.json")
    return manifest


def report(manifest: RunManifest, out_dir: str | Path) -> Path:
    """Emit a self-contained report (markdown + figure panels) for a finished run."""
    try:
        eval_rec = manifest.stage("evaluate")
    except KeyError:
        raise InvalidStateError("run has no evaluation stage")
    eval_dir = Path(eval_rec["dir"])
    if not (eval_dir / "eval.json").exists():
        raise InvalidStateError("run did not complete evaluation")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ev = read_json(eval_dir / "eval.json")
    abl = read_json(eval_dir / "ablation.json")
    sweep = read_json(Path(manifest.stage("sweep")["dir"]) / "summary.json")
    clf = read_json(Path(manifest.stage("classifier")["dir"]) / "classifier.json")

    panel_path = _render_panels(manifest, out_dir)

    lines = [
        "# Segmentation run report",
        "",
        f"Run id: `{manifest.run_id}` (config hash `{manifest.config_hash[:16]}...`)",
        "",
        "## Strength sweep",
        "",
        "| alpha | frechet distance | n |",
        "|---|---|---|",
    ]
    for alpha, d, n in sweep["table"]:
        star = " *" if alpha == sweep["alpha_star"] else ""
        lines.append(f"| {alpha}{star} | {d:.4f} | {n} |")
    lines += [
        "",
        f"Selected alpha: **{sweep['alpha_star']}**",
        "",
        "## Latent classifier",
        "",
        f"Validation F1: **{clf['f1']:.4f}**",
        "",
        "## Segmentation performance (held-out phantom test slices)",
        "",
        f"- mean Dice: **{ev['mean']:.4f}**",
        f"- median Dice: {ev['median']:.4f}",
        f"- interquartile range: {ev['q25']:.4f} - {ev['q75']:.4f}",
        f"- n = {ev['n']}",
        "",
        "## Pseudo-mask refinement ablation",
        "",
        f"- refined masks mean Dice vs twin ground truth: {abl['refined_mean_dice']:.4f}",
        f"- raw Otsu masks mean Dice: {abl['raw_otsu_mean_dice']:.4f}",
        f"- over {abl['n_pairs']} generated pairs",
        "",
        f"![panels]({panel_path.name})",
        "",
    ]
    report_path = out_dir / "report.md"
    report_path.write_text("\n".join(lines))
    return report_path


def _render_panels(manifest: RunManifest, out_dir: Path, n_rows: int = 4) -> Path:
    """Side-by-side panels: input | pseudo mask | prediction | ground truth."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    phantom_dir = Path(manifest.stage("phantom")["dir"]) / "data"
    seg_dir = Path(manifest.stage("segnet")["dir"])
    eval_dir = Path(manifest.stage("evaluate")["dir"])
    dm = DatasetManifest.load(phantom_dir / "manifest.json")
    models = [SegModel.load(p) for p in sorted(seg_dir.glob("fold_*.npz"))]
    best = max(models, key=lambda m: m.val_dice)
    scores = {p["id"]: p["dice"] for p in read_json(eval_dir / "eval.json")["per_slice"]}

    from .segnet import predict_mask
    test_entries = sorted(dm.select(split="test", label=LABEL_POS),
                          key=lambda e: e["id"])[:n_rows]
    fig, axes = plt.subplots(len(test_entries), 3, figsize=(7, 2.3 * len(test_entries)))
    axes = np.atleast_2d(axes)
    for r, e in enumerate(test_entries):
        sl = load_slice(e, phantom_dir, with_gt=True)
        pred = predict_mask(sl.pixels, best)
        for c, (img, title) in enumerate([
                (sl.pixels, f"input (Dice {scores.get(e['id'], float('nan')):.2f})"),
                (pred, "prediction"), (sl.gt_mask, "ground truth")]):
            axes[r, c].imshow(img, cmap="gray", vmin=-1 if c == 0 else 0,
                              vmax=1, interpolation="nearest")
            axes[r, c].set_title(title, fontsize=8)
            axes[r, c].axis("off")
    fig.tight_layout()
    path = out_dir / "panels.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
