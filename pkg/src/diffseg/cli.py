"""Command-line interface.

Subcommands mirror the pipeline stages (``phantom``, ``diffae``,
``classifier``, ``manipulate``, ``maskgen``, ``segnet``) plus ``run`` and
``report`` for the end-to-end workflow.  Exit code is 0 only on success.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        args.func(args)
    except Exception as exc:  # surface stage/validation errors with exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diffseg")
    sub = p.add_subparsers(dest="command")

    g = sub.add_parser("phantom", help="synthetic dataset").add_subparsers(dest="sub")
    gen = g.add_parser("gen", help="generate a balanced phantom dataset")
    gen.add_argument("--count", type=int, default=400, help="slices per class")
    gen.add_argument("--size", type=int, default=64)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_phantom_gen)

    d = sub.add_parser("diffae", help="diffusion autoencoder").add_subparsers(dest="sub")
    tr = d.add_parser("train")
    tr.add_argument("--manifest", required=True, help="dataset manifest.json")
    tr.add_argument("--out", required=True, help="checkpoint file (.npz)")
    tr.add_argument("--steps", type=int, default=None)
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(func=_cmd_diffae_train)
    rc = d.add_parser("reconstruct")
    rc.add_argument("--ckpt", required=True)
    rc.add_argument("--manifest", required=True)
    rc.add_argument("--slice", required=True, dest="slice_id")
    rc.add_argument("--out", required=True, help="output PNG")
    rc.set_defaults(func=_cmd_diffae_reconstruct)

    c = sub.add_parser("classifier", help="latent classifier").add_subparsers(dest="sub")
    ct = c.add_parser("train")
    ct.add_argument("--latents", required=True, help="npz with arrays z, label")
    ct.add_argument("--out", required=True)
    ct.add_argument("--seed", type=int, default=0)
    ct.set_defaults(func=_cmd_classifier_train)
    ce = c.add_parser("eval")
    ce.add_argument("--model", required=True)
    ce.add_argument("--latents", required=True)
    ce.set_defaults(func=_cmd_classifier_eval)

    m = sub.add_parser("manipulate", help="latent editing").add_subparsers(dest="sub")
    sw = m.add_parser("sweep")
    sw.add_argument("--alphas", type=float, nargs="+", required=True)
    sw.add_argument("--manifest", required=True)
    sw.add_argument("--ckpt", required=True)
    sw.add_argument("--model", required=True)
    sw.add_argument("--n-negatives", type=int, default=32)
    sw.add_argument("--n-real", type=int, default=64)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=_cmd_manipulate_sweep)
    pr = m.add_parser("pair")
    pr.add_argument("--manifest", required=True)
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--model", required=True)
    pr.add_argument("--slice", required=True, dest="slice_id")
    pr.add_argument("--alpha", type=float, required=True)
    pr.add_argument("--out", required=True, help="output directory")
    pr.set_defaults(func=_cmd_manipulate_pair)

    mg = sub.add_parser("maskgen", help="pseudo-mask refinement").add_subparsers(dest="sub")
    mr = mg.add_parser("run")
    mr.add_argument("--pairs", required=True, help="directory with pairs.json, orig/, fib/")
    mr.add_argument("--lungs", required=True, help="directory of <id>.png lung masks")
    mr.add_argument("--out", required=True)
    mr.add_argument("--blur-sigma", type=float, default=1.0)
    mr.add_argument("--open-radius", type=int, default=1)
    mr.add_argument("--keep-k", type=int, default=5)
    mr.add_argument("--vessel-elongation", type=float, default=4.0)
    mr.add_argument("--vessel-minor-extent", type=float, default=6.0)
    mr.set_defaults(func=_cmd_maskgen_run)

    sg = sub.add_parser("segnet", help="segmentation network").add_subparsers(dest="sub")
    sgt = sg.add_parser("train")
    sgt.add_argument("--pairs", required=True, help="pairs directory (pairs.json)")
    sgt.add_argument("--masks", required=True, help="refined mask directory")
    sgt.add_argument("--folds", type=int, default=5)
    sgt.add_argument("--seed", type=int, default=0)
    sgt.add_argument("--out", required=True)
    sgt.set_defaults(func=_cmd_segnet_train)
    sge = sg.add_parser("eval")
    sge.add_argument("--models", required=True, help="directory of fold_*.npz")
    sge.add_argument("--manifest", required=True, help="dataset manifest.json")
    sge.add_argument("--out", required=True, help="output eval.json")
    sge.set_defaults(func=_cmd_segnet_eval)

    r = sub.add_parser("run", help="full pipeline")
    r.add_argument("--config", required=True)
    r.add_argument("--run-root", default="runs")
    r.set_defaults(func=_cmd_run)

    rp = sub.add_parser("report", help="report for a finished run")
    rp.add_argument("--run", required=True,
                    help="run manifest JSON, or a run root containing one")
    rp.add_argument("--out", default=None, help="output directory (default: next to manifest)")
    rp.set_defaults(func=_cmd_report)
    return p


def _cmd_phantom_gen(args):
    from .phantom import PhantomConfig, build_dataset
    m = build_dataset(PhantomConfig(n_positive=args.count, n_negative=args.count,
                                    size=args.size, seed=args.seed), args.out)
    print(f"wrote {m.counts['total']} slices to {args.out}")


def _cmd_diffae_train(args):
    from .autoencoder import DiffAEConfig, train_diffae
    from .phantom import DatasetManifest
    manifest = DatasetManifest.load(args.manifest)
    cfg = DiffAEConfig(seed=args.seed)
    if args.steps is not None:
        cfg = dataclasses.replace(cfg, steps=args.steps)
    ck = train_diffae(manifest, Path(args.manifest).parent, cfg)
    ck.save(args.out)
    print(f"saved checkpoint to {args.out}")


def _cmd_diffae_reconstruct(args):
    from .autoencoder import DiffAECheckpoint, psnr, reconstruct
    from .io_utils import save_image_png
    from .phantom import DatasetManifest, load_slice
    manifest = DatasetManifest.load(args.manifest)
    entry = next(e for e in manifest.entries if e["id"] == args.slice_id)
    sl = load_slice(entry, Path(args.manifest).parent)
    ck = DiffAECheckpoint.load(args.ckpt)
    recon = reconstruct(sl.pixels, ck)
    save_image_png(args.out, np.clip(recon, -1, 1))
    print(f"round-trip PSNR: {psnr(recon, sl.pixels):.2f} dB -> {args.out}")


def _load_latents(path):
    with np.load(path) as npz:
        return list(zip(npz["z"], npz["label"].astype(int).tolist()))


def _cmd_classifier_train(args):
    from .classifier import ClassifierConfig, train_classifier
    model = train_classifier(_load_latents(args.latents), ClassifierConfig(seed=args.seed))
    model.save(args.out)
    print(f"validation F1: {model.f1:.4f} -> {args.out}")


def _cmd_classifier_eval(args):
    from .classifier import ClassifierModel, f1_score, predict_score
    model = ClassifierModel.load(args.model)
    data = _load_latents(args.latents)
    scores = predict_score(np.stack([z for z, _ in data]), model)
    labels = np.array([y for _, y in data])
    print(f"F1 at threshold {model.threshold}: "
          f"{f1_score(labels, scores > model.threshold):.4f} (n={len(labels)})")


def _cmd_manipulate_sweep(args):
    import csv
    from .autoencoder import DiffAECheckpoint
    from .classifier import ClassifierModel
    from .io_utils import write_json
    from .manipulate import select_alpha
    from .phantom import DatasetManifest, load_slice, LABEL_NEG, LABEL_POS
    manifest = DatasetManifest.load(args.manifest)
    root = Path(args.manifest).parent
    ck = DiffAECheckpoint.load(args.ckpt)
    model = ClassifierModel.load(args.model)
    negs = [load_slice(e, root) for e in sorted(
        manifest.select(split="train", label=LABEL_NEG), key=lambda e: e["id"])[:args.n_negatives]]
    poss = [load_slice(e, root) for e in sorted(
        manifest.select(split="train", label=LABEL_POS), key=lambda e: e["id"])[:args.n_real]]
    alpha_star, table = select_alpha(args.alphas, negs, poss, ck, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["alpha", "fid", "n_generated"])
        w.writerows(table)
    write_json(out / "summary.json", {"alpha_star": alpha_star,
                                      "table": [list(r) for r in table]})
    print(f"alpha_star = {alpha_star}")


def _cmd_manipulate_pair(args):
    from .autoencoder import DiffAECheckpoint
    from .classifier import ClassifierModel
    from .io_utils import save_image_png
    from .manipulate import generate_pair
    from .phantom import DatasetManifest, load_slice
    manifest = DatasetManifest.load(args.manifest)
    entry = next(e for e in manifest.entries if e["id"] == args.slice_id)
    sl = load_slice(entry, Path(args.manifest).parent)
    ck = DiffAECheckpoint.load(args.ckpt)
    model = ClassifierModel.load(args.model)
    orig, fib = generate_pair(sl, args.alpha, ck, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image_png(out / f"{sl.id}_orig.png", np.clip(orig, -1, 1))
    save_image_png(out / f"{sl.id}_fib.png", np.clip(fib, -1, 1))
    print(f"wrote pair for {sl.id} at alpha={args.alpha}")


def _cmd_maskgen_run(args):
    from .io_utils import load_image_png, load_mask_png, read_json, save_mask_png, write_json
    from .maskgen import MaskgenConfig, difference_map, refine
    cfg = MaskgenConfig(blur_sigma=args.blur_sigma, open_radius=args.open_radius,
                        keep_k=args.keep_k, vessel_elongation=args.vessel_elongation,
                        vessel_minor_extent=args.vessel_minor_extent)
    pair_dir = Path(args.pairs)
    pairs = read_json(pair_dir / "pairs.json")["pairs"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in pairs:
        diff = difference_map(load_image_png(pair_dir / p["orig"]),
                              load_image_png(pair_dir / p["fib"]))
        lung = load_mask_png(Path(args.lungs) / f"{p['id']}.png")
        pm = refine(diff, lung, p["id"], cfg)
        save_mask_png(out / f"{p['id']}.png", pm.mask)
        write_json(out / f"{p['id']}.json", {
            "source_id": p["id"], "component_count": pm.component_count,
            "params": dataclasses.asdict(cfg)})
    print(f"refined {len(pairs)} masks -> {out}")


def _cmd_segnet_train(args):
    from .io_utils import load_image_png, load_mask_png, read_json, write_json
    from .maskgen import PseudoMask
    from .segnet import SegConfig, train_unet
    pair_dir = Path(args.pairs)
    pairs_meta = read_json(pair_dir / "pairs.json")["pairs"]
    pairs = []
    for p in pairs_meta:
        img = load_image_png(pair_dir / p["fib"])
        mask = load_mask_png(Path(args.masks) / f"{p['id']}.png")
        pairs.append((img, PseudoMask(mask=mask, source_slice_id=p["id"],
                                      component_count=0)))
    models = train_unet(pairs, folds=args.folds, config=SegConfig(seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for m in models:
        m.save(out / f"fold_{m.fold_index}.npz")
    write_json(out / "cv.json", [{"fold": m.fold_index, "val_dice": m.val_dice}
                                 for m in models])
    print(f"trained {len(models)} folds -> {out}")


def _cmd_segnet_eval(args):
    from .phantom import DatasetManifest, load_slice, LABEL_POS
    from .segnet import SegModel, evaluate
    manifest = DatasetManifest.load(args.manifest)
    root = Path(args.manifest).parent
    models = [SegModel.load(p) for p in sorted(Path(args.models).glob("fold_*.npz"))]
    test = [load_slice(e, root, with_gt=True) for e in
            sorted(manifest.select(split="test", label=LABEL_POS), key=lambda e: e["id"])]
    rep = evaluate(models, test)
    rep.save(args.out)
    print(f"mean Dice {rep.mean:.4f}, IQR {rep.q25:.4f}-{rep.q75:.4f} (n={rep.n})")


def _cmd_run(args):
    from .config import load_config
    from .pipeline import run_all
    manifest = run_all(load_config(args.config), args.run_root)
    print(f"run {manifest.run_id} complete; "
          f"manifest at {args.run_root}/manifest-{manifest.run_id}.json")


def _cmd_report(args):
    from .pipeline import RunManifest, report
    run_path = Path(args.run)
    if run_path.is_dir():
        candidates = sorted(run_path.glob("manifest-*.json"))
        if not candidates:
            raise FileNotFoundError(f"no run manifest under {run_path}")
        run_path = candidates[-1]
    manifest = RunManifest.load(run_path)
    out = Path(args.out) if args.out else run_path.parent / f"report-{manifest.run_id}"
    path = report(manifest, out)
    print(f"report at {path}")


if __name__ == "__main__":
    sys.exit(main())
