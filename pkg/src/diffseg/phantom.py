"""Synthetic lung-phantom slices with exact lesion ground truth.

Each phantom shows two elliptical "lungs" on a brighter mediastinum-like
background.  Fibrotic phantoms additionally blend clustered bright blobs into
a subpleural rim (outer 20% of the elliptical radius); the blended pixel set
is the ground-truth lesion mask.  Because the anatomy is drawn from a random
stream that depends only on (seed, size), the fibrotic and non-fibrotic
phantoms for the same seed are twins that differ exactly on the lesion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .io_utils import (
    load_image_png,
    load_mask_png,
    read_json,
    save_image_png,
    save_mask_png,
    write_json,
)

LABEL_POS = "fibrosis_positive"
LABEL_NEG = "fibrosis_negative"

MANIFEST_VERSION = "1"


@dataclass
class Slice:
    """One 2-D grayscale slice with its weak label and masks."""

    id: str
    pixels: np.ndarray  # H x W float in [-1, 1]
    label: str
    lung_mask: np.ndarray  # H x W uint8
    gt_mask: np.ndarray | None = None

    def __post_init__(self):
        if self.pixels.min() < -1.0 or self.pixels.max() > 1.0:
            raise ValueError("slice pixels outside [-1, 1]")


@dataclass
class PhantomConfig:
    n_positive: int = 400
    n_negative: int = 400
    size: int = 64
    seed: int = 0
    severity_range: tuple[float, float] = (0.2, 0.9)
    # fraction of each class tagged test; remainder split train:val at 4:1
    test_fraction: float = 0.2
    val_fraction_of_rest: float = 0.2


@dataclass
class DatasetManifest:
    version: str
    seed: int
    size: int
    entries: list[dict]
    split_ratios: dict
    counts: dict = field(default_factory=dict)

    def ids(self, split: str | None = None, label: str | None = None) -> list[str]:
        return [e["id"] for e in self.select(split, label)]

    def select(self, split: str | None = None, label: str | None = None) -> list[dict]:
        out = []
        for e in self.entries:
            if split is not None and e["split"] != split:
                continue
            if label is not None and e["label"] != label:
                continue
            out.append(e)
        return out

    def save(self, path: str | Path) -> None:
        write_json(path, {
            "version": self.version,
            "seed": self.seed,
            "size": self.size,
            "entries": self.entries,
            "split_ratios": self.split_ratios,
            "counts": self.counts,
        })

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        d = read_json(path)
        return cls(version=d["version"], seed=d["seed"], size=d["size"],
                   entries=d["entries"], split_ratios=d["split_ratios"],
                   counts=d.get("counts", {}))


def _smooth_noise(rng: np.random.Generator, size: int, sigma: float) -> np.ndarray:
    n = rng.standard_normal((size, size))
    s = ndimage.gaussian_filter(n, sigma, mode="reflect")
    return s / (np.abs(s).max() + 1e-12)


def _lung_geometry(rng: np.random.Generator, size: int):
    """Two jittered ellipses; returns (lung_mask, rho) with rho the elliptical
    radius field (min over both lungs, <=1 inside)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    rho = np.full((size, size), np.inf)
    for cx_frac in (0.30, 0.70):
        cy = size * (0.50 + rng.uniform(-0.03, 0.03))
        cx = size * (cx_frac + rng.uniform(-0.02, 0.02))
        ay = size * (0.33 + rng.uniform(-0.03, 0.03))  # vertical semi-axis
        ax = size * (0.155 + rng.uniform(-0.015, 0.015))
        r = np.sqrt(((yy - cy) / ay) ** 2 + ((xx - cx) / ax) ** 2)
        rho = np.minimum(rho, r)
    return (rho <= 1.0).astype(np.uint8), rho


def generate_phantom(seed: int, size: int, fibrotic: bool, severity: float) -> Slice:
    """Generate one phantom slice; deterministic in all four arguments."""
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if not 0.0 <= severity <= 1.0:
        raise ValueError(f"severity must be in [0, 1], got {severity}")
    if fibrotic and severity <= 0.0:
        raise ValueError("fibrotic phantoms need severity > 0")

    anat = np.random.default_rng([int(seed), int(size), 0])
    lung_mask, rho = _lung_geometry(anat, size)

    img = np.full((size, size), -0.20)
    img += 0.06 * _smooth_noise(anat, size, sigma=size / 8)
    inside = lung_mask.astype(bool)
    img[inside] = -0.72 + 0.10 * _smooth_noise(anat, size, sigma=size / 16)[inside]

    # some phantoms carry a smooth non-fibrotic abnormality (bright central
    # blob), so negatives are not all trivially clean
    if anat.uniform() < 0.3:
        cy = anat.uniform(0.35, 0.65) * size
        cx = anat.uniform(0.2, 0.8) * size
        r = anat.uniform(0.05, 0.10) * size
        yy, xx = np.mgrid[0:size, 0:size]
        bump = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
        img += 0.5 * bump * inside

    img = ndimage.gaussian_filter(img, 0.7, mode="reflect")

    gt_mask = None
    if fibrotic:
        rim = (rho > 0.70) & (rho <= 1.0)
        tex = np.random.default_rng([int(seed), int(size), 1])
        n = tex.standard_normal((size, size))
        # smooth field -> a handful of patch-like subpleural lesions rather
        # than pixel speckle; patches survive the downstream morphology
        band = ndimage.gaussian_filter(n, 2.2, mode="wrap")
        band = band / (band.std() + 1e-12)
        frac = 0.15 + 0.55 * severity  # fraction of rim pixels turned lesion
        vals = band[rim]
        thr = np.quantile(vals, 1.0 - frac)
        lesion = rim & (band > thr)
        if not lesion.any():
            raise RuntimeError("degenerate fibrosis draw; rim too small")
        # bright clustered texture, strong local contrast against dark lung
        lesion_val = 0.55 + 0.20 * np.clip(band, -1.0, 1.0)
        w = 0.9
        img = np.where(lesion, (1 - w) * img + w * lesion_val, img)
        gt_mask = lesion.astype(np.uint8)

    img = np.clip(img, -1.0, 1.0)
    sid = f"s{int(seed):08d}_{'pos' if fibrotic else 'neg'}"
    label = LABEL_POS if fibrotic else LABEL_NEG
    return Slice(id=sid, pixels=img, label=label, lung_mask=lung_mask, gt_mask=gt_mask)


def slice_seed(base_seed: int, positive: bool, index: int) -> int:
    """Stable per-slice generation seed."""
    return int(base_seed) * 1_000_003 + (500_000 if not positive else 0) + int(index)


def slice_severity(base_seed: int, index: int, severity_range=(0.2, 0.9)) -> float:
    rng = np.random.default_rng([int(base_seed), 77, int(index)])
    lo, hi = severity_range
    return float(rng.uniform(lo, hi))


def _assign_splits(ids: list[str], rng: np.random.Generator,
                   test_fraction: float, val_fraction_of_rest: float) -> dict[str, str]:
    ids = list(ids)
    order = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    rest = len(ids) - n_test
    n_val = int(round(val_fraction_of_rest * rest))
    split = {}
    for rank, j in enumerate(order):
        if rank < n_test:
            split[ids[j]] = "test"
        elif rank < n_test + n_val:
            split[ids[j]] = "val"
        else:
            split[ids[j]] = "train"
    return split


def build_dataset(config: PhantomConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate a balanced phantom dataset on disk and return its manifest.

    20% of each class is tagged ``test``; the remainder is split train:val at
    4:1.  Ground-truth masks are written for positives only, into a separate
    ``gt/`` directory so the supervision audit can tell them apart.
    """
    if config.n_positive < 10 or config.n_negative < 10:
        raise ValueError("need at least 10 slices per class")
    out = Path(out_dir)
    for sub in ("images", "lungs", "gt"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    entries = []
    for positive, count in ((True, config.n_positive), (False, config.n_negative)):
        for i in range(count):
            seed = slice_seed(config.seed, positive, i)
            sev = slice_severity(config.seed, i, config.severity_range) if positive else 0.0
            sl = generate_phantom(seed, config.size, positive, sev)
            save_image_png(out / "images" / f"{sl.id}.png", sl.pixels)
            save_mask_png(out / "lungs" / f"{sl.id}.png", sl.lung_mask)
            entry = {
                "id": sl.id,
                "path": f"images/{sl.id}.png",
                "lung_path": f"lungs/{sl.id}.png",
                "label": sl.label,
                "seed": seed,
                "severity": sev,
            }
            if sl.gt_mask is not None:
                save_mask_png(out / "gt" / f"{sl.id}.png", sl.gt_mask)
                entry["gt_path"] = f"gt/{sl.id}.png"
            entries.append(entry)

    rng = np.random.default_rng([config.seed, 13])
    for label in (LABEL_POS, LABEL_NEG):
        ids = [e["id"] for e in entries if e["label"] == label]
        split = _assign_splits(ids, rng, config.test_fraction, config.val_fraction_of_rest)
        for e in entries:
            if e["label"] == label:
                e["split"] = split[e["id"]]

    counts = {}
    for e in entries:
        key = f"{e['split']}/{e['label']}"
        counts[key] = counts.get(key, 0) + 1
    counts["total"] = len(entries)

    ratios = {
        "test": config.test_fraction,
        "val": (1 - config.test_fraction) * config.val_fraction_of_rest,
        "train": (1 - config.test_fraction) * (1 - config.val_fraction_of_rest),
    }
    manifest = DatasetManifest(version=MANIFEST_VERSION, seed=config.seed,
                               size=config.size, entries=entries,
                               split_ratios=ratios, counts=counts)
    manifest.save(out / "manifest.json")
    return manifest


def load_slice(entry: dict, data_root: str | Path, with_gt: bool = False) -> Slice:
    """Load a slice from disk per its manifest entry.

    ``with_gt`` must stay False on every training code path; reads are audited.
    """
    root = Path(data_root)
    pixels = load_image_png(root / entry["path"])
    lung = load_mask_png(root / entry["lung_path"])
    gt = None
    if with_gt:
        if "gt_path" not in entry:
            raise ValueError(f"slice {entry['id']} has no ground-truth mask")
        gt = load_mask_png(root / entry["gt_path"])
    return Slice(id=entry["id"], pixels=pixels, label=entry["label"],
                 lung_mask=lung, gt_mask=gt)


def twin_gt_mask(entry: dict, size: int) -> np.ndarray:
    """Ground truth of the fibrotic twin of a negative slice.

    Rebuilds the positive phantom that shares this entry's anatomy seed and
    returns its lesion mask.  Used only for evaluation-side ablations.
    """
    if entry["label"] != LABEL_NEG:
        raise ValueError("twin ground truth is defined for negative slices")
    sl = generate_phantom(entry["seed"], size, fibrotic=True, severity=0.6)
    return sl.gt_mask
