"""U-Net training on pseudo-mask pairs, cross validation, Dice evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .maskgen import PseudoMask
from .nets import SegUNet
from .phantom import Slice


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A.B| / (|A|+|B|); 1.0 when both masks are empty."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    sa, sb = int(a.sum()), int(b.sum())
    if sa + sb == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / (sa + sb)


@dataclass
class SegConfig:
    base_channels: int = 16
    epochs: int = 30
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    test_fraction: float = 0.2
    threshold: float = 0.5
    # lesion-intensity augmentation: with probability aug_prob a training
    # image is brightened inside its pseudo-mask region by U(0, aug_gain),
    # so the net learns the mask concept across the whole contrast range
    # (generated lesions are fainter than real ones)
    aug_prob: float = 0.5
    aug_gain: float = 1.2


@dataclass
class SegModel:
    net: SegUNet
    config: SegConfig
    fold_index: int
    val_dice: float
    fold_ids: dict = field(default_factory=dict)  # {"train": [...], "val": [...]}

    def save(self, path: str | Path) -> None:
        header = {"config": asdict(self.config), "fold_index": self.fold_index,
                  "val_dice": self.val_dice, "fold_ids": self.fold_ids}
        arrays = {"__header_json__": np.frombuffer(
            json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
        for k, v in self.net.state_dict().items():
            arrays[f"net.{k}"] = v.detach().cpu().numpy()
        np.savez(Path(path), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "SegModel":
        with np.load(Path(path)) as npz:
            header = json.loads(bytes(npz["__header_json__"]).decode())
            cfg = SegConfig(**header["config"])
            net = SegUNet(base=cfg.base_channels)
            net.load_state_dict({k[4:]: torch.from_numpy(npz[k].copy())
                                 for k in npz.files if k.startswith("net.")})
        net.eval()
        return cls(net=net, config=cfg, fold_index=header["fold_index"],
                   val_dice=header["val_dice"], fold_ids=header["fold_ids"])


def make_splits(n: int, folds: int, seed: int, test_fraction: float = 0.2):
    """Reserve a test split, then partition the rest into disjoint folds.

    Returns (test_idx, fold_val_idx list); fold i trains on the union of the
    other folds' indices.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    test_idx = np.sort(order[:n_test])
    rest = order[n_test:]
    fold_val = [np.sort(rest[i::folds]) for i in range(folds)]
    return test_idx, fold_val


@dataclass
class EvalReport:
    per_slice: list[dict]  # {"id", "dice"}
    mean: float
    median: float
    q25: float
    q75: float
    n: int

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2))


def _soft_dice_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    p = torch.sigmoid(logits)
    num = 2 * (p * target).sum(dim=(1, 2, 3)) + 1.0
    den = p.sum(dim=(1, 2, 3)) + target.sum(dim=(1, 2, 3)) + 1.0
    return (1 - num / den).mean()


def _predict_batch(net: SegUNet, images: np.ndarray, threshold: float) -> np.ndarray:
    net.eval()
    with torch.no_grad():
        x = torch.from_numpy(np.asarray(images, dtype=np.float32))[:, None]
        probs = torch.sigmoid(net(x))[:, 0].numpy()
    return (probs > threshold).astype(np.uint8)


def predict_mask(image: np.ndarray, model: SegModel, threshold: float = 0.5) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("expected a single 2-D slice")
    return _predict_batch(model.net, image[None], threshold)[0]


def train_unet(pairs: list[tuple[np.ndarray, PseudoMask]], folds: int = 5,
               config: SegConfig | None = None) -> list[SegModel]:
    """Cross-validated U-Net training on (image, pseudo mask) pairs.

    20% of pairs are reserved as an internal test split and never touched;
    the remainder is partitioned into `folds` validation folds (4:1
    train:val when folds = 5).  Each fold returns its best-validation-Dice
    parameters.  BCE + soft-Dice loss.
    """
    config = config or SegConfig()
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if len(pairs) < 2 * folds:
        raise ValueError("too few pairs for the requested folds")

    images = np.stack([np.asarray(img, dtype=np.float32) for img, _ in pairs])
    masks = np.stack([(pm.mask != 0).astype(np.float32) for _, pm in pairs])
    ids = [pm.source_slice_id for _, pm in pairs]

    test_idx, fold_val = make_splits(len(pairs), folds, config.seed, config.test_fraction)
    test_set = set(test_idx.tolist())
    models = []
    for fold, val_idx in enumerate(fold_val):
        val_set = set(val_idx.tolist())
        tr_idx = np.array([i for i in range(len(pairs))
                           if i not in test_set and i not in val_set], dtype=int)

        torch.manual_seed(config.seed * 1000 + fold)
        rng = np.random.default_rng(config.seed * 1000 + fold)
        net = SegUNet(base=config.base_channels)
        opt = torch.optim.Adam(net.parameters(), lr=config.lr)
        bce = torch.nn.BCEWithLogitsLoss()

        best = (-1.0, None)
        for epoch in range(config.epochs):
            net.train()
            order = rng.permutation(len(tr_idx))
            for i in range(0, len(order), config.batch_size):
                idx = tr_idx[order[i:i + config.batch_size]]
                x = torch.from_numpy(images[idx])[:, None]
                y = torch.from_numpy(masks[idx])[:, None]
                if config.aug_prob > 0:
                    gain = (rng.uniform(0, config.aug_gain, size=len(idx))
                            * (rng.uniform(size=len(idx)) < config.aug_prob))
                    x = torch.clamp(
                        x + torch.from_numpy(gain.astype(np.float32)).view(-1, 1, 1, 1) * y,
                        -1.0, 1.0)
                logits = net(x)
                loss = bce(logits, y) + _soft_dice_loss(logits, y)
                opt.zero_grad()
                loss.backward()
                opt.step()
            preds = _predict_batch(net, images[val_idx], config.threshold)
            vd = float(np.mean([dice(preds[j], masks[val_idx[j]])
                                for j in range(len(val_idx))]))
            if vd > best[0]:
                best = (vd, {k: v.detach().clone() for k, v in net.state_dict().items()})

        net.load_state_dict(best[1])
        net.eval()
        models.append(SegModel(
            net=net, config=config, fold_index=fold, val_dice=best[0],
            fold_ids={"train": [ids[i] for i in tr_idx],
                      "val": [ids[i] for i in val_idx],
                      "test": [ids[i] for i in test_idx]}))
    return models


def evaluate(models: list[SegModel], test_slices: list[Slice],
             threshold: float = 0.5) -> EvalReport:
    """Per-slice Dice against ground truth, ensembling the fold models.

    The fold models' sigmoid outputs are averaged before thresholding, the
    usual way to use a cross-validated ensemble at test time.
    """
    if not models:
        raise ValueError("no models to evaluate")
    for s in test_slices:
        if s.gt_mask is None:
            raise ValueError(f"test slice {s.id} is missing its ground-truth mask")
    images = np.stack([s.pixels for s in test_slices]).astype(np.float32)
    x = torch.from_numpy(images)[:, None]
    probs = []
    with torch.no_grad():
        for m in models:
            m.net.eval()
            probs.append(torch.sigmoid(m.net(x))[:, 0].numpy())
    preds = (np.mean(probs, axis=0) > threshold).astype(np.uint8)
    per = [{"id": s.id, "dice": dice(preds[i], s.gt_mask)}
           for i, s in enumerate(test_slices)]
    scores = np.array([p["dice"] for p in per])
    return EvalReport(per_slice=per,
                      mean=float(scores.mean()),
                      median=float(np.percentile(scores, 50)),
                      q25=float(np.percentile(scores, 25)),
                      q75=float(np.percentile(scores, 75)),
                      n=len(per))
