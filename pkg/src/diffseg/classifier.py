"""One-layer latent classifier trained on image-level weak labels.

Logistic regression on latent vectors z: score = sigmoid(w.z + b).  The logit
gradient with respect to z is just w, which is exactly the direction the
manipulation step follows.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .io_utils import read_json, write_json


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def f1_score(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 = 2PR/(P+R); 0 when precision+recall is 0; 1 on perfect predictions."""
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    tp = float(np.sum(y_true & y_pred))
    fp = float(np.sum(~y_true & y_pred))
    fn = float(np.sum(y_true & ~y_pred))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 1.0 if tp == fp == fn == 0 else 0.0
    return 2 * tp / denom


@dataclass
class ClassifierModel:
    weights: np.ndarray  # (d,)
    bias: float
    f1: float = 0.0
    threshold: float = 0.5
    seed: int = 0

    def save(self, path: str | Path) -> None:
        write_json(path, {
            "weights": self.weights.tolist(),
            "bias": self.bias,
            "d": len(self.weights),
            "f1": self.f1,
            "threshold": self.threshold,
            "seed": self.seed,
        })

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        d = read_json(path)
        return cls(weights=np.asarray(d["weights"], dtype=np.float64),
                   bias=float(d["bias"]), f1=float(d["f1"]),
                   threshold=float(d["threshold"]), seed=int(d["seed"]))


@dataclass
class ClassifierConfig:
    epochs: int = 400
    lr: float = 0.05
    weight_decay: float = 1e-4
    val_fraction: float = 0.2  # 4:1 train:val split
    seed: int = 0


def _check_dim(z: np.ndarray, model: ClassifierModel) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != len(model.weights):
        raise ValueError(f"latent dimension {z.shape[-1]} != model dimension {len(model.weights)}")
    return z


def predict_score(z: np.ndarray, model: ClassifierModel):
    """Fibrosis score sigmoid(w.z + b); supports (d,) or (n, d) input."""
    z = _check_dim(z, model)
    return sigmoid(z @ model.weights + model.bias)


def latent_gradient(z: np.ndarray, model: ClassifierModel) -> np.ndarray:
    """Gradient of the positive-class logit w.r.t. z: equals w for this model."""
    _check_dim(z, model)
    return model.weights.copy()


def train_classifier(latents: list[tuple[np.ndarray, int]],
                     config: ClassifierConfig | None = None) -> ClassifierModel:
    """Full-batch Adam on binary cross-entropy; keeps the epoch with the lowest
    validation cross-entropy (F1 saturates immediately on separable data, so
    selecting on it would return a barely-trained weight vector; the loss keeps
    shrinking the margin and stabilizes the gradient direction)."""
    config = config or ClassifierConfig()
    Z = np.stack([np.asarray(z, dtype=np.float64) for z, _ in latents])
    y = np.asarray([int(lbl) for _, lbl in latents], dtype=np.float64)
    if len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")

    rng = np.random.default_rng(config.seed)
    order = rng.permutation(len(Z))
    n_val = max(1, int(round(config.val_fraction * len(Z))))
    val_idx, tr_idx = order[:n_val], order[n_val:]
    if len(np.unique(y[tr_idx])) < 2:
        raise ValueError("train split lost a class; provide more data")

    # standardize on train statistics, fold back into (w, b) at the end
    mu = Z[tr_idx].mean(axis=0)
    sd = Z[tr_idx].std(axis=0) + 1e-8
    Zs = (Z - mu) / sd

    d = Z.shape[1]
    w = np.zeros(d)
    b = 0.0
    m = np.zeros(d + 1)
    v = np.zeros(d + 1)
    best = (np.inf, 0.0, w.copy(), b)
    for epoch in range(1, config.epochs + 1):
        p = sigmoid(Zs[tr_idx] @ w + b)
        err = p - y[tr_idx]
        gw = Zs[tr_idx].T @ err / len(tr_idx) + config.weight_decay * w
        gb = float(err.mean())
        g = np.concatenate([gw, [gb]])
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mh = m / (1 - 0.9 ** epoch)
        vh = v / (1 - 0.999 ** epoch)
        upd = config.lr * mh / (np.sqrt(vh) + 1e-8)
        w -= upd[:-1]
        b -= float(upd[-1])

        val_p = sigmoid(Zs[val_idx] @ w + b)
        eps = 1e-12
        val_loss = float(-np.mean(y[val_idx] * np.log(val_p + eps)
                                  + (1 - y[val_idx]) * np.log(1 - val_p + eps)))
        if val_loss < best[0]:
            best = (val_loss, f1_score(y[val_idx], val_p > 0.5), w.copy(), b)

    _, f1, w, b = best
    # undo standardization: sigmoid(w.(z-mu)/sd + b) = sigmoid((w/sd).z + b - w.mu/sd)
    w_raw = w / sd
    b_raw = b - float((w / sd) @ mu)
    return ClassifierModel(weights=w_raw, bias=b_raw, f1=float(f1), seed=config.seed)
