"""Latent-space fibrosis injection and Frechet-distance strength selection.

Editing adds the classifier direction (unit-normalized by default) scaled by
a strength alpha to the latent code, then decodes from the same inverted
noise endpoint as the unedited reconstruction, so the image pair differs only
through the latent change.  The strength is chosen by sweeping candidates and
minimizing the Frechet distance between feature statistics of the edited
images and of real fibrotic slices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae
from .classifier import ClassifierModel, latent_gradient
from .phantom import LABEL_NEG, Slice


@dataclass
class ManipulationConfig:
    alpha: float = 1.5
    normalize_gradient: bool = True
    substeps: int = 20

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


@dataclass
class FIDStats:
    mu: np.ndarray
    sigma: np.ndarray
    n: int


def inject(z: np.ndarray, model: ClassifierModel, alpha: float,
           normalize: bool = True) -> np.ndarray:
    """z' = z + alpha * direction; unit step direction when normalize is on."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    z = np.asarray(z, dtype=np.float64)
    g = latent_gradient(z, model)
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        return z.copy()
    step = g / norm if normalize else g
    return z + alpha * step


def generate_pair(slice_: Slice, alpha: float, ckpt: ae.DiffAECheckpoint,
                  model: ClassifierModel, substeps: int | None = None,
                  normalize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Reconstruction pair (original, fibrosis-injected) sharing one x_T."""
    if slice_.label != LABEL_NEG:
        raise ValueError("injection starts from a fibrosis-free slice")
    out = generate_pairs_batch(slice_.pixels[None], alpha, ckpt, model,
                               substeps=substeps, normalize=normalize)
    return out[0][0], out[1][0]


def generate_pairs_batch(x0: np.ndarray, alpha: float, ckpt: ae.DiffAECheckpoint,
                         model: ClassifierModel, substeps: int | None = None,
                         normalize: bool = True):
    """Vectorized generate_pair over a stack of negative slices (B, H, W)."""
    z = ae.encode_batch(x0, ckpt)
    x_T = ae.invert_batch(x0, z, ckpt, substeps)
    z_edit = np.stack([inject(zi, model, alpha, normalize) for zi in z])
    recon_orig = ae.sample_batch(x_T, z, ckpt, substeps)
    recon_fib = ae.sample_batch(x_T, z_edit, ckpt, substeps)
    return recon_orig, recon_fib


def fit_stats(features: list[np.ndarray] | np.ndarray) -> FIDStats:
    """Sample mean and (n-1)-denominator covariance, symmetrized."""
    X = np.stack([np.asarray(f, dtype=np.float64) for f in features])
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least 2 feature vectors of equal dimension")
    mu = X.mean(axis=0)
    sigma = np.cov(X, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    sigma = 0.5 * (sigma + sigma.T)
    return FIDStats(mu=mu, sigma=sigma, n=len(X))


def fid(a: FIDStats, b: FIDStats) -> float:
    """Frechet distance between the two fitted Gaussians.

    The trace of the covariance-product square root comes from an
    eigendecomposition of the symmetrized product with negative eigenvalues
    clipped at zero, which tolerates the rank-deficient covariances small
    sample sizes produce.
    """
    if a.mu.shape != b.mu.shape:
        raise ValueError("feature dimensions differ")
    diff = a.mu - b.mu
    prod = a.sigma @ b.sigma
    sym = 0.5 * (prod + prod.T)
    eigvals = np.linalg.eigvalsh(sym)
    tr_sqrt = float(np.sum(np.sqrt(np.clip(eigvals, 0.0, None))))
    val = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_sqrt)
    return max(val, 0.0)


def encoder_features(images: np.ndarray, ckpt: ae.DiffAECheckpoint) -> np.ndarray:
    """Default feature embedding for the Frechet distance: the encoder latent."""
    return ae.encode_batch(images, ckpt)


def select_alpha(candidates: list[float], negatives: list[Slice],
                 real_fibrotic: list[Slice], ckpt: ae.DiffAECheckpoint,
                 model: ClassifierModel, substeps: int | None = None,
                 feature_fn=None):
    """Sweep candidate strengths; return (argmin-distance alpha, sweep table).

    Ties break toward smaller alpha.  The table rows are (alpha, fid, n).
    """
    if len(candidates) < 2:
        raise ValueError("need at least 2 candidate strengths")
    if len(negatives) < 10 or len(real_fibrotic) < 10:
        raise ValueError("need at least 10 slices per set")
    feature_fn = feature_fn or (lambda imgs: encoder_features(imgs, ckpt))

    real_x = np.stack([s.pixels for s in real_fibrotic])
    real_stats = fit_stats(feature_fn(real_x))

    neg_x = np.stack([s.pixels for s in negatives])
    for s in negatives:
        if s.label != LABEL_NEG:
            raise ValueError("negatives set contains a positive slice")
    z = ae.encode_batch(neg_x, ckpt)
    x_T = ae.invert_batch(neg_x, z, ckpt, substeps)

    table = []
    for alpha in candidates:
        z_edit = np.stack([inject(zi, model, float(alpha)) for zi in z])
        fakes = ae.sample_batch(x_T, z_edit, ckpt, substeps)
        d = fid(fit_stats(feature_fn(np.clip(fakes, -1.0, 1.0))), real_stats)
        table.append((float(alpha), d, len(negatives)))

    best = min(table, key=lambda row: (row[1], row[0]))
    return best[0], table
