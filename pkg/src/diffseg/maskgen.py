"""Pseudo-mask refinement: difference map to clean binary lesion mask.

Stage order: 5x5 Gaussian blur, lung masking, Otsu thresholding, morphological
opening, keep the five largest connected components, vessel filter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EIGHT_CONN = np.ones((3, 3), dtype=bool)


class DegenerateInputError(ValueError):
    """Raised when thresholding is asked to split a constant map."""


@dataclass
class MaskgenConfig:
    blur_sigma: float = 1.0
    open_radius: int = 1
    keep_k: int = 5
    vessel_elongation: float = 4.0
    vessel_minor_extent: float = 6.0


@dataclass
class PseudoMask:
    mask: np.ndarray  # H x W uint8
    source_slice_id: str
    component_count: int


def difference_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    return np.abs(a - b)


def _gaussian_kernel5(sigma: float) -> np.ndarray:
    ax = np.arange(-2, 3, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def gaussian_blur5(values: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Convolve with a normalized 5x5 Gaussian kernel, reflect-padded."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    return ndimage.convolve(np.asarray(values, dtype=np.float64),
                            _gaussian_kernel5(sigma), mode="reflect")


def apply_lung_mask(values: np.ndarray, lung: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    lung = np.asarray(lung)
    if values.shape != lung.shape:
        raise ValueError("shape mismatch")
    return values * (lung != 0)


def otsu_threshold(values: np.ndarray) -> tuple[float, np.ndarray]:
    """Otsu threshold over 256 bins spanning [min, max]; binary = value > thr.

    The returned threshold is the bin boundary maximizing between-class
    variance, ties broken toward the lower boundary.
    """
    values = np.asarray(values, dtype=np.float64)
    vmin, vmax = float(values.min()), float(values.max())
    if vmin == vmax:
        raise DegenerateInputError("constant map has no Otsu threshold")
    counts, edges = np.histogram(values, bins=256, range=(vmin, vmax))
    # Between-class variance for a split after bin k is a fixed positive
    # multiple of (s_k*N - S*n_k)^2 / (n_k*(N-n_k)) with n_k the cumulative
    # count and s_k the cumulative first moment in units of (2*bin_index+1).
    # All quantities are integers, so the maximization (ties toward the lower
    # boundary) is exact.
    weights = [2 * i + 1 for i in range(256)]
    N = int(counts.sum())
    S = int(sum(int(c) * w for c, w in zip(counts, weights)))
    best_k = None
    best_num2, best_den = -1, 1
    n_k, s_k = 0, 0
    for k in range(255):
        n_k += int(counts[k])
        s_k += int(counts[k]) * weights[k]
        if n_k == 0 or n_k == N:
            continue
        num = s_k * N - S * n_k
        num2, den = num * num, n_k * (N - n_k)
        if num2 * best_den > best_num2 * den:  # strict: keep lower k on ties
            best_k, best_num2, best_den = k, num2, den
    threshold = float(edges[best_k + 1])
    return threshold, (values > threshold).astype(np.uint8)


def disk(radius: int) -> np.ndarray:
    """Discrete disk structuring element; radius 1 is the full 3x3 block."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    ax = np.arange(-radius, radius + 1)
    xx, yy = np.meshgrid(ax, ax)
    return (xx ** 2 + yy ** 2) <= (radius + 0.5) ** 2


def morph_open(binary: np.ndarray, radius: int = 1) -> np.ndarray:
    """Erosion then dilation with a disk element (background beyond borders)."""
    se = disk(radius)
    b = np.asarray(binary) != 0
    er = ndimage.binary_erosion(b, structure=se, border_value=0)
    return ndimage.binary_dilation(er, structure=se, border_value=0).astype(np.uint8)


def keep_largest_components(binary: np.ndarray, k: int = 5) -> tuple[np.ndarray, int]:
    """Keep the k largest 8-connected components (ties: smaller label first)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    labels, n = ndimage.label(np.asarray(binary) != 0, structure=EIGHT_CONN)
    if n == 0:
        return np.zeros_like(labels, dtype=np.uint8), 0
    areas = np.bincount(labels.ravel())[1:]
    order = sorted(range(1, n + 1), key=lambda lbl: (-areas[lbl - 1], lbl))
    keep = set(order[:k])
    out = np.isin(labels, list(keep)).astype(np.uint8)
    return out, len(keep)


def _component_shape(coords: np.ndarray) -> tuple[float, float]:
    """(elongation, minor-axis extent) from second central moments of pixels."""
    c = coords - coords.mean(axis=0)
    cov = c.T @ c / len(c)
    eigvals, eigvecs = np.linalg.eigh(cov)
    lam2, lam1 = float(eigvals[0]), float(eigvals[1])  # lam1 >= lam2
    if lam2 < 1e-12:
        elong = np.inf
    else:
        elong = np.sqrt(lam1 / lam2)
    minor_dir = eigvecs[:, 0]
    proj = c @ minor_dir
    extent = float(proj.max() - proj.min()) + 1.0
    return elong, extent


def vessel_filter(binary: np.ndarray, elongation: float = 4.0,
                  minor_extent: float = 6.0) -> np.ndarray:
    """Drop elongated thin components (vessel-like); keep everything else."""
    labels, n = ndimage.label(np.asarray(binary) != 0, structure=EIGHT_CONN)
    out = np.zeros_like(labels, dtype=np.uint8)
    for lbl in range(1, n + 1):
        coords = np.argwhere(labels == lbl).astype(np.float64)
        el, ext = _component_shape(coords)
        if el >= elongation and ext <= minor_extent:
            continue
        out[labels == lbl] = 1
    return out


def refine(diff: np.ndarray, lung: np.ndarray, source_slice_id: str = "",
           config: MaskgenConfig | None = None) -> PseudoMask:
    """Full refinement chain; constant post-masking maps yield an empty mask."""
    config = config or MaskgenConfig()
    diff = np.asarray(diff, dtype=np.float64)
    if diff.shape != np.asarray(lung).shape:
        raise ValueError("shape mismatch")
    m = gaussian_blur5(diff, config.blur_sigma)
    m = apply_lung_mask(m, lung)
    try:
        _, binary = otsu_threshold(m)
    except DegenerateInputError:
        return PseudoMask(mask=np.zeros(diff.shape, dtype=np.uint8),
                          source_slice_id=source_slice_id, component_count=0)
    binary = morph_open(binary, config.open_radius)
    binary, _ = keep_largest_components(binary, config.keep_k)
    binary = vessel_filter(binary, config.vessel_elongation, config.vessel_minor_extent)
    _, count = keep_largest_components(binary, config.keep_k) if binary.any() else (binary, 0)
    return PseudoMask(mask=binary.astype(np.uint8), source_slice_id=source_slice_id,
                      component_count=count)
