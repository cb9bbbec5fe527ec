"""File I/O helpers: 16-bit image PNGs, 8-bit mask PNGs, checksums.

Every read goes through :func:`audited_read` so the pipeline can record which
files each stage touched.  The supervision audit relies on this log to prove
that no training stage ever opened a ground-truth mask file.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from PIL import Image

# Active read log (list of str paths) installed by the pipeline, or None.
_read_log: list[str] | None = None


@contextmanager
def record_reads(log: list[str]):
    """Route all audited file reads into ``log`` for the duration."""
    global _read_log
    prev = _read_log
    _read_log = log
    try:
        yield log
    finally:
        _read_log = prev


def _note_read(path: Path) -> None:
    if _read_log is not None:
        _read_log.append(str(path))


def audited_read(path: str | Path) -> bytes:
    path = Path(path)
    _note_read(path)
    return path.read_bytes()


def save_image_png(path: str | Path, pixels: np.ndarray) -> None:
    """Write a [-1, 1] float image as 16-bit grayscale PNG (linear mapping)."""
    arr = np.asarray(pixels, dtype=np.float64)
    if arr.min() < -1.0 - 1e-9 or arr.max() > 1.0 + 1e-9:
        raise ValueError("pixels outside [-1, 1]; clip before saving")
    q = np.round((np.clip(arr, -1.0, 1.0) + 1.0) / 2.0 * 65535.0).astype(np.uint16)
    Image.fromarray(q).save(Path(path))


def load_image_png(path: str | Path) -> np.ndarray:
    """Read a 16-bit grayscale PNG back to float64 in [-1, 1]."""
    data = audited_read(path)
    import io

    img = Image.open(io.BytesIO(data))
    q = np.asarray(img, dtype=np.float64)
    return q / 65535.0 * 2.0 - 1.0


def save_mask_png(path: str | Path, mask: np.ndarray) -> None:
    """Write a binary mask as 8-bit PNG with values 0/255."""
    m = (np.asarray(mask) != 0).astype(np.uint8) * 255
    Image.fromarray(m, mode="L").save(Path(path))


def load_mask_png(path: str | Path) -> np.ndarray:
    data = audited_read(path)
    import io

    img = Image.open(io.BytesIO(data))
    return (np.asarray(img) > 127).astype(np.uint8)


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def sha256_json(obj) -> str:
    """Stable hash of a JSON-serializable object (sorted keys)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))


def read_json(path: str | Path):
    return json.loads(audited_read(path).decode())
