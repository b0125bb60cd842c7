from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

STD_FLOOR = 1e-8


def zscore_normalize(pixels: np.ndarray) -> np.ndarray:
    """Per-slice z-score using the population standard deviation.

    Constant images (std below ``STD_FLOOR``) map to all zeros.
    """
    pixels = np.asarray(pixels)
    if pixels.size == 0:
        raise ValueError("cannot normalize an empty array")
    work = pixels.astype(np.float64)
    mean = work.mean()
    std = work.std()
    if std < STD_FLOOR:
        return np.zeros_like(pixels, dtype=np.float32 if pixels.dtype == np.float32 else np.float64)
    out = (work - mean) / std
    return out.astype(pixels.dtype) if np.issubdtype(pixels.dtype, np.floating) else out


def center_crop(pixels: np.ndarray, size: int, center: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Crop a ``size`` x ``size`` window centred on ``center``.

    The window spans rows ``center[0] - size // 2`` to ``center[0] - size // 2 + size - 1``.
    Windows reaching past the image border are filled with the image minimum.
    """
    if size <= 0:
        raise ValueError(f"crop size must be positive, got {size}")
    pixels = np.asarray(pixels)
    h, w = pixels.shape
    if center is None:
        center = (h // 2, w // 2)
    top = int(center[0]) - size // 2
    left = int(center[1]) - size // 2
    pad_top = max(0, -top)
    pad_left = max(0, -left)
    pad_bottom = max(0, top + size - h)
    pad_right = max(0, left + size - w)
    if pad_top or pad_left or pad_bottom or pad_right:
        pixels = np.pad(
            pixels,
            ((pad_top, pad_bottom), (pad_left, pad_right)),
            mode="constant",
            constant_values=pixels.min(),
        )
        top += pad_top
        left += pad_left
    return pixels[top : top + size, left : left + size].copy()


def heart_center(pixels: np.ndarray, label: Optional[np.ndarray] = None) -> Tuple[int, int]:
    """Crop centre for external data: foreground-label centroid, else image centre."""
    if label is not None and np.any(label > 0):
        rows, cols = np.nonzero(label > 0)
        return int(round(rows.mean())), int(round(cols.mean()))
    h, w = pixels.shape
    return h // 2, w // 2


def preprocess_slice(
    pixels: np.ndarray,
    size: int,
    label: Optional[np.ndarray] = None,
    center: Optional[Tuple[int, int]] = None,
):
    """Crop around the heart and z-score. Returns ``(image, label)``; label may be None."""
    if center is None:
        center = heart_center(pixels, label)
    image = zscore_normalize(center_crop(pixels.astype(np.float32), size, center))
    if label is not None:
        # pad value for labels is background, which is the minimum class
        label = center_crop(label, size, center)
    return image, label
