"""Modality codes: one-hot domain vectors, their differences, and the
conditioned generator input."""

from __future__ import annotations

from typing import Optional

import numpy as np


def encode_modality(domain_index: int, num_modalities: int) -> np.ndarray:
    if not 0 <= domain_index < num_modalities:
        raise ValueError(f"domain index {domain_index} outside [0, {num_modalities})")
    code = np.zeros(num_modalities, dtype=np.float32)
    code[domain_index] = 1.0
    return code


def sample_target_modality(
    rng: np.random.Generator,
    num_modalities: int,
    exclude: Optional[int] = None,
    soft: bool = False,
    concentration: float = 1.0,
) -> np.ndarray:
    """Draw a target modality vector.

    Uniform one-hot over all ``num_modalities`` slots, including the last
    (fictitious) one. With ``soft=True`` the code is a Dirichlet sample
    instead; ``exclude`` then zeroes that slot and renormalizes.
    """
    if num_modalities < 2:
        raise ValueError("need at least two modality slots")
    choices = np.arange(num_modalities)
    if exclude is not None:
        choices = choices[choices != exclude]
    if soft:
        weights = rng.dirichlet(np.full(len(choices), concentration))
        code = np.zeros(num_modalities, dtype=np.float32)
        code[choices] = weights
        return code
    idx = int(choices[rng.integers(len(choices))])
    return encode_modality(idx, num_modalities)


def modality_difference(source: np.ndarray, target: np.ndarray) -> np.ndarray:
    source = np.asarray(source)
    target = np.asarray(target)
    if source.shape != target.shape:
        raise ValueError(f"modality length mismatch: {source.shape} vs {target.shape}")
    return (target - source).astype(np.float32)


def is_one_hot(code: np.ndarray) -> bool:
    code = np.asarray(code)
    return bool(np.all((code == 0) | (code == 1)) and code.sum() == 1)


def broadcast_concat(image: np.ndarray, diff: np.ndarray) -> np.ndarray:
    """Stack the image with one constant plane per entry of ``diff``.

    Returns an array of shape ``(1 + K, H, W)``.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim == 3 and image.shape[0] == 1:
        image = image[0]
    if image.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {image.shape}")
    diff = np.asarray(diff, dtype=np.float32)
    planes = np.broadcast_to(diff[:, None, None], (diff.shape[0],) + image.shape)
    return np.concatenate([image[None], planes], axis=0)
