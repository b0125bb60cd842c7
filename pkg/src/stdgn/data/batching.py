from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, List

import numpy as np

from stdgn.data.types import DomainDataset


@dataclass
class Batch:
    images: np.ndarray  # (B, 1, H, W) float32
    labels: np.ndarray  # (B, H, W) int64, zeros where unlabeled
    label_mask: np.ndarray  # (B,) bool
    domains: np.ndarray  # (B,) int64
    positions: np.ndarray  # (B,) float32
    indices: np.ndarray  # (B,) record indices into the dataset

    def __len__(self):
        return len(self.indices)


class StackedDataset:
    """Dense arrays over all records, so batches are plain fancy indexing."""

    def __init__(self, dataset: DomainDataset):
        if len(dataset) == 0:
            raise ValueError("dataset is empty")
        self.dataset = dataset
        recs = dataset.records
        self.images = np.stack([r.image.pixels for r in recs]).astype(np.float32)[:, None]
        h, w = self.images.shape[-2:]
        self.labels = np.stack(
            [
                r.label.classes.astype(np.int64) if r.label.is_labeled else np.zeros((h, w), np.int64)
                for r in recs
            ]
        )
        self.label_mask = np.array([r.label.is_labeled for r in recs], dtype=bool)
        self.domains = np.array([r.domain_index for r in recs], dtype=np.int64)
        self.positions = np.array([r.position for r in recs], dtype=np.float32)

    def __len__(self):
        return len(self.images)

    def batch(self, idx: np.ndarray) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        return Batch(
            self.images[idx],
            self.labels[idx],
            self.label_mask[idx],
            self.domains[idx],
            self.positions[idx],
            idx,
        )


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Record permutation for one epoch; depends only on (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def partition(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def make_batches(dataset, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """One epoch of batches in a permutation drawn from ``rng``.

    The last batch is short when the record count is not a multiple of
    ``batch_size``.
    """
    stacked = dataset if isinstance(dataset, StackedDataset) else StackedDataset(dataset)
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    for idx in partition(rng.permutation(len(stacked)), batch_size):
        yield stacked.batch(idx)
