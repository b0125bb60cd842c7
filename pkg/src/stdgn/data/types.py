from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

NUM_CLASSES = 4
CLASS_NAMES = ("background", "LV", "Myo", "RV")
STRUCTURES = {1: "LV", 2: "Myo", 3: "RV"}


class Phase(str, Enum):
    ED = "ED"
    ES = "ES"


def slice_position(slice_index: int, num_slices: int) -> float:
    """Signed distance of a slice to the stack centre, scaled to [-1, 1]."""
    if num_slices <= 1:
        return 0.0
    half = (num_slices - 1) / 2.0
    return (slice_index - half) / half


@dataclass
class ImageSlice:
    pixels: np.ndarray
    subject_id: str
    slice_index: int
    num_slices: int
    phase: Phase = Phase.ED

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ValueError(f"ImageSlice pixels must be 2D, got shape {self.pixels.shape}")
        if self.num_slices < 1 or not 0 <= self.slice_index < self.num_slices:
            raise ValueError(
                f"slice_index {self.slice_index} out of range for {self.num_slices} slices"
            )
        self.phase = Phase(self.phase)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape


@dataclass
class LabelMap:
    """Per-pixel class map. ``classes`` is None for records of an unlabeled domain."""

    classes: Optional[np.ndarray]
    is_labeled: bool = True

    def __post_init__(self):
        if self.is_labeled != (self.classes is not None):
            raise ValueError("is_labeled must be True exactly when classes are present")
        if self.classes is not None:
            bad = (self.classes < 0) | (self.classes >= NUM_CLASSES)
            if np.any(bad):
                raise ValueError(f"label map contains class index outside 0..{NUM_CLASSES - 1}")

    @classmethod
    def unlabeled(cls) -> "LabelMap":
        return cls(classes=None, is_labeled=False)


@dataclass
class SliceRecord:
    image: ImageSlice
    label: LabelMap
    domain_index: int
    center_id: str
    vendor_id: str

    @property
    def position(self) -> float:
        return slice_position(self.image.slice_index, self.image.num_slices)

    @property
    def record_id(self) -> str:
        return f"{self.image.subject_id}_{self.image.slice_index}"


@dataclass
class DomainInfo:
    vendor_id: str
    labeled: bool


@dataclass
class DomainDataset:
    records: List[SliceRecord]
    domain_registry: Dict[int, DomainInfo] = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    def validate(self):
        n = len(self.domain_registry)
        if sorted(self.domain_registry) != list(range(n)):
            raise ValueError(f"domain indices must be dense in [0, {n - 1}]")
        for rec in self.records:
            info = self.domain_registry.get(rec.domain_index)
            if info is None:
                raise ValueError(f"record {rec.record_id} has unregistered domain {rec.domain_index}")
            if not info.labeled and rec.label.is_labeled:
                raise ValueError(
                    f"record {rec.record_id} carries labels but domain {rec.domain_index} is unlabeled"
                )

    @property
    def num_domains(self) -> int:
        return len(self.domain_registry)

    @property
    def num_modalities(self) -> int:
        # one reserved slot past the real domains for the fictitious target
        return self.num_domains + 1

    def __len__(self):
        return len(self.records)

    def subset(self, predicate) -> "DomainDataset":
        return DomainDataset([r for r in self.records if predicate(r)], dict(self.domain_registry))

    def subjects(self) -> Dict[Tuple[str, Phase], List[SliceRecord]]:
        """Group records into per-(subject, phase) stacks ordered by slice index."""
        groups: Dict[Tuple[str, Phase], List[SliceRecord]] = {}
        for rec in self.records:
            groups.setdefault((rec.image.subject_id, rec.image.phase), []).append(rec)
        for stack in groups.values():
            stack.sort(key=lambda r: r.image.slice_index)
        return groups

    def equals(self, other: "DomainDataset") -> bool:
        """Bit-exact comparison of records and registry."""
        if self.domain_registry != other.domain_registry or len(self) != len(other):
            return False
        for a, b in zip(self.records, other.records):
            if (
                a.domain_index != b.domain_index
                or a.center_id != b.center_id
                or a.vendor_id != b.vendor_id
                or a.image.subject_id != b.image.subject_id
                or a.image.slice_index != b.image.slice_index
                or a.image.num_slices != b.image.num_slices
                or a.image.phase != b.image.phase
                or a.label.is_labeled != b.label.is_labeled
            ):
                return False
            if a.image.pixels.dtype != b.image.pixels.dtype:
                return False
            if a.image.pixels.tobytes() != b.image.pixels.tobytes():
                return False
            if a.label.is_labeled and a.label.classes.tobytes() != b.label.classes.tobytes():
                return False
        return True
