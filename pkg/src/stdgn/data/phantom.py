"""Synthetic multi-vendor cardiac short-axis phantoms.

Each subject is a stack of slices with an LV disk, a myocardial annulus and
an RV crescent; all three shrink from base to apex so slice position can be
read off the anatomy. Every vendor applies its own intensity style, and every
centre perturbs its vendor's style slightly. The default layout follows the
vendor/centre split used for the generalization experiment:

    train:  A/1 labeled, B/2 + B/3 labeled, C/4 unlabeled
    val:    A/1, B/2, B/3 (new subjects, labeled)
    test:   A/1, A/6, B/2, B/3, C/4, D/5 (new subjects, labeled)

Vendor D and centre 6 never appear in training.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from stdgn.data.preprocess import center_crop, zscore_normalize
from stdgn.data.types import (
    DomainDataset,
    DomainInfo,
    ImageSlice,
    LabelMap,
    Phase,
    SliceRecord,
    slice_position,
)

# base-template intensities before styling
_AIR, _TISSUE, _LV, _MYO, _RV = 0.02, 0.25, 0.9, 0.42, 0.85


@dataclass(frozen=True)
class DomainStyle:
    gamma: float = 1.0
    contrast: float = 1.0
    bias_field_amplitude: float = 0.0
    noise_std: float = 0.0
    # additive offsets for background, LV, Myo, RV
    intensity_offsets: Tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def validate(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if not self.contrast > 0:
            raise ValueError(f"contrast must be > 0, got {self.contrast}")
        if self.bias_field_amplitude < 0:
            raise ValueError("bias_field_amplitude must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if len(self.intensity_offsets) != 4:
            raise ValueError("intensity_offsets needs one value per class (4)")


DEFAULT_STYLES: Dict[str, DomainStyle] = {
    "A": DomainStyle(1.0, 1.0, 0.05, 0.03, (0.0, 0.0, 0.0, 0.0)),
    "B": DomainStyle(0.6, 1.1, 0.10, 0.04, (0.0, -0.05, 0.08, -0.05)),
    "C": DomainStyle(1.8, 0.9, 0.15, 0.06, (0.05, -0.15, 0.12, -0.2)),
    "D": DomainStyle(0.4, 0.9, 0.20, 0.07, (0.1, 0.0, 0.15, -0.05)),
}


@dataclass(frozen=True)
class SiteSpec:
    vendor_id: str
    center_id: str
    labeled: bool
    num_subjects: int


def _default_layout() -> Dict[str, Tuple[SiteSpec, ...]]:
    return {
        "train": (
            SiteSpec("A", "1", True, 6),
            SiteSpec("B", "2", True, 4),
            SiteSpec("B", "3", True, 2),
            SiteSpec("C", "4", False, 6),
        ),
        "val": (
            SiteSpec("A", "1", True, 2),
            SiteSpec("B", "2", True, 1),
            SiteSpec("B", "3", True, 1),
        ),
        "test": (
            SiteSpec("A", "1", True, 2),
            SiteSpec("A", "6", True, 2),
            SiteSpec("B", "2", True, 2),
            SiteSpec("B", "3", True, 2),
            SiteSpec("C", "4", True, 4),
            SiteSpec("D", "5", True, 4),
        ),
    }


@dataclass
class PhantomParams:
    seed: int = 0
    image_size: int = 64
    num_slices: int = 8
    styles: Dict[str, DomainStyle] = field(default_factory=lambda: dict(DEFAULT_STYLES))
    layout: Dict[str, Tuple[SiteSpec, ...]] = field(default_factory=_default_layout)
    center_jitter: float = 0.08
    # every subject number gets the same anatomy regardless of site
    shared_anatomy: bool = False
    # z-score each slice; off only for inspecting raw styled intensities
    normalize: bool = True
    phases: Tuple[Phase, ...] = (Phase.ED, Phase.ES)

    def validate(self):
        if self.image_size < 16:
            raise ValueError("image_size must be at least 16")
        if self.num_slices < 1:
            raise ValueError("num_slices must be >= 1")
        for style in self.styles.values():
            style.validate()
        for split, sites in self.layout.items():
            for site in sites:
                if site.vendor_id not in self.styles:
                    raise ValueError(f"split {split!r}: no style for vendor {site.vendor_id!r}")
                if site.num_subjects < 0:
                    raise ValueError("num_subjects must be >= 0")


def _key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def center_style(base: DomainStyle, seed: int, center_id: str, jitter: float) -> DomainStyle:
    """Deterministic per-centre perturbation of a vendor style."""
    if jitter == 0:
        return base
    rng = np.random.default_rng([seed, _key("center:" + center_id)])
    u = rng.uniform(-1.0, 1.0, size=3 + 4)
    return replace(
        base,
        gamma=base.gamma * (1.0 + jitter * u[0]),
        contrast=base.contrast * (1.0 + jitter * u[1]),
        bias_field_amplitude=base.bias_field_amplitude * (1.0 + jitter * u[2]),
        intensity_offsets=tuple(o + 0.5 * jitter * d for o, d in zip(base.intensity_offsets, u[3:])),
    )


@dataclass(frozen=True)
class Anatomy:
    """Geometry of one subject at the basal slice, in pixels of the canvas."""

    canvas: int
    center: Tuple[float, float]
    lv_radius: float
    myo_thickness: float
    rv_radius: float
    rv_angle: float
    body_radii: Tuple[float, float]
    blobs: Tuple[Tuple[float, float, float, float], ...]  # row, col, radius, intensity


def sample_anatomy(rng: np.random.Generator, image_size: int) -> Anatomy:
    margin = image_size // 4
    canvas = image_size + 2 * margin
    c = canvas / 2.0
    center = (c + rng.uniform(-margin / 3, margin / 3), c + rng.uniform(-margin / 3, margin / 3))
    s = float(image_size)
    blobs = []
    for _ in range(int(rng.integers(2, 4))):
        ang = rng.uniform(0, 2 * np.pi)
        dist = rng.uniform(0.36, 0.5) * s
        blobs.append(
            (
                center[0] + dist * np.sin(ang),
                center[1] + dist * np.cos(ang),
                rng.uniform(0.06, 0.12) * s,
                rng.uniform(0.3, 0.65),
            )
        )
    return Anatomy(
        canvas=canvas,
        center=center,
        lv_radius=rng.uniform(0.11, 0.13) * s,
        myo_thickness=rng.uniform(0.045, 0.055) * s,
        rv_radius=rng.uniform(0.14, 0.16) * s,
        rv_angle=np.pi + rng.uniform(-0.35, 0.35),
        body_radii=(rng.uniform(0.55, 0.65) * s, rng.uniform(0.6, 0.75) * s),
        blobs=tuple(blobs),
    )


def slice_scale(position: float) -> float:
    """Anatomy scale factor: 1 at the base (position -1), 0.36 at the apex (+1)."""
    return 1.0 - 0.32 * (position + 1.0)


def render_labels(anatomy: Anatomy, position: float, phase: Phase) -> np.ndarray:
    """Class map on the full canvas for one slice."""
    scale = slice_scale(position)
    lv_r = anatomy.lv_radius * scale
    th = anatomy.myo_thickness * scale
    if phase == Phase.ES:
        # contracted cavity, thickened wall
        lv_r *= 0.72
        th *= 1.3
    outer = lv_r + th
    # RV shrinks faster than the LV towards the apex
    rv_r = anatomy.rv_radius * scale**1.5
    rv_dist = outer + 0.3 * rv_r
    if phase == Phase.ES:
        rv_r *= 0.85

    rows, cols = np.mgrid[0 : anatomy.canvas, 0 : anatomy.canvas].astype(np.float64)
    cr, cc = anatomy.center
    d_lv = np.hypot(rows - cr, cols - cc)
    rv_cr = cr + rv_dist * np.sin(anatomy.rv_angle)
    rv_cc = cc + rv_dist * np.cos(anatomy.rv_angle)
    d_rv = np.hypot(rows - rv_cr, cols - rv_cc)

    labels = np.zeros((anatomy.canvas, anatomy.canvas), dtype=np.uint8)
    labels[(d_rv <= rv_r) & (d_lv > outer)] = 3
    labels[(d_lv <= outer) & (d_lv > lv_r)] = 2
    labels[d_lv <= lv_r] = 1
    return labels


def _base_template(anatomy: Anatomy, labels: np.ndarray) -> np.ndarray:
    rows, cols = np.mgrid[0 : anatomy.canvas, 0 : anatomy.canvas].astype(np.float64)
    cr, cc = anatomy.center
    ry, rx = anatomy.body_radii
    base = np.full(labels.shape, _AIR)
    base[((rows - cr) / ry) ** 2 + ((cols - cc) / rx) ** 2 <= 1.0] = _TISSUE
    for br, bc, rad, val in anatomy.blobs:
        base[np.hypot(rows - br, cols - bc) <= rad] = val
    base[labels == 1] = _LV
    base[labels == 2] = _MYO
    base[labels == 3] = _RV
    # partial-volume blur
    return ndimage.gaussian_filter(base, sigma=0.7, mode="nearest")


def bias_field(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    """Smooth additive field: random low-order polynomial plus one slow cosine."""
    if amplitude == 0:
        return np.zeros((size, size))
    y, x = np.mgrid[-1 : 1 : size * 1j, -1 : 1 : size * 1j]
    a = rng.normal(size=4)
    phase = rng.uniform(0, 2 * np.pi)
    field_ = a[0] * x + a[1] * y + a[2] * x * y + a[3] * np.cos(np.pi * (x + y) / 2 + phase)
    peak = np.abs(field_).max()
    return amplitude * field_ / peak if peak > 0 else field_


def render_slice(
    template: np.ndarray,
    labels: np.ndarray,
    style: DomainStyle,
    rng: np.random.Generator,
) -> np.ndarray:
    """Apply a vendor style to a base template: offset[c] + contrast * base**gamma + bias + noise."""
    style.validate()
    offsets = np.asarray(style.intensity_offsets, dtype=np.float64)
    out = offsets[labels] + style.contrast * np.power(np.clip(template, 0.0, None), style.gamma)
    out = out + bias_field(rng, template.shape[0], style.bias_field_amplitude)
    if style.noise_std > 0:
        out = out + rng.normal(0.0, style.noise_std, size=template.shape)
    return out


def _subject_stacks(params: PhantomParams, split: str, site: SiteSpec, domain_index: int, subject_no: int):
    subject_id = f"{split}-{site.vendor_id}{site.center_id}-{subject_no:03d}"
    if params.shared_anatomy:
        anatomy_rng = np.random.default_rng([params.seed, subject_no])
    else:
        anatomy_rng = np.random.default_rng([params.seed, _key("anatomy:" + subject_id)])
    anatomy = sample_anatomy(anatomy_rng, params.image_size)
    style = center_style(
        params.styles[site.vendor_id], params.seed, site.center_id, params.center_jitter
    )
    records = []
    for phase in params.phases:
        for k in range(params.num_slices):
            position = slice_position(k, params.num_slices)
            labels = render_labels(anatomy, position, phase)
            template = _base_template(anatomy, labels)
            owner = str(subject_no) if params.shared_anatomy else f"{subject_id}:{site.center_id}"
            slice_rng = np.random.default_rng([params.seed, _key(f"style:{owner}:{phase.value}:{k}")])
            pixels = render_slice(template, labels, style, slice_rng)
            center = (int(round(anatomy.center[0])), int(round(anatomy.center[1])))
            pixels = center_crop(pixels, params.image_size, center)
            if params.normalize:
                pixels = zscore_normalize(pixels)
            pixels = pixels.astype(np.float32)
            crop_labels = center_crop(labels, params.image_size, center)
            label = LabelMap(crop_labels, True) if site.labeled else LabelMap.unlabeled()
            records.append(
                SliceRecord(
                    image=ImageSlice(pixels, subject_id, k, params.num_slices, phase),
                    label=label,
                    domain_index=domain_index,
                    center_id=site.center_id,
                    vendor_id=site.vendor_id,
                )
            )
    return records


def generate_phantom_dataset(params: PhantomParams, split: str = "train") -> DomainDataset:
    """Render one split of the phantom benchmark.

    Domain indices follow first appearance of each vendor in the split's
    layout, so they are dense. A vendor is registered as labeled only if all
    of its sites in this split are labeled.
    """
    params.validate()
    if split not in params.layout:
        raise ValueError(f"unknown split {split!r}; have {sorted(params.layout)}")
    sites: Sequence[SiteSpec] = params.layout[split]
    vendors: List[str] = []
    for site in sites:
        if site.vendor_id not in vendors:
            vendors.append(site.vendor_id)
    registry = {
        i: DomainInfo(v, all(s.labeled for s in sites if s.vendor_id == v))
        for i, v in enumerate(vendors)
    }
    records: List[SliceRecord] = []
    for site in sites:
        domain_index = vendors.index(site.vendor_id)
        for n in range(site.num_subjects):
            records.extend(_subject_stacks(params, split, site, domain_index, n))
    return DomainDataset(records, registry)


def generate_phantom_splits(params: PhantomParams) -> Dict[str, DomainDataset]:
    return {split: generate_phantom_dataset(params, split) for split in params.layout}
