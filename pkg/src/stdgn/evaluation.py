"""Dice / Hausdorff metrics, model inference, and stratified reports."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import ndimage
from scipy.spatial.distance import directed_hausdorff

from stdgn.data.types import STRUCTURES, DomainDataset

Spacing = Union[float, Tuple[float, float]]


def dice(pred_mask: np.ndarray, gold_mask: np.ndarray) -> float:
    """2|A & B| / (|A| + |B|); 1.0 when both masks are empty."""
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gold_mask = np.asarray(gold_mask, dtype=bool)
    if pred_mask.shape != gold_mask.shape:
        raise ValueError(f"mask shape mismatch: {pred_mask.shape} vs {gold_mask.shape}")
    total = int(pred_mask.sum()) + int(gold_mask.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred_mask, gold_mask).sum()) / total


def boundary(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with at least one 4-neighbour outside the mask (image edge counts as outside)."""
    mask = np.asarray(mask, dtype=bool)
    eroded = ndimage.binary_erosion(mask, structure=ndimage.generate_binary_structure(2, 1), border_value=0)
    return mask & ~eroded


def hausdorff(pred_mask: np.ndarray, gold_mask: np.ndarray, spacing: Spacing = 1.0) -> float:
    """Symmetric Hausdorff distance between mask boundaries.

    Returns NaN when either mask is empty (undefined; callers exclude it from
    means and count it separately).
    """
    pred_mask = np.asarray(pred_mask, dtype=bool)
    gold_mask = np.asarray(gold_mask, dtype=bool)
    if pred_mask.shape != gold_mask.shape:
        raise ValueError(f"mask shape mismatch: {pred_mask.shape} vs {gold_mask.shape}")
    if not pred_mask.any() or not gold_mask.any():
        return math.nan
    scale = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (pred_mask.ndim,))
    a = np.argwhere(boundary(pred_mask)) * scale
    b = np.argwhere(boundary(gold_mask)) * scale
    return float(max(directed_hausdorff(a, b, seed=0)[0], directed_hausdorff(b, a, seed=0)[0]))


@torch.no_grad()
def segmentation_logits(model: torch.nn.Module, images: np.ndarray, chunk: int = 32) -> torch.Tensor:
    """Run a generator (zero modality difference) or a U-Net on (N, H, W) images."""
    from stdgn.networks import Generator, conditioned_input

    images = np.asarray(images, dtype=np.float32)
    if images.ndim == 3:
        images = images[:, None]
    expected = getattr(model, "image_size", None)
    if expected is not None and images.shape[-2:] != (expected, expected):
        raise ValueError(f"model expects {expected}x{expected} slices, got {images.shape[-2:]}")
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    for start in range(0, len(images), chunk):
        x = torch.from_numpy(images[start : start + chunk]).to(dtype)
        if isinstance(model, Generator):
            diff = x.new_zeros((x.shape[0], model.config.num_modalities))
            out.append(model(conditioned_input(x, diff)).segmentation_logits)
        else:
            out.append(model(x))
    return torch.cat(out)


def segment_volume(model: torch.nn.Module, slices: np.ndarray) -> np.ndarray:
    """Per-slice label maps (uint8) by per-pixel argmax."""
    return segmentation_logits(model, slices).argmax(dim=1).numpy().astype(np.uint8)


@dataclass
class EvalRecord:
    subject_id: str
    vendor_id: str
    center_id: str
    phase: str
    structure: str
    dice: float
    hd: float  # NaN when undefined

    @property
    def hd_defined(self) -> bool:
        return not math.isnan(self.hd)


def volume_metrics(pred: np.ndarray, gold: np.ndarray, label: int, spacing: Spacing = 1.0):
    """Dice over the whole stack; HD per slice, aggregated by max over slices
    where both masks are non-empty (NaN if there is no such slice)."""
    p, g = pred == label, gold == label
    d = dice(p, g)
    per_slice = [hausdorff(ps, gs, spacing) for ps, gs in zip(p, g)]
    per_slice = [h for h in per_slice if not math.isnan(h)]
    return d, (max(per_slice) if per_slice else math.nan)


def evaluate_dataset(model, dataset: DomainDataset, spacing: Spacing = 1.0) -> List[EvalRecord]:
    """One record per (subject, phase, structure) over labeled stacks."""
    records: List[EvalRecord] = []
    for (subject_id, phase), stack in sorted(dataset.subjects().items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        if not all(r.label.is_labeled for r in stack):
            continue
        images = np.stack([r.image.pixels for r in stack])
        gold = np.stack([r.label.classes for r in stack])
        pred = segment_volume(model, images)
        for label, name in STRUCTURES.items():
            d, h = volume_metrics(pred, gold, label, spacing)
            records.append(
                EvalRecord(subject_id, stack[0].vendor_id, stack[0].center_id, phase.value, name, d, h)
            )
    return records


def mean_dice(records: Iterable[EvalRecord]) -> float:
    values = [r.dice for r in records]
    return float(np.mean(values)) if values else math.nan


GROUP_KEYS = ("vendor_id", "center_id", "phase", "structure")


@dataclass
class ReportTable:
    group_by: Tuple[str, ...]
    rows: List[Dict[str, object]]

    def columns(self) -> List[str]:
        return list(self.group_by) + [
            "n", "dice_mean", "dice_std", "hd_n", "hd_mean", "hd_std", "hd_undefined",
        ]

    def to_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.columns())
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: _fmt(v) for k, v in row.items()})
        return path

    def lookup(self, **keys) -> Dict[str, object]:
        for row in self.rows:
            if all(row[k] == v for k, v in keys.items()):
                return row
        raise KeyError(keys)


def _fmt(value):
    return repr(value) if isinstance(value, float) else value


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return math.nan, math.nan
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def report(records: Sequence[EvalRecord], group_by: Sequence[str] = ()) -> ReportTable:
    """Mean and population std of Dice and HD per group; undefined HDs are
    excluded from HD statistics and counted in ``hd_undefined``."""
    group_by = tuple(group_by)
    for key in group_by:
        if key not in GROUP_KEYS and key != "subject_id":
            raise ValueError(f"cannot group by {key!r}")
    groups: Dict[Tuple, List[EvalRecord]] = {}
    for rec in records:
        groups.setdefault(tuple(getattr(rec, k) for k in group_by), []).append(rec)
    rows = []
    for key in sorted(groups):
        members = groups[key]
        dm, ds = _mean_std([r.dice for r in members])
        hds = [r.hd for r in members if r.hd_defined]
        hm, hs = _mean_std(hds)
        row: Dict[str, object] = dict(zip(group_by, key))
        row.update(
            n=len(members), dice_mean=dm, dice_std=ds, hd_n=len(hds), hd_mean=hm, hd_std=hs,
            hd_undefined=len(members) - len(hds),
        )
        rows.append(row)
    return ReportTable(group_by, rows)


def write_records(records: Sequence[EvalRecord], path: Union[str, Path]) -> Path:
    path = Path(path)
    names = [f.name for f in fields(EvalRecord)]
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for rec in records:
            writer.writerow({k: _fmt(v) for k, v in asdict(rec).items()})
    return path


def read_records(path: Union[str, Path]) -> List[EvalRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                EvalRecord(
                    row["subject_id"], row["vendor_id"], row["center_id"], row["phase"],
                    row["structure"], float(row["dice"]), float(row["hd"]),
                )
            )
    return out
