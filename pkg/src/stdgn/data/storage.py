"""On-disk dataset format.

A dataset directory holds ``manifest.json`` plus one raw float32
little-endian ``.img`` file per slice and, for labeled records, one raw
uint8 ``.lab`` file. Array dimensions live in the manifest.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

import numpy as np

from stdgn.data.types import (
    NUM_CLASSES,
    DomainDataset,
    DomainInfo,
    ImageSlice,
    LabelMap,
    Phase,
    SliceRecord,
)

MANIFEST_NAME = "manifest.json"
FORMAT_TAG = "stdgn-dataset"
FORMAT_VERSION = 1

_IMG_DTYPE = np.dtype("<f4")
_LAB_DTYPE = np.dtype("u1")
_RECORD_FIELDS = (
    "subject_id",
    "vendor_id",
    "center_id",
    "domain_index",
    "slice_index",
    "num_slices",
    "phase",
    "labeled",
    "H",
    "W",
    "image_file",
    "label_file",
)


class DatasetLoadError(ValueError):
    """Raised for malformed manifests or slice files; the message names the record."""


def _stem(rec: SliceRecord) -> str:
    return f"{rec.image.subject_id}_{rec.image.phase.value}_{rec.image.slice_index}"


def save_dataset(dataset: DomainDataset, directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    slices = directory / "slices"
    slices.mkdir(parents=True, exist_ok=True)
    entries = []
    for rec in dataset.records:
        stem = _stem(rec)
        h, w = rec.image.shape
        image_file = f"slices/{stem}.img"
        (directory / image_file).write_bytes(np.ascontiguousarray(rec.image.pixels, dtype=_IMG_DTYPE).tobytes())
        label_file = None
        if rec.label.is_labeled:
            label_file = f"slices/{stem}.lab"
            (directory / label_file).write_bytes(
                np.ascontiguousarray(rec.label.classes, dtype=_LAB_DTYPE).tobytes()
            )
        entries.append(
            {
                "subject_id": rec.image.subject_id,
                "vendor_id": rec.vendor_id,
                "center_id": rec.center_id,
                "domain_index": rec.domain_index,
                "slice_index": rec.image.slice_index,
                "num_slices": rec.image.num_slices,
                "phase": rec.image.phase.value,
                "labeled": rec.label.is_labeled,
                "H": h,
                "W": w,
                "image_file": image_file,
                "label_file": label_file,
            }
        )
    manifest = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "domains": [
            {"index": i, "vendor_id": info.vendor_id, "labeled": info.labeled}
            for i, info in sorted(dataset.domain_registry.items())
        ],
        "records": entries,
    }
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return path


def _read_raw(path: Path, dtype: np.dtype, shape, record_id: str) -> np.ndarray:
    if not path.is_file():
        raise DatasetLoadError(f"record {record_id}: missing slice file {path}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise DatasetLoadError(
            f"record {record_id}: {path.name} has {len(raw)} bytes, expected {expected} for shape {shape}"
        )
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_dataset(manifest_path: Union[str, Path]) -> DomainDataset:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    root = manifest_path.parent
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DatasetLoadError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise DatasetLoadError(f"malformed manifest {manifest_path}: {exc}") from None
    if not isinstance(manifest, dict) or manifest.get("format") != FORMAT_TAG:
        raise DatasetLoadError(f"{manifest_path} is not a {FORMAT_TAG} manifest")

    try:
        registry = {
            int(d["index"]): DomainInfo(str(d["vendor_id"]), bool(d["labeled"]))
            for d in manifest["domains"]
        }
        entries = manifest["records"]
    except (KeyError, TypeError) as exc:
        raise DatasetLoadError(f"malformed manifest {manifest_path}: missing {exc}") from None

    records = []
    for n, entry in enumerate(entries):
        record_id = f"#{n}"
        if isinstance(entry, dict) and "subject_id" in entry:
            record_id = f"{entry['subject_id']}_{entry.get('phase')}_{entry.get('slice_index')}"
        missing = [k for k in _RECORD_FIELDS if not isinstance(entry, dict) or k not in entry]
        if missing:
            raise DatasetLoadError(f"record {record_id}: missing fields {missing}")
        shape = (int(entry["H"]), int(entry["W"]))
        try:
            pixels = _read_raw(root / entry["image_file"], _IMG_DTYPE, shape, record_id).astype(np.float32)
            if entry["labeled"]:
                if not entry["label_file"]:
                    raise DatasetLoadError(f"record {record_id}: labeled but no label_file")
                classes = _read_raw(root / entry["label_file"], _LAB_DTYPE, shape, record_id)
                if classes.max(initial=0) >= NUM_CLASSES:
                    raise DatasetLoadError(
                        f"record {record_id}: unknown class index {int(classes.max())} in {entry['label_file']}"
                    )
                label = LabelMap(classes, True)
            else:
                label = LabelMap.unlabeled()
            image = ImageSlice(
                pixels,
                str(entry["subject_id"]),
                int(entry["slice_index"]),
                int(entry["num_slices"]),
                Phase(entry["phase"]),
            )
        except DatasetLoadError:
            raise
        except ValueError as exc:
            raise DatasetLoadError(f"record {record_id}: {exc}") from None
        records.append(
            SliceRecord(
                image=image,
                label=label,
                domain_index=int(entry["domain_index"]),
                center_id=str(entry["center_id"]),
                vendor_id=str(entry["vendor_id"]),
            )
        )
    try:
        return DomainDataset(records, registry)
    except ValueError as exc:
        raise DatasetLoadError(str(exc)) from None
