"""Checkpoint container: config echo, parameter blobs, optimizer state, RNG
state and iteration counter in one ``torch.save`` archive."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Union

import torch

FORMAT_TAG = "stdgn-checkpoint"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Union[str, Path], kind: str, payload: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {"format": FORMAT_TAG, "version": FORMAT_VERSION, "kind": kind, **payload}
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(blob, tmp)
    tmp.replace(path)
    return path


def read_checkpoint(path: Union[str, Path], kind: str = None) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    # our own archives: plain containers, tensors and numpy RNG state dicts
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path} is not a {FORMAT_TAG} file")
    if kind is not None and blob.get("kind") != kind:
        raise CheckpointError(f"{path} holds a {blob.get('kind')!r} checkpoint, expected {kind!r}")
    return blob


def load_model(path: Union[str, Path]):
    """Rebuild the segmentation-capable model stored in a checkpoint.

    Returns a ``Generator`` for STDGN checkpoints and a ``UNet`` for baseline
    checkpoints, in eval mode.
    """
    from stdgn.networks import Generator, GeneratorConfig, UNet

    blob = read_checkpoint(path)
    kind = blob["kind"]
    if kind == "stdgn":
        model = Generator(GeneratorConfig(**blob["generator_config"]))
        model.load_state_dict(blob["state"]["generator"])
    elif kind == "unet":
        model = UNet(**blob["unet_config"])
        model.load_state_dict(blob["state"]["unet"])
    else:
        raise CheckpointError(f"{path}: no segmentation model in a {kind!r} checkpoint")
    model.image_size = blob["config"]["image_size"]
    return model.eval()
