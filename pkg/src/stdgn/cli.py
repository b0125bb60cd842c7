"""Command-line entry points.

Exit codes: 0 on success, 1 on usage or configuration errors, 2 when the
command itself fails. Every command writes ``resolved_config.cfg`` into its
``--out`` directory; passing that file back through ``--config`` reruns it.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from stdgn.checkpoint import CheckpointError, load_model
from stdgn.config import PRESETS, ConfigError, read_config_file, resolve, write_resolved
from stdgn.data import (
    DatasetLoadError,
    DomainDataset,
    DomainInfo,
    LabelMap,
    PhantomParams,
    SliceRecord,
    encode_modality,
    generate_phantom_splits,
    load_dataset,
    save_dataset,
)
from stdgn.evaluation import GROUP_KEYS, evaluate_dataset, read_records, report, segment_volume, write_records
from stdgn.experiment import reproduce_generalization_experiment
from stdgn.networks import Generator, conditioned_input
from stdgn.training import (
    NonFiniteLossError,
    STDGNTrainer,
    TrainConfig,
    load_srn,
    save_srn,
    save_unet,
    srn_from_baseline,
    train,
    train_baseline_unet,
    write_metrics,
)

log = logging.getLogger("stdgn")

RESOLVED_NAME = "resolved_config.cfg"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- argument plumbing -------------------------------------------------------------

# Command-level keys that a config file may also set.
COMMAND_KEYS = {
    "gen-data": ("out", "num_slices"),
    "pretrain-baseline": ("data", "split", "out"),
    "pretrain-srn": ("data", "split", "baseline", "out"),
    "train": ("data", "out", "baseline", "srn", "resume"),
    "segment": ("model", "data", "split", "out"),
    "translate": ("model", "image", "target", "source", "out"),
    "evaluate": ("model", "data", "split", "spacing", "out"),
    "report": ("records", "group_by", "out"),
    "reproduce": ("seeds", "num_slices", "out"),
}
REQUIRED = {
    "gen-data": ("out",),
    "pretrain-baseline": ("data", "out"),
    "pretrain-srn": ("data", "baseline", "out"),
    "train": ("data", "out"),
    "segment": ("model", "data", "out"),
    "translate": ("model", "image", "target", "out"),
    "evaluate": ("model", "data", "out"),
    "report": ("records", "out"),
    "reproduce": ("out",),
}
DEFAULTS = {
    "split": "train",
    "num_slices": "8",
    "source": "0",
    "spacing": "1.0",
    "seeds": "0,1,2",
    "group_by": "vendor_id,structure",
}
EVAL_SPLIT = "test"
# Commands whose behavior depends on TrainConfig keys, so they take the full flag set.
TRAINING_COMMANDS = ("pretrain-baseline", "pretrain-srn", "train", "reproduce")


def _add_train_flags(parser: argparse.ArgumentParser):
    group = parser.add_argument_group("training configuration (override config file)")
    for f in fields(TrainConfig):
        if f.name in ("seed", "image_size"):
            continue
        group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, metavar=str(f.type).upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stdgn", description="Style-transfer domain generalization for cardiac segmentation.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat 'key = value' file; flags override it")
        p.add_argument("--preset", choices=sorted(PRESETS), default="default")
        p.add_argument("--seed", help="global seed (falls back to $STDGN_SEED)")
        p.add_argument("--image-size", dest="image_size")
        p.add_argument("--out", help="output directory")
        if name in TRAINING_COMMANDS:
            _add_train_flags(p)
        return p

    p = command("gen-data", "generate the synthetic multi-vendor phantom splits")
    p.add_argument("--num-slices", dest="num_slices")

    for name, text in (("pretrain-baseline", "train the fully supervised U-Net"),
                       ("pretrain-srn", "pretrain the shape reconstruction network")):
        p = command(name, text)
        p.add_argument("--data", help="dataset directory from gen-data (or one split)")
        p.add_argument("--split")
        if name == "pretrain-srn":
            p.add_argument("--baseline", help="baseline U-Net checkpoint")

    p = command("train", "baseline, SRN pretraining and the main adversarial loop")
    p.add_argument("--data")
    p.add_argument("--baseline", help="reuse a baseline checkpoint")
    p.add_argument("--srn", help="reuse an SRN checkpoint")
    p.add_argument("--resume", help="continue from a training checkpoint")

    for name, text in (("segment", "write predicted label maps for a split"),
                       ("evaluate", "Dice/HD records and grouped report for a split")):
        p = command(name, text)
        p.add_argument("--model", help="checkpoint (stdgn or unet)")
        p.add_argument("--data")
        p.add_argument("--split")
        if name == "evaluate":
            p.add_argument("--spacing", help="pixel spacing for HD")

    p = command("translate", "translate one raw float32 slice into a target modality")
    p.add_argument("--model")
    p.add_argument("--image", help="raw little-endian float32 file, H*W values")
    p.add_argument("--target", help="target modality index")
    p.add_argument("--source", help="source modality index")

    p = command("report", "regroup an existing records CSV")
    p.add_argument("--records")
    p.add_argument("--group-by", dest="group_by", help=f"comma list from {', '.join(GROUP_KEYS)}")

    p = command("reproduce", "baseline vs STDGN on the held-out phantom vendor")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--num-slices", dest="num_slices")
    return parser


def resolve_args(args: argparse.Namespace, env=None):
    """Apply the override chain. Returns (TrainConfig, command options)."""
    name = args.command
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "preset")}
    file_values = read_config_file(args.config) if args.config else {}
    file_values.pop("command", None)
    config, extras = resolve(file_values, flags, args.preset, COMMAND_KEYS[name], env)
    options = {k: extras.get(k, DEFAULTS.get(k)) for k in COMMAND_KEYS[name]}
    if name in ("segment", "evaluate") and options.get("split") is None:
        options["split"] = EVAL_SPLIT
    missing = [k for k in REQUIRED[name] if not options.get(k)]
    if missing:
        raise UsageError(f"stdgn {name}: missing required option(s): " + ", ".join(f"--{m.replace('_', '-')}" for m in missing))
    return config, options


def load_split(data: str, split: str) -> DomainDataset:
    """``data`` is a gen-data directory holding split subdirectories, or one split itself."""
    root = Path(data)
    if (root / split / "manifest.json").exists():
        return load_dataset(root / split)
    if (root / "manifest.json").exists() or root.suffix == ".json":
        return load_dataset(root)
    raise FileNotFoundError(f"no dataset for split {split!r} under {root}")


def _optional_split(data: str, split: str) -> Optional[DomainDataset]:
    path = Path(data) / split / "manifest.json"
    return load_dataset(path) if path.exists() else None


def _as_int(options, key) -> int:
    try:
        return int(options[key])
    except ValueError as exc:
        raise UsageError(f"--{key.replace('_', '-')} must be an integer, got {options[key]!r}") from exc


# -- commands -----------------------------------------------------------------------


def cmd_gen_data(config: TrainConfig, options: Dict[str, str]) -> None:
    params = PhantomParams(seed=config.seed, image_size=config.image_size, num_slices=_as_int(options, "num_slices"))
    out = Path(options["out"])
    for split, dataset in generate_phantom_splits(params).items():
        save_dataset(dataset, out / split)
        log.info("%s: %d slices", split, len(dataset))


def cmd_pretrain_baseline(config: TrainConfig, options: Dict[str, str]) -> None:
    data = load_split(options["data"], options["split"])
    losses: List[float] = []
    model = train_baseline_unet(data, config, losses)
    out = Path(options["out"])
    save_unet(model, config, out / "baseline.ckpt")
    _write_column(out / "baseline_loss.csv", "ce", losses)


def cmd_pretrain_srn(config: TrainConfig, options: Dict[str, str]) -> None:
    data = load_split(options["data"], options["split"])
    baseline = load_model(options["baseline"])
    losses: List[float] = []
    srn = srn_from_baseline(baseline, data, config, losses)
    out = Path(options["out"])
    save_srn(srn, config, out / "srn.ckpt")
    _write_column(out / "srn_loss.csv", "mse", losses)


def cmd_train(config: TrainConfig, options: Dict[str, str]) -> None:
    train_data = load_split(options["data"], "train")
    val_data = _optional_split(options["data"], "val")
    out = Path(options["out"])
    if options.get("resume"):
        trainer = STDGNTrainer.from_checkpoint(options["resume"], train_data, val_data)
        trainer.run(checkpoint_dir=out)
        trainer.save(out / "final.ckpt")
        write_metrics(trainer.history, out / "metrics.csv")
        return
    baseline = load_model(options["baseline"]) if options.get("baseline") else None
    srn = load_srn(options["srn"]) if options.get("srn") else None
    train(config, train_data, val_data, out, baseline=baseline, srn=srn)


def cmd_segment(config: TrainConfig, options: Dict[str, str]) -> None:
    model = load_model(options["model"])
    data = load_split(options["data"], options["split"])
    records: List[SliceRecord] = []
    for _, stack in sorted(data.subjects().items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        pred = segment_volume(model, np.stack([r.image.pixels for r in stack]))
        for rec, classes in zip(stack, pred):
            records.append(SliceRecord(rec.image, LabelMap(classes), rec.domain_index, rec.center_id, rec.vendor_id))
    registry = {i: DomainInfo(info.vendor_id, True) for i, info in data.domain_registry.items()}
    save_dataset(DomainDataset(records, registry), Path(options["out"]) / "segmentation")


def cmd_translate(config: TrainConfig, options: Dict[str, str]) -> None:
    model = load_model(options["model"])
    if not isinstance(model, Generator):
        raise ValueError("translate needs an STDGN checkpoint, not a segmentation-only model")
    size = model.image_size
    raw = np.fromfile(options["image"], dtype="<f4")
    if raw.size != size * size:
        raise ValueError(f"{options['image']}: expected {size}x{size} float32 values, found {raw.size}")
    k = model.config.num_modalities
    target, source = _as_int(options, "target"), _as_int(options, "source")
    for name, idx in (("target", target), ("source", source)):
        if not 0 <= idx < k:
            raise UsageError(f"--{name} must be in [0, {k - 1}], got {idx}")
    diff = torch.from_numpy((encode_modality(target, k) - encode_modality(source, k)).astype(np.float32))[None]
    x = torch.from_numpy(raw.reshape(1, 1, size, size).copy())
    with torch.no_grad():
        out_img = model(conditioned_input(x, diff)).translated[0, 0].numpy()
    out = Path(options["out"])
    out.mkdir(parents=True, exist_ok=True)
    out_img.astype("<f4").tofile(out / "translated.img")


def cmd_evaluate(config: TrainConfig, options: Dict[str, str]) -> None:
    model = load_model(options["model"])
    data = load_split(options["data"], options["split"])
    try:
        spacing = float(options["spacing"])
    except ValueError as exc:
        raise UsageError(f"--spacing must be a number, got {options['spacing']!r}") from exc
    records = evaluate_dataset(model, data, spacing)
    out = Path(options["out"])
    write_records(records, out / "records.csv")
    report(records, ["vendor_id", "structure"]).to_csv(out / "report.csv")
    report(records, ["structure"]).to_csv(out / "report_structure.csv")


def cmd_report(config: TrainConfig, options: Dict[str, str]) -> None:
    keys = [k.strip() for k in options["group_by"].split(",") if k.strip()]
    bad = [k for k in keys if k not in GROUP_KEYS]
    if bad:
        raise UsageError(f"unknown group key(s) {bad}; choose from {list(GROUP_KEYS)}")
    records = read_records(options["records"])
    report(records, keys).to_csv(Path(options["out"]) / "report.csv")


def cmd_reproduce(config: TrainConfig, options: Dict[str, str]) -> None:
    try:
        seeds = [int(s) for s in options["seeds"].split(",") if s.strip()]
    except ValueError as exc:
        raise UsageError(f"--seeds must be comma-separated integers, got {options['seeds']!r}") from exc
    phantom = PhantomParams(image_size=config.image_size, num_slices=_as_int(options, "num_slices"))
    result = reproduce_generalization_experiment(config, seeds, phantom, options["out"])
    for row in result.rows:
        print(f"{row['method']:>8} {row['structure']:>4} unseen Dice {row['dice_mean']:.3f} ± {row['dice_std']:.3f}")
    print(f"STDGN >= baseline on unseen vendor in {result.stdgn_wins()}/{len(seeds)} seeds")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain-baseline": cmd_pretrain_baseline,
    "pretrain-srn": cmd_pretrain_srn,
    "train": cmd_train,
    "segment": cmd_segment,
    "translate": cmd_translate,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "reproduce": cmd_reproduce,
}


def _write_column(path: Path, name: str, values: Sequence[float]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", name])
        writer.writerows((i, repr(v)) for i, v in enumerate(values))


def run(argv: Optional[Sequence[str]] = None, env=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config, options = resolve_args(args, env)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        out = Path(options["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(out / RESOLVED_NAME, args.command, config, {"command": args.command, **options})
        COMMANDS[args.command](config, options)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError, DatasetLoadError, CheckpointError, NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    sys.exit(run())


if __name__ == "__main__":
    main()
