"""Optimization: baseline U-Net, SRN pretraining, and the main adversarial
translate-and-segment loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F

from stdgn import losses as L
from stdgn.checkpoint import read_checkpoint, save_checkpoint
from stdgn.data.batching import Batch, StackedDataset, epoch_order
from stdgn.data.modality import sample_target_modality
from stdgn.data.types import NUM_CLASSES, STRUCTURES, DomainDataset
from stdgn.evaluation import evaluate_dataset, report
from stdgn.networks import (
    Discriminator,
    Generator,
    GeneratorConfig,
    ShapeReconstructionNet,
    SpatialConstraintNet,
    UNet,
    conditioned_input,
    freeze,
    set_requires_grad,
)

log = logging.getLogger(__name__)


class Phase(str, Enum):
    TRAIN_G = "train_G"
    TRAIN_D = "train_D"
    BOTH = "both"


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    seed: int = 0
    image_size: int = 64
    # optimizer
    lr: float = 3e-4
    lr_step: int = 5000
    lr_divisor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 8
    total_iterations: int = 6000
    # "block": alternate G and D every alternation_period epochs; "interleave": one D and one G step per batch
    alternation: str = "block"
    alternation_period: int = 50
    # architecture
    base_width: int = 16
    depth: int = 4
    se_reduction: int = 8
    disc_width: int = 16
    disc_layers: int = 4
    srn_width: int = 16
    srn_depth: int = 2
    scn_hidden: int = 64
    # loss weights
    lambda_gp: float = 10.0
    lambda_cls: float = 10.0
    lambda_seg: float = 100.0
    lambda_rec_img: float = 100.0
    lambda_rec_lab: float = 100.0
    lambda_sr: float = 100.0
    lambda_sc: float = 1.0
    rec_lab_ramp_fraction: float = 0.5
    # target modality sampling
    soft_targets: bool = False
    dirichlet_alpha: float = 1.0
    # baseline and SRN pretraining
    baseline_iterations: int = 1500
    baseline_lr: float = 3e-2
    srn_epochs: int = 6
    srn_lr: float = 1e-3
    # bookkeeping
    val_every: int = 500
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.alternation not in ("block", "interleave"):
            raise ValueError(f"alternation must be 'block' or 'interleave', got {self.alternation!r}")
        for name in ("lr", "lr_step", "lr_divisor", "batch_size", "alternation_period", "total_iterations"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(
            gp=self.lambda_gp, cls=self.lambda_cls, seg=self.lambda_seg, rec_img=self.lambda_rec_img,
            rec_lab=self.lambda_rec_lab, sr=self.lambda_sr, sc=self.lambda_sc,
        )

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: Dict[str, object]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: _coerce(known[k].type, v) for k, v in values.items()})


def _coerce(type_name, value):
    if not isinstance(value, str):
        return value
    kind = type_name if isinstance(type_name, str) else type_name.__name__
    if kind == "bool":
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    return value


def lr_schedule(iteration: int, lr0: float = 3e-4, step: int = 5000, divisor: float = 10.0) -> float:
    """Step decay: ``lr0 * divisor ** -(iteration // step)``."""
    return lr0 * divisor ** (-(iteration // step))


def lambda_ramp(iteration: int, total: int, peak: float = 100.0, fraction: float = 0.5) -> float:
    """Linear ramp from 0 at iteration 0 to ``peak`` at ``fraction * total``, constant afterwards."""
    ramp_len = fraction * total
    if ramp_len <= 0:
        return peak
    return peak * min(1.0, iteration / ramp_len)


def alternation_controller(epoch: int, period: int = 50) -> Phase:
    """Block alternation: epochs [0, p) train G, [p, 2p) train D, and so on."""
    if period < 1:
        raise ValueError("period must be >= 1")
    return Phase.TRAIN_G if (epoch // period) % 2 == 0 else Phase.TRAIN_D


def batch_to_tensors(batch: Batch, dtype=torch.float32) -> Dict[str, torch.Tensor]:
    return {
        "images": torch.from_numpy(batch.images).to(dtype),
        "labels": torch.from_numpy(batch.labels),
        "label_mask": torch.from_numpy(batch.label_mask),
        "domains": torch.from_numpy(batch.domains),
        "positions": torch.from_numpy(batch.positions).to(dtype),
    }


def one_hot_planes(labels: torch.Tensor, num_classes: int = NUM_CLASSES, dtype=torch.float32) -> torch.Tensor:
    return F.one_hot(labels, num_classes).permute(0, 3, 1, 2).to(dtype)


def sample_targets(rng: np.random.Generator, n: int, num_modalities: int, config: TrainConfig) -> np.ndarray:
    return np.stack(
        [
            sample_target_modality(rng, num_modalities, soft=config.soft_targets, concentration=config.dirichlet_alpha)
            for _ in range(n)
        ]
    )


@dataclass
class Models:
    generator: Generator
    discriminator: Discriminator
    scn: SpatialConstraintNet
    srn: ShapeReconstructionNet

    @property
    def num_modalities(self) -> int:
        return self.generator.config.num_modalities


def generator_parts(
    models: Models,
    batch: Dict[str, torch.Tensor],
    config: TrainConfig,
    rng: np.random.Generator,
    rec_lab_weight: float,
) -> Dict[str, torch.Tensor]:
    """Full translate/recover cycle and every generator-side loss term.

    Consumes exactly one target sample per batch element from ``rng``,
    independently of which records carry labels.
    """
    weights = config.weights
    k = models.num_modalities
    x = batch["images"]
    dtype = x.dtype
    source = F.one_hot(batch["domains"], k).to(dtype)
    target = torch.from_numpy(sample_targets(rng, len(x), k, config)).to(dtype)
    d_st = target - source
    d_ts = -d_st

    fwd = models.generator(conditioned_input(x, d_st))
    x_fake = fwd.translated
    rec = models.generator(conditioned_input(x_fake, d_ts))

    disc = models.discriminator(x_fake)
    mask = batch["label_mask"]
    labels = batch["labels"]
    with torch.no_grad():
        r_gold = models.srn(one_hot_planes(labels, dtype=dtype))
    r_pred = models.srn(F.softmax(fwd.segmentation_logits, dim=1))
    r_pred_rec = models.srn(F.softmax(rec.segmentation_logits, dim=1))
    positions = batch["positions"]

    parts = {
        "adv_g": disc.src_score.mean(),
        "cls_fake": L.cls_loss_fake(disc.cls_logits, target, soft=config.soft_targets),
        "rec_img": L.cycle_image_loss(x, rec.translated),
        "ce": L.cross_entropy_seg(fwd.segmentation_logits, labels, mask),
        "sr": L.sr_loss(r_gold, r_pred, mask),
        "sc": L.sc_loss(positions, models.scn(fwd.bottleneck)),
        "ce_rec": L.cross_entropy_seg(rec.segmentation_logits, labels, mask),
        "sr_rec": L.sr_loss(r_gold, r_pred_rec, mask),
        "sc_rec": L.sc_loss(positions, models.scn(rec.bottleneck)),
    }
    parts["seg"] = L.composite_seg_loss(L.SegTerms(parts["ce"], parts["sr"], parts["sc"]), weights)
    parts["rec_lab"] = L.composite_seg_loss(L.SegTerms(parts["ce_rec"], parts["sr_rec"], parts["sc_rec"]), weights)
    parts["loss_G"] = L.total_loss_g(parts, weights, rec_lab_weight)
    parts["_d_st"] = d_st
    return parts


def discriminator_parts(
    models: Models,
    batch: Dict[str, torch.Tensor],
    config: TrainConfig,
    rng: np.random.Generator,
) -> Dict[str, torch.Tensor]:
    weights = config.weights
    k = models.num_modalities
    x = batch["images"]
    source = F.one_hot(batch["domains"], k).to(x.dtype)
    target = torch.from_numpy(sample_targets(rng, len(x), k, config)).to(x.dtype)
    with torch.no_grad():
        x_fake = models.generator(conditioned_input(x, target - source)).translated
    eps = torch.from_numpy(L.sample_interpolation_weights(rng, len(x))).to(x.dtype)
    parts: Dict[str, torch.Tensor] = {}
    parts["adv_d"] = L.adv_loss_d(models.discriminator.critic, x, x_fake, weights.gp, eps=eps, parts=parts)
    parts["cls_real"] = L.cls_loss_real(models.discriminator(x).cls_logits, source)
    parts["loss_D"] = L.total_loss_d(parts, weights)
    return parts


def _check_finite(parts: Dict[str, torch.Tensor], step: str):
    for name, value in parts.items():
        if name.startswith("_"):
            continue
        if not torch.isfinite(value).all():
            raise NonFiniteLossError(f"{step}: loss part {name!r} is not finite ({value.item()})")


def _sgd(params, config: TrainConfig, lr: Optional[float] = None):
    return torch.optim.SGD(
        params, lr=config.lr if lr is None else lr, momentum=config.momentum, weight_decay=config.weight_decay
    )


G_PARTS = ("adv_g", "cls_fake", "rec_img", "ce", "sr", "sc", "ce_rec", "sr_rec", "sc_rec", "seg", "rec_lab", "loss_G")
D_PARTS = ("adv_d", "gp", "cls_real", "loss_D")
WEIGHTED = ("w_adv_g", "w_cls_fake", "w_rec_img", "w_seg", "w_rec_lab", "w_adv_d", "w_cls_real")
VAL_COLUMNS = tuple(f"val_{name}" for name in STRUCTURES.values())
METRIC_COLUMNS = ("iteration", "epoch", "phase", "lr", "lambda_rec_lab") + G_PARTS + D_PARTS + WEIGHTED + VAL_COLUMNS


class STDGNTrainer:
    """Owns all models, optimizers and RNG state of one main training run.

    Batch order is a pure function of (seed, iteration), and all sampling
    goes through one numpy generator whose state is checkpointed, so a
    resumed run replays the uninterrupted trajectory exactly.
    """

    def __init__(
        self,
        config: TrainConfig,
        train_data: DomainDataset,
        srn: ShapeReconstructionNet,
        val_data: Optional[DomainDataset] = None,
    ):
        self.config = config
        self.train = StackedDataset(train_data)
        self.val_data = val_data
        self.num_modalities = train_data.num_modalities
        torch.manual_seed(config.seed)
        gcfg = GeneratorConfig(
            num_modalities=self.num_modalities, base_width=config.base_width, depth=config.depth,
            se_reduction=config.se_reduction,
        )
        generator = Generator(gcfg)
        generator.image_size = config.image_size
        self.models = Models(
            generator=generator,
            discriminator=Discriminator(config.image_size, self.num_modalities, config.disc_width, config.disc_layers),
            scn=SpatialConstraintNet(gcfg.bottleneck_channels, config.scn_hidden),
            srn=freeze(srn),
        )
        self.opt_g = _sgd(list(generator.parameters()) + list(self.models.scn.parameters()), config)
        self.opt_d = _sgd(self.models.discriminator.parameters(), config)
        self.rng = np.random.default_rng([config.seed, 7])
        self.iteration = 0
        self.history: List[Dict[str, object]] = []
        self._order_cache: Tuple[int, np.ndarray] = (-1, np.empty(0))

    # -- schedule -------------------------------------------------------
    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.train) / self.config.batch_size)

    def epoch_of(self, iteration: int) -> int:
        return iteration // self.batches_per_epoch

    def batch_at(self, iteration: int) -> Batch:
        epoch, j = divmod(iteration, self.batches_per_epoch)
        if self._order_cache[0] != epoch:
            self._order_cache = (epoch, epoch_order(len(self.train), self.config.seed, epoch))
        bs = self.config.batch_size
        return self.train.batch(self._order_cache[1][j * bs : (j + 1) * bs])

    def phase_of(self, iteration: int) -> Phase:
        if self.config.alternation == "interleave":
            return Phase.BOTH
        return alternation_controller(self.epoch_of(iteration), self.config.alternation_period)

    def current_lr(self, iteration: int) -> float:
        c = self.config
        return lr_schedule(iteration, c.lr, c.lr_step, c.lr_divisor)

    def current_rec_lab(self, iteration: int) -> float:
        c = self.config
        return lambda_ramp(iteration, c.total_iterations, c.lambda_rec_lab, c.rec_lab_ramp_fraction)

    # -- steps ------------------------------------------------------------
    def train_step_d(self, batch: Dict[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
        m = self.models
        m.generator.train()
        set_requires_grad([m.generator, m.scn], False)
        set_requires_grad([m.discriminator], True)
        parts = discriminator_parts(m, batch, self.config, self.rng)
        _check_finite(parts, "D step")
        self.opt_d.zero_grad(set_to_none=True)
        parts["loss_D"].backward()
        self.opt_d.step()
        set_requires_grad([m.generator, m.scn], True)
        return parts

    def train_step_g(self, batch: Dict[str, torch.Tensor], rec_lab_weight: float) -> Dict[str, torch.Tensor]:
        m = self.models
        m.generator.train()
        set_requires_grad([m.discriminator], False)
        set_requires_grad([m.generator, m.scn], True)
        parts = generator_parts(m, batch, self.config, self.rng, rec_lab_weight)
        _check_finite(parts, "G step")
        self.opt_g.zero_grad(set_to_none=True)
        parts["loss_G"].backward()
        self.opt_g.step()
        set_requires_grad([m.discriminator], True)
        return parts

    def step(self) -> Dict[str, object]:
        it = self.iteration
        lr = self.current_lr(it)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        rec_lab = self.current_rec_lab(it)
        phase = self.phase_of(it)
        batch = batch_to_tensors(self.batch_at(it))
        row: Dict[str, object] = {
            "iteration": it, "epoch": self.epoch_of(it), "phase": phase.value, "lr": lr, "lambda_rec_lab": rec_lab,
        }
        w = self.config.weights
        if phase in (Phase.TRAIN_D, Phase.BOTH):
            parts = self.train_step_d(batch)
            row.update({k: parts[k].item() for k in D_PARTS})
            row["w_adv_d"] = -row["adv_d"]
            row["w_cls_real"] = w.cls * row["cls_real"]
        if phase in (Phase.TRAIN_G, Phase.BOTH):
            parts = self.train_step_g(batch, rec_lab)
            row.update({k: parts[k].item() for k in G_PARTS})
            row["w_adv_g"] = -row["adv_g"]
            row["w_cls_fake"] = w.cls * row["cls_fake"]
            row["w_rec_img"] = w.rec_img * row["rec_img"]
            row["w_seg"] = w.seg * row["seg"]
            row["w_rec_lab"] = rec_lab * row["rec_lab"]
        self.iteration += 1
        if self.val_data is not None and self.config.val_every and (
            self.iteration % self.config.val_every == 0 or self.iteration == self.config.total_iterations
        ):
            row.update(self.validate())
        self.history.append(row)
        return row

    def validate(self) -> Dict[str, float]:
        table = report(evaluate_dataset(self.models.generator, self.val_data), ["structure"])
        self.models.generator.train()
        return {f"val_{row['structure']}": row["dice_mean"] for row in table.rows}

    def run(self, until: Optional[int] = None, checkpoint_dir: Optional[Path] = None) -> List[Dict[str, object]]:
        until = self.config.total_iterations if until is None else until
        every = self.config.checkpoint_every
        while self.iteration < until:
            self.step()
            if checkpoint_dir is not None and every and self.iteration % every == 0:
                self.save(Path(checkpoint_dir) / "last.ckpt")
        return self.history

    # -- persistence ------------------------------------------------------
    def state_payload(self) -> Dict[str, object]:
        m = self.models
        return {
            "config": self.config.to_dict(),
            "generator_config": m.generator.config.to_dict(),
            "num_modalities": self.num_modalities,
            "state": {
                "generator": m.generator.state_dict(),
                "discriminator": m.discriminator.state_dict(),
                "scn": m.scn.state_dict(),
                "srn": m.srn.state_dict(),
            },
            "srn_config": {"num_classes": NUM_CLASSES, "base_width": self.config.srn_width, "depth": self.config.srn_depth},
            "optim": {"g": self.opt_g.state_dict(), "d": self.opt_d.state_dict()},
            "rng": self.rng.bit_generator.state,
            "iteration": self.iteration,
            "history": list(self.history),
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_checkpoint(path, "stdgn", self.state_payload())

    @classmethod
    def from_checkpoint(
        cls, path: Union[str, Path], train_data: DomainDataset, val_data: Optional[DomainDataset] = None
    ) -> "STDGNTrainer":
        blob = read_checkpoint(path, "stdgn")
        config = TrainConfig.from_dict(blob["config"])
        srn = ShapeReconstructionNet(**blob["srn_config"])
        srn.load_state_dict(blob["state"]["srn"])
        trainer = cls(config, train_data, srn, val_data)
        m = trainer.models
        m.generator.load_state_dict(blob["state"]["generator"])
        m.discriminator.load_state_dict(blob["state"]["discriminator"])
        m.scn.load_state_dict(blob["state"]["scn"])
        trainer.opt_g.load_state_dict(blob["optim"]["g"])
        trainer.opt_d.load_state_dict(blob["optim"]["d"])
        trainer.rng.bit_generator.state = blob["rng"]
        trainer.iteration = int(blob["iteration"])
        trainer.history = list(blob["history"])
        return trainer


def write_metrics(history: Sequence[Dict[str, object]], path: Union[str, Path]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return path


# -- baseline and SRN ---------------------------------------------------------


def labeled_subset(dataset: DomainDataset) -> DomainDataset:
    sub = dataset.subset(lambda r: r.label.is_labeled)
    if len(sub) == 0:
        raise ValueError("dataset has no labeled records")
    return sub


def train_baseline_unet(train_data: DomainDataset, config: TrainConfig, history: Optional[list] = None) -> UNet:
    """Fully supervised U-Net on labeled records with cross entropy only."""
    data = StackedDataset(labeled_subset(train_data))
    torch.manual_seed(config.seed + 1)
    model = UNet(config.base_width, config.depth)
    model.image_size = config.image_size
    opt = _sgd(model.parameters(), config, lr=config.baseline_lr)
    per_epoch = math.ceil(len(data) / config.batch_size)
    model.train()
    for it in range(config.baseline_iterations):
        epoch, j = divmod(it, per_epoch)
        if j == 0:
            order = epoch_order(len(data), config.seed + 1, epoch)
        for group in opt.param_groups:
            group["lr"] = lr_schedule(it, config.baseline_lr, config.lr_step, config.lr_divisor)
        idx = order[j * config.batch_size : (j + 1) * config.batch_size]
        batch = batch_to_tensors(data.batch(idx))
        loss = F.cross_entropy(model(batch["images"]), batch["labels"])
        if not torch.isfinite(loss):
            raise NonFiniteLossError(f"baseline step {it}: cross entropy is not finite")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if history is not None:
            history.append(loss.item())
    return model.eval()


@torch.no_grad()
def predict_probs(model: torch.nn.Module, images: np.ndarray, chunk: int = 32) -> np.ndarray:
    from stdgn.evaluation import segmentation_logits

    return F.softmax(segmentation_logits(model, images, chunk), dim=1).numpy()


def pretrain_srn(
    gold_labels: np.ndarray,
    predicted_probs: np.ndarray,
    config: TrainConfig,
    epoch_losses: Optional[list] = None,
) -> ShapeReconstructionNet:
    """Fit the SRN to map gold one-hot labels and baseline predictions back to the gold labels.

    ``gold_labels`` is (N, H, W) int; ``predicted_probs`` is (N, C, H, W)
    softmax output of the baseline on the same slices. Returns the SRN frozen.
    """
    if len(gold_labels) == 0:
        raise ValueError("SRN pretraining needs labeled data")
    gold = torch.from_numpy(np.asarray(gold_labels, dtype=np.int64))
    targets = one_hot_planes(gold)
    inputs = torch.cat([targets, torch.from_numpy(np.asarray(predicted_probs, dtype=np.float32))])
    targets = torch.cat([targets, targets])
    torch.manual_seed(config.seed + 2)
    srn = ShapeReconstructionNet(NUM_CLASSES, config.srn_width, config.srn_depth)
    opt = torch.optim.Adam(srn.parameters(), lr=config.srn_lr)
    srn.train()
    for epoch in range(config.srn_epochs):
        order = epoch_order(len(inputs), config.seed + 2, epoch)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = torch.from_numpy(order[start : start + config.batch_size])
            loss = F.mse_loss(srn(inputs[idx]), targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        if epoch_losses is not None:
            epoch_losses.append(total / len(order))
    return freeze(srn)


def srn_accuracy(srn: ShapeReconstructionNet, labels: np.ndarray) -> float:
    """Fraction of pixels whose reconstruction argmax equals the input label."""
    with torch.no_grad():
        recon = srn(one_hot_planes(torch.from_numpy(np.asarray(labels, dtype=np.int64))))
    return float((recon.argmax(dim=1).numpy() == labels).mean())


@dataclass
class TrainResult:
    trainer: STDGNTrainer
    baseline: UNet
    srn: ShapeReconstructionNet
    srn_losses: List[float] = field(default_factory=list)
    baseline_losses: List[float] = field(default_factory=list)


def save_unet(model: UNet, config: TrainConfig, path: Union[str, Path]) -> Path:
    return save_checkpoint(
        path,
        "unet",
        {
            "config": config.to_dict(),
            "unet_config": {"base_width": config.base_width, "depth": config.depth, "num_classes": NUM_CLASSES},
            "state": {"unet": model.state_dict()},
        },
    )


def save_srn(srn: ShapeReconstructionNet, config: TrainConfig, path: Union[str, Path]) -> Path:
    return save_checkpoint(
        path,
        "srn",
        {
            "config": config.to_dict(),
            "srn_config": {"num_classes": NUM_CLASSES, "base_width": config.srn_width, "depth": config.srn_depth},
            "state": {"srn": srn.state_dict()},
        },
    )


def load_srn(path: Union[str, Path]) -> ShapeReconstructionNet:
    blob = read_checkpoint(path, "srn")
    srn = ShapeReconstructionNet(**blob["srn_config"])
    srn.load_state_dict(blob["state"]["srn"])
    return freeze(srn)


def srn_from_baseline(baseline: torch.nn.Module, train_data: DomainDataset, config: TrainConfig, epoch_losses=None):
    labeled = labeled_subset(train_data)
    images = np.stack([r.image.pixels for r in labeled.records])
    gold = np.stack([r.label.classes for r in labeled.records]).astype(np.int64)
    return pretrain_srn(gold, predict_probs(baseline, images), config, epoch_losses)


def train(
    config: TrainConfig,
    train_data: DomainDataset,
    val_data: Optional[DomainDataset] = None,
    out_dir: Optional[Union[str, Path]] = None,
    baseline: Optional[UNet] = None,
    srn: Optional[ShapeReconstructionNet] = None,
) -> TrainResult:
    """Baseline U-Net -> SRN pretraining -> main loop, with checkpoints and metrics under ``out_dir``.

    A supplied ``baseline`` or ``srn`` skips the corresponding pretraining stage.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    baseline_losses: List[float] = []
    if baseline is None:
        log.info("training baseline U-Net for %d iterations", config.baseline_iterations)
        baseline = train_baseline_unet(train_data, config, baseline_losses)
    srn_losses: List[float] = []
    if srn is None:
        srn = srn_from_baseline(baseline, train_data, config, srn_losses)
    trainer = STDGNTrainer(config, train_data, srn, val_data)
    if out is not None:
        save_unet(baseline, config, out / "baseline.ckpt")
        save_srn(srn, config, out / "srn.ckpt")
    log.info("main loop: %d iterations", config.total_iterations)
    trainer.run(checkpoint_dir=out)
    if out is not None:
        trainer.save(out / "final.ckpt")
        write_metrics(trainer.history, out / "metrics.csv")
    return TrainResult(trainer, baseline, srn, srn_losses, baseline_losses)
