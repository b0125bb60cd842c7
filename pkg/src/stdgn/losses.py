"""Objective terms for the translate-and-segment GAN.

All reductions are batch means. Supervised terms (pixel cross entropy, shape
reconstruction) take a per-sample label mask and contribute exactly zero on
batches without labels; the slice-position term is never masked.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Dict, Optional

import numpy as np
import torch
import torch.nn.functional as F

Critic = Callable[[torch.Tensor], torch.Tensor]


@dataclass
class LossWeights:
    gp: float = 10.0
    cls: float = 10.0
    seg: float = 100.0
    rec_img: float = 100.0
    rec_lab: float = 100.0  # end value of the ramp; the trainer schedules it from 0
    sr: float = 100.0
    sc: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be >= 0, got {value}")

    def to_dict(self):
        return asdict(self)


def _zero(like: torch.Tensor) -> torch.Tensor:
    # keeps dtype/device and graph membership without contributing gradient
    return (like * 0).sum()


def sample_interpolation_weights(rng: np.random.Generator, batch_size: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=batch_size)


def gradient_penalty(
    critic: Critic,
    x_real: torch.Tensor,
    x_fake: torch.Tensor,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Mean of (||grad critic(x_hat)||_2 - 1)**2 over interpolates x_hat.

    ``x_hat = eps * x_real + (1 - eps) * x_fake`` with one ``eps ~ U(0, 1)``
    per sample, drawn from ``rng`` unless given explicitly. The graph is kept
    so the penalty can be backpropagated into the critic.
    """
    if x_real.shape != x_fake.shape:
        raise ValueError(f"real/fake shape mismatch: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}")
    b = x_real.shape[0]
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = torch.as_tensor(sample_interpolation_weights(rng, b), dtype=x_real.dtype)
    eps = eps.reshape((b,) + (1,) * (x_real.dim() - 1)).to(x_real)
    x_hat = (eps * x_real + (1 - eps) * x_fake).requires_grad_(True)
    scores = critic(x_hat)
    if not torch.is_tensor(scores) or scores.grad_fn is None or not scores.is_floating_point():
        raise RuntimeError("critic output is not differentiable with respect to its input")
    (grad,) = torch.autograd.grad(scores.sum(), x_hat, create_graph=True)
    norms = torch.linalg.vector_norm(grad.reshape(b, -1), dim=1)
    return ((norms - 1) ** 2).mean()


def adv_loss_d(
    critic: Critic,
    x_real: torch.Tensor,
    x_fake: torch.Tensor,
    lambda_gp: float = 10.0,
    rng: Optional[np.random.Generator] = None,
    eps: Optional[torch.Tensor] = None,
    parts: Optional[Dict[str, torch.Tensor]] = None,
) -> torch.Tensor:
    """E[critic(real)] - E[critic(fake)] - lambda_gp * penalty.

    The critic maximizes this; ``total_loss_d`` negates it. Pass a dict as
    ``parts`` to receive the unweighted penalty.
    """
    gp = gradient_penalty(critic, x_real, x_fake, rng=rng, eps=eps)
    if parts is not None:
        parts["gp"] = gp
    return critic(x_real).mean() - critic(x_fake).mean() - lambda_gp * gp


def adv_loss_g(critic: Critic, x_fake: torch.Tensor) -> torch.Tensor:
    """Mean critic score of translated images; the generator maximizes it."""
    return critic(x_fake).mean()


def _target_log_likelihood(logits: torch.Tensor, target: torch.Tensor, soft: bool) -> torch.Tensor:
    if logits.shape != target.shape:
        raise ValueError(f"logits/target shape mismatch: {tuple(logits.shape)} vs {tuple(target.shape)}")
    log_probs = F.log_softmax(logits, dim=1)
    if soft:
        return (target.to(log_probs) * log_probs).sum(dim=1)
    is_binary = torch.all((target == 0) | (target == 1))
    if not bool(is_binary) or not torch.all(target.sum(dim=1) == 1):
        raise ValueError("modality target must be one-hot (pass soft=True for soft codes)")
    return log_probs.gather(1, target.argmax(dim=1, keepdim=True)).squeeze(1)


def cls_loss_real(cls_logits: torch.Tensor, source: torch.Tensor, soft: bool = False) -> torch.Tensor:
    """-log D_cls(v | x) averaged over the batch."""
    return -_target_log_likelihood(cls_logits, source, soft).mean()


def cls_loss_fake(cls_logits: torch.Tensor, target: torch.Tensor, soft: bool = False) -> torch.Tensor:
    """-log D_cls(v' | x') averaged over the batch."""
    return -_target_log_likelihood(cls_logits, target, soft).mean()


def cycle_image_loss(x: torch.Tensor, x_rec: torch.Tensor) -> torch.Tensor:
    if x.shape != x_rec.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_rec.shape)}")
    return (x - x_rec).abs().mean()


def sr_loss(r_gold: torch.Tensor, r_pred: torch.Tensor, label_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Squared distance between SRN reconstructions, averaged over elements
    and then over labeled samples."""
    if r_gold.shape != r_pred.shape:
        raise ValueError(f"shape mismatch: {tuple(r_gold.shape)} vs {tuple(r_pred.shape)}")
    per_sample = ((r_gold - r_pred) ** 2).reshape(r_gold.shape[0], -1).mean(dim=1)
    if label_mask is None:
        return per_sample.mean()
    label_mask = label_mask.to(torch.bool)
    if not bool(label_mask.any()):
        return _zero(r_pred)
    return per_sample[label_mask].mean()


def sc_loss(p_true: torch.Tensor, p_pred: torch.Tensor) -> torch.Tensor:
    """Mean squared error of slice positions."""
    if p_true.shape != p_pred.shape:
        raise ValueError(f"shape mismatch: {tuple(p_true.shape)} vs {tuple(p_pred.shape)}")
    return ((p_true.to(p_pred) - p_pred) ** 2).mean()


def cross_entropy_seg(
    logits: torch.Tensor, labels: torch.Tensor, label_mask: Optional[torch.Tensor] = None
) -> torch.Tensor:
    """Pixelwise cross entropy averaged over pixels of labeled samples."""
    if label_mask is None:
        return F.cross_entropy(logits, labels)
    label_mask = label_mask.to(torch.bool)
    if not bool(label_mask.any()):
        return _zero(logits)
    return F.cross_entropy(logits[label_mask], labels[label_mask])


@dataclass
class SegTerms:
    ce: torch.Tensor
    sr: torch.Tensor
    sc: torch.Tensor


def composite_seg_loss(terms: SegTerms, weights: LossWeights) -> torch.Tensor:
    """L_CE + lambda_sr * L_SR + lambda_sc * L_SC for one prediction branch."""
    return terms.ce + weights.sr * terms.sr + weights.sc * terms.sc


def total_loss_d(parts: Dict[str, torch.Tensor], weights: LossWeights) -> torch.Tensor:
    return -parts["adv_d"] + weights.cls * parts["cls_real"]


def total_loss_g(parts: Dict[str, torch.Tensor], weights: LossWeights, rec_lab_weight: Optional[float] = None):
    """Generator objective. ``rec_lab_weight`` overrides ``weights.rec_lab``
    with the current ramp value."""
    w_rec_lab = weights.rec_lab if rec_lab_weight is None else rec_lab_weight
    return (
        -parts["adv_g"]
        + weights.cls * parts["cls_fake"]
        + weights.rec_img * parts["rec_img"]
        + weights.seg * parts["seg"]
        + w_rec_lab * parts["rec_lab"]
    )
