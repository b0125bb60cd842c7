"""Loss-level checks shared by the unit tests and the acceptance suite."""

import pytest
import torch

from stdgn import losses as L

import fdcheck
import oracles


def tanh_critic(weights):
    def critic(x):
        return (weights * torch.tanh(x)).sum(dim=(1, 2, 3))

    return critic


def make_tiny(seed=0):
    """Random 2x2 images, batch 3, K=4, in float64."""
    g = torch.Generator().manual_seed(seed)
    return {
        "w": torch.randn(1, 1, 2, 2, generator=g, dtype=torch.float64),
        "real": torch.randn(3, 1, 2, 2, generator=g, dtype=torch.float64),
        "fake": torch.randn(3, 1, 2, 2, generator=g, dtype=torch.float64),
        "eps": torch.rand(3, generator=g, dtype=torch.float64),
        "logits": torch.randn(3, 4, generator=g, dtype=torch.float64),
        "onehot": torch.eye(4, dtype=torch.float64)[[0, 3, 1]],
        "seg_logits": torch.randn(3, 4, 2, 2, generator=g, dtype=torch.float64),
        "labels": torch.randint(0, 4, (3, 2, 2), generator=g),
        "mask": torch.tensor([True, False, True]),
        "r_gold": torch.randn(3, 4, 2, 2, generator=g, dtype=torch.float64),
        "r_pred": torch.randn(3, 4, 2, 2, generator=g, dtype=torch.float64),
        "p_true": torch.rand(3, generator=g, dtype=torch.float64) * 2 - 1,
        "p_pred": torch.rand(3, generator=g, dtype=torch.float64) * 2 - 1,
    }


# -- scalar-loop oracle equivalence (2x2 images, K=4) -------------------------


def nested(t):
    return t.tolist()


def oracle_equivalence(t):
    """Compare every loss operation with its scalar-loop oracle; raises AssertionError on mismatch."""
    critic = tanh_critic(t["w"])
    w = nested(t["w"][0, 0])
    reals, fakes, eps = nested(t["real"][:, 0]), nested(t["fake"][:, 0]), t["eps"].tolist()

    gp = L.gradient_penalty(critic, t["real"], t["fake"], eps=t["eps"]).item()
    assert gp == pytest.approx(oracles.gradient_penalty(w, reals, fakes, eps), abs=1e-6)

    adv_d = L.adv_loss_d(critic, t["real"], t["fake"], 10.0, eps=t["eps"]).item()
    assert adv_d == pytest.approx(oracles.adv_loss_d(w, reals, fakes, eps, 10.0), abs=1e-6)

    adv_g = L.adv_loss_g(critic, t["fake"]).item()
    assert adv_g == pytest.approx(oracles.adv_loss_g(w, fakes), abs=1e-6)

    cls = L.cls_loss_real(t["logits"], t["onehot"]).item()
    assert cls == pytest.approx(oracles.cls_loss(nested(t["logits"]), nested(t["onehot"])), abs=1e-6)
    cls_f = L.cls_loss_fake(t["logits"], t["onehot"]).item()
    assert cls_f == pytest.approx(cls, abs=0)

    cyc = L.cycle_image_loss(t["real"], t["fake"]).item()
    assert cyc == pytest.approx(oracles.l1(reals, fakes), abs=1e-6)

    mask = t["mask"].tolist()
    sr = L.sr_loss(t["r_gold"], t["r_pred"], t["mask"]).item()
    assert sr == pytest.approx(oracles.sr_loss(nested(t["r_gold"]), nested(t["r_pred"]), mask), abs=1e-6)

    sc = L.sc_loss(t["p_true"], t["p_pred"]).item()
    assert sc == pytest.approx(oracles.sc_loss(t["p_true"].tolist(), t["p_pred"].tolist()), abs=1e-6)

    ce = L.cross_entropy_seg(t["seg_logits"], t["labels"], t["mask"]).item()
    assert ce == pytest.approx(
        oracles.cross_entropy_seg(nested(t["seg_logits"]), nested(t["labels"]), mask), abs=1e-6
    )

    weights = L.LossWeights()

    def f64(v):
        return torch.tensor(v, dtype=torch.float64)

    comp = L.composite_seg_loss(L.SegTerms(f64(ce), f64(sr), f64(sc)), weights).item()
    assert comp == pytest.approx(oracles.composite(ce, sr, sc, 100.0, 1.0), abs=1e-6)

    td = L.total_loss_d({"adv_d": f64(adv_d), "cls_real": f64(cls)}, weights).item()
    assert td == pytest.approx(oracles.total_d(adv_d, cls, 10.0), abs=1e-6)
    parts = {k: f64(v) for k, v in dict(adv_g=adv_g, cls_fake=cls, rec_img=cyc, seg=comp, rec_lab=comp).items()}
    tg = L.total_loss_g(parts, weights, rec_lab_weight=37.5).item()
    wd = {"cls": 10.0, "rec_img": 100.0, "seg": 100.0, "rec_lab": 37.5}
    assert tg == pytest.approx(oracles.total_g(adv_g, cls, cyc, comp, comp, wd), rel=1e-9)


# -- finite-difference gradient checks ---------------------------------------

TOL = 1e-3


def loss_gradient_errors(tiny):
    """Relative finite-difference error of every loss w.r.t. its differentiable inputs."""
    t = {k: v.clone() for k, v in tiny.items()}
    for key in ("real", "fake", "logits", "seg_logits", "r_pred", "p_pred", "w"):
        t[key].requires_grad_(True)
    critic = tanh_critic(t["w"])
    eps = t["eps"]
    checks = {
        "gp/fake": (lambda: L.gradient_penalty(critic, t["real"], t["fake"], eps=eps), t["fake"]),
        "gp/critic": (lambda: L.gradient_penalty(critic, t["real"], t["fake"], eps=eps), t["w"]),
        "adv_d/real": (lambda: L.adv_loss_d(critic, t["real"], t["fake"], 10.0, eps=eps), t["real"]),
        "adv_d/critic": (lambda: L.adv_loss_d(critic, t["real"], t["fake"], 10.0, eps=eps), t["w"]),
        "adv_g/fake": (lambda: L.adv_loss_g(critic, t["fake"]), t["fake"]),
        "cls_real": (lambda: L.cls_loss_real(t["logits"], t["onehot"]), t["logits"]),
        "cls_fake": (lambda: L.cls_loss_fake(t["logits"], t["onehot"]), t["logits"]),
        "cycle": (lambda: L.cycle_image_loss(t["real"], t["fake"]), t["fake"]),
        "sr": (lambda: L.sr_loss(t["r_gold"], t["r_pred"], t["mask"]), t["r_pred"]),
        "sc": (lambda: L.sc_loss(t["p_true"], t["p_pred"]), t["p_pred"]),
        "ce": (lambda: L.cross_entropy_seg(t["seg_logits"], t["labels"], t["mask"]), t["seg_logits"]),
    }
    return {name: fdcheck.check(fn, wrt) for name, (fn, wrt) in checks.items()}


def recalibrate_gradient_errors(seed=0):
    """Finite-difference errors of cross_task_recalibrate w.r.t. each of its six inputs."""
    from stdgn.networks import cross_task_recalibrate

    g = torch.Generator().manual_seed(seed)
    shapes = {"f_seg": (4, 3, 3), "f_tsl": (4, 3, 3), "w1": (2, 4), "b1": (2,), "w2": (4, 2), "b2": (4,)}
    t = {k: torch.randn(*s, generator=g, dtype=torch.float64, requires_grad=True) for k, s in shapes.items()}
    probe = torch.randn(4, 3, 3, generator=g, dtype=torch.float64)

    def fn():
        return (cross_task_recalibrate(t["f_seg"], t["f_tsl"], t["w1"], t["b1"], t["w2"], t["b2"]) * probe).sum()

    return {name: fdcheck.check(fn, tensor) for name, tensor in t.items()}
