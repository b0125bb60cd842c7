import copy
import csv

import numpy as np
import pytest
import torch

from stdgn.data import PhantomParams, generate_phantom_dataset
from stdgn.networks import ShapeReconstructionNet, freeze, parameter_snapshot
from stdgn.training import (
    METRIC_COLUMNS,
    NonFiniteLossError,
    Phase,
    STDGNTrainer,
    TrainConfig,
    alternation_controller,
    batch_to_tensors,
    generator_parts,
    lambda_ramp,
    lr_schedule,
    pretrain_srn,
    write_metrics,
)

TINY = dict(
    image_size=32, base_width=4, depth=2, se_reduction=2, disc_width=4, disc_layers=3,
    srn_width=4, srn_depth=1, scn_hidden=8, batch_size=16, val_every=0,
)


@pytest.fixture(scope="module")
def tiny_data():
    return generate_phantom_dataset(PhantomParams(seed=0, image_size=32, num_slices=4), "train")


def tiny_trainer(data, **overrides):
    config = TrainConfig(**{**TINY, **overrides})
    torch.manual_seed(123)
    srn = freeze(ShapeReconstructionNet(4, config.srn_width, config.srn_depth))
    return STDGNTrainer(config, data, srn)


def same_params(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


# -- schedules ---------------------------------------------------------------------------


@pytest.mark.parametrize("it,expected", [(0, 3e-4), (4999, 3e-4), (5000, 3e-5), (9999, 3e-5), (10000, 3e-6)])
def test_lr_schedule(it, expected):
    assert lr_schedule(it) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("it,expected", [(0, 0.0), (1500, 50.0), (3000, 100.0), (4500, 100.0), (750, 25.0)])
def test_lambda_ramp(it, expected):
    assert lambda_ramp(it, 6000) == pytest.approx(expected, abs=1e-12)


def test_alternation():
    assert alternation_controller(0) == Phase.TRAIN_G
    assert alternation_controller(49) == Phase.TRAIN_G
    assert alternation_controller(50) == Phase.TRAIN_D
    assert alternation_controller(100) == Phase.TRAIN_G
    for p in (1, 3, 7):
        phases = [alternation_controller(e, p) for e in range(4 * p)]
        flips = [e for e in range(1, 4 * p) if phases[e] != phases[e - 1]]
        assert flips == [p, 2 * p, 3 * p]
        assert phases.count(Phase.TRAIN_G) == phases.count(Phase.TRAIN_D)
    with pytest.raises(ValueError):
        alternation_controller(0, 0)


def test_config_round_trip_and_validation():
    c = TrainConfig(lr=1e-3, alternation="interleave")
    assert TrainConfig.from_dict(c.to_dict()) == c
    assert TrainConfig.from_dict({"lr": "0.5", "soft_targets": "true", "batch_size": "4"}).batch_size == 4
    with pytest.raises(ValueError, match="unknown"):
        TrainConfig.from_dict({"learning_rate": 1})
    with pytest.raises(ValueError):
        TrainConfig(alternation="sometimes")
    with pytest.raises(ValueError):
        TrainConfig(lr=0)


# -- steps -------------------------------------------------------------------------------------


def test_step_isolation(tiny_data):
    tr = tiny_trainer(tiny_data, alternation="interleave")
    m = tr.models
    batch = batch_to_tensors(tr.batch_at(0))
    d0, g0, s0, r0 = (parameter_snapshot(x) for x in (m.discriminator, m.generator, m.scn, m.srn))
    tr.train_step_g(batch, 10.0)
    assert same_params(d0, parameter_snapshot(m.discriminator))
    assert not same_params(g0, parameter_snapshot(m.generator))
    assert not same_params(s0, parameter_snapshot(m.scn))
    g1, s1 = parameter_snapshot(m.generator), parameter_snapshot(m.scn)
    tr.train_step_d(batch)
    assert same_params(g1, parameter_snapshot(m.generator))
    assert same_params(s1, parameter_snapshot(m.scn))
    assert not same_params(d0, parameter_snapshot(m.discriminator))
    assert same_params(r0, parameter_snapshot(m.srn))
    assert all(p.grad is None for p in m.srn.parameters())


def test_recovery_uses_negated_difference(tiny_data):
    tr = tiny_trainer(tiny_data)
    seen = []
    hook = tr.models.generator.register_forward_pre_hook(lambda mod, args: seen.append(args[0][:, 1:, 0, 0].clone()))
    try:
        parts = generator_parts(tr.models, batch_to_tensors(tr.batch_at(0)), tr.config, tr.rng, 1.0)
    finally:
        hook.remove()
    d_st, d_ts = seen
    assert torch.equal(d_st, parts["_d_st"])
    assert torch.equal(d_ts, -d_st)


def test_descent_probe(tiny_data):
    """One G step at a small learning rate lowers L_G under the same target draws."""
    tr = tiny_trainer(tiny_data, lr=1e-5, weight_decay=0.0)
    batch = batch_to_tensors(tr.batch_at(0))
    state = copy.deepcopy(tr.rng.bit_generator.state)

    def loss_now():
        rng = np.random.default_rng()
        rng.bit_generator.state = state
        with torch.no_grad():
            return generator_parts(tr.models, batch, tr.config, rng, 50.0)["loss_G"].item()

    before = loss_now()
    for group in tr.opt_g.param_groups:
        group["lr"] = 1e-5
    tr.rng.bit_generator.state = state
    tr.train_step_g(batch, 50.0)
    assert loss_now() < before


def test_nonfinite_loss_is_reported(tiny_data):
    tr = tiny_trainer(tiny_data)
    batch = batch_to_tensors(tr.batch_at(0))
    batch["images"][0, 0, 0, 0] = float("nan")
    with pytest.raises(NonFiniteLossError, match="loss part"):
        tr.train_step_g(batch, 1.0)


def test_batch_order_is_function_of_seed_and_iteration(tiny_data):
    a, b = tiny_trainer(tiny_data), tiny_trainer(tiny_data)
    for it in (0, 5, 9, 10, 30):
        assert np.array_equal(a.batch_at(it).indices, b.batch_at(it).indices)
    epoch0 = np.concatenate([a.batch_at(i).indices for i in range(a.batches_per_epoch)])
    assert sorted(epoch0.tolist()) == list(range(len(tiny_data)))


def test_block_mode_phases(tiny_data):
    tr = tiny_trainer(tiny_data, alternation="block", alternation_period=1)
    per = tr.batches_per_epoch
    assert tr.phase_of(0) == Phase.TRAIN_G
    assert tr.phase_of(per) == Phase.TRAIN_D
    assert tr.phase_of(2 * per) == Phase.TRAIN_G


# -- run, checkpoints, metrics -----------------------------------------------------------------


def test_resume_is_bit_exact(tiny_data, tmp_path):
    kw = dict(alternation="block", alternation_period=1, total_iterations=24, checkpoint_every=7)
    full = tiny_trainer(tiny_data, **kw)
    full.run(checkpoint_dir=tmp_path)
    # the periodic checkpoint holds iteration 21; resume from an earlier explicit one too
    part = tiny_trainer(tiny_data, **kw)
    part.run(until=10)
    part.save(tmp_path / "mid.ckpt")
    resumed = STDGNTrainer.from_checkpoint(tmp_path / "mid.ckpt", tiny_data)
    resumed.run()
    assert resumed.history == full.history
    assert same_params(parameter_snapshot(resumed.models.generator), parameter_snapshot(full.models.generator))
    assert same_params(
        parameter_snapshot(resumed.models.discriminator), parameter_snapshot(full.models.discriminator)
    )
    periodic = STDGNTrainer.from_checkpoint(tmp_path / "last.ckpt", tiny_data)
    assert periodic.iteration == 21
    periodic.run()
    assert periodic.history == full.history


def test_metrics_csv(tiny_data, tmp_path):
    tr = tiny_trainer(tiny_data, alternation="interleave", total_iterations=3)
    tr.run()
    path = write_metrics(tr.history, tmp_path / "m.csv")
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3
    assert tuple(rows[0]) == METRIC_COLUMNS
    assert float(rows[2]["loss_G"]) == tr.history[2]["loss_G"]


def test_srn_pretraining_requires_labels():
    with pytest.raises(ValueError):
        pretrain_srn(np.zeros((0, 8, 8), np.int64), np.zeros((0, 4, 8, 8), np.float32), TrainConfig(**TINY))
