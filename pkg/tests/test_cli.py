import csv
import filecmp

import numpy as np
import pytest

from stdgn.cli import RESOLVED_NAME, run
from stdgn.config import ConfigError, parse_config_text, resolve
from stdgn.data import load_dataset

TINY_CFG = """
# tiny networks so the whole chain runs in seconds
image_size = 32
base_width = 4
depth = 2
se_reduction = 2
disc_width = 4
disc_layers = 3
srn_width = 4
srn_depth = 1
scn_hidden = 8
batch_size = 8
baseline_iterations = 4
srn_epochs = 1
total_iterations = 4
checkpoint_every = 2
val_every = 2
alternation = interleave
"""


def cli(*argv, env=None):
    return run([str(a) for a in argv], env={} if env is None else env)


def same_tree(a, b, ignore=(RESOLVED_NAME,)):
    cmp = filecmp.dircmp(a, b, ignore=list(ignore))

    def walk(c):
        if c.left_only or c.right_only or c.funny_files:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        return not mismatch and not errors and all(walk(s) for s in c.subdirs.values())

    return walk(cmp)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "c.cfg").write_text(TINY_CFG)
    assert cli("gen-data", "--seed", 7, "--image-size", 32, "--num-slices", 2, "--out", root / "d") == 0
    assert cli("train", "--config", root / "c.cfg", "--data", root / "d", "--out", root / "run1") == 0
    return root


# -- config parsing ----------------------------------------------------------------------------


def test_parse_config_text():
    values = parse_config_text("a = 1\n# comment\n\nb=two # trailing\n")
    assert values == {"a": "1", "b": "two"}
    with pytest.raises(ConfigError, match="expected"):
        parse_config_text("just words")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("a = 1\na = 2")


def test_override_chain():
    config, extras = resolve({"lr": "0.1", "seed": "3"}, {"lr": "0.2", "out": "x"}, extra_keys=["out"], env={})
    assert config.lr == 0.2 and config.seed == 3 and extras == {"out": "x"}
    config, _ = resolve({}, {}, preset="desk", env={"STDGN_SEED": "9"})
    assert config.seed == 9 and config.base_width == 8
    config, _ = resolve({"seed": "4"}, {}, env={"STDGN_SEED": "9"})
    assert config.seed == 4
    with pytest.raises(ConfigError, match="unknown config key"):
        resolve({"nonsense": "1"}, {}, env={})
    with pytest.raises(ConfigError):
        resolve({"lr": "fast"}, {}, env={})


# -- commands ------------------------------------------------------------------------------------


def test_gen_data_is_deterministic(tmp_path):
    assert cli("gen-data", "--seed", 7, "--image-size", 32, "--num-slices", 2, "--out", tmp_path / "a") == 0
    assert cli("gen-data", "--seed", 7, "--image-size", 32, "--num-slices", 2, "--out", tmp_path / "b") == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    assert load_dataset(tmp_path / "a" / "train").equals(load_dataset(tmp_path / "b" / "train"))


def test_seed_env_fallback(tmp_path):
    assert cli("gen-data", "--image-size", 32, "--num-slices", 2, "--out", tmp_path / "env", env={"STDGN_SEED": "7"}) == 0
    assert cli("gen-data", "--seed", 7, "--image-size", 32, "--num-slices", 2, "--out", tmp_path / "flag") == 0
    assert same_tree(tmp_path / "env", tmp_path / "flag")


def test_resolved_config_reproduces_run(tmp_path):
    assert cli("gen-data", "--seed", 3, "--image-size", 32, "--num-slices", 2, "--out", tmp_path / "a") == 0
    echo = tmp_path / "a" / RESOLVED_NAME
    assert "seed = 3" in echo.read_text()
    assert cli("gen-data", "--config", echo, "--out", tmp_path / "b") == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")


def test_train_outputs(workspace):
    run1 = workspace / "run1"
    for name in ("baseline.ckpt", "srn.ckpt", "final.ckpt", "last.ckpt", "metrics.csv", RESOLVED_NAME):
        assert (run1 / name).exists(), name
    with (run1 / "metrics.csv").open() as fh:
        assert len(list(csv.DictReader(fh))) == 4


def test_evaluate_and_report(workspace):
    out = workspace / "eval"
    assert cli("evaluate", "--model", workspace / "run1" / "final.ckpt", "--data", workspace / "d",
               "--split", "test", "--out", out) == 0
    test = load_dataset(workspace / "d" / "test")
    with (out / "records.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 3 * len(test.subjects())
    assert (out / "report.csv").exists()
    assert cli("report", "--records", out / "records.csv", "--group-by", "phase", "--out", workspace / "rep") == 0
    with (workspace / "rep" / "report.csv").open() as fh:
        assert [r["phase"] for r in csv.DictReader(fh)] == ["ED", "ES"]
    # the baseline checkpoint is evaluable too
    assert cli("evaluate", "--model", workspace / "run1" / "baseline.ckpt", "--data", workspace / "d",
               "--out", workspace / "eval_unet") == 0


def test_segment(workspace):
    assert cli("segment", "--model", workspace / "run1" / "final.ckpt", "--data", workspace / "d",
               "--split", "val", "--out", workspace / "seg") == 0
    seg = load_dataset(workspace / "seg" / "segmentation")
    assert len(seg) == len(load_dataset(workspace / "d" / "val"))
    assert all(r.label.is_labeled and r.label.classes.max() <= 3 for r in seg.records)


def test_translate(workspace, tmp_path):
    img = np.random.default_rng(0).normal(size=(32, 32)).astype("<f4")
    img.tofile(tmp_path / "s.img")
    assert cli("translate", "--model", workspace / "run1" / "final.ckpt", "--image", tmp_path / "s.img",
               "--target", 2, "--out", tmp_path / "t") == 0
    out = np.fromfile(tmp_path / "t" / "translated.img", dtype="<f4")
    assert out.shape == (32 * 32,) and np.isfinite(out).all()
    assert cli("translate", "--model", workspace / "run1" / "final.ckpt", "--image", tmp_path / "s.img",
               "--target", 9, "--out", tmp_path / "t") == 1


def test_staged_pipeline_and_resume(workspace):
    cfg, data = workspace / "c.cfg", workspace / "d"
    assert cli("pretrain-baseline", "--config", cfg, "--data", data, "--out", workspace / "b") == 0
    assert cli("pretrain-srn", "--config", cfg, "--data", data, "--baseline", workspace / "b" / "baseline.ckpt",
               "--out", workspace / "s") == 0
    assert cli("train", "--config", cfg, "--data", data, "--baseline", workspace / "b" / "baseline.ckpt",
               "--srn", workspace / "s" / "srn.ckpt", "--out", workspace / "staged") == 0
    # continuing the periodic checkpoint (iteration 4 of 4) leaves the run unchanged
    assert cli("train", "--config", cfg, "--data", data, "--resume", workspace / "run1" / "last.ckpt",
               "--out", workspace / "resumed") == 0
    assert (workspace / "resumed" / "metrics.csv").read_text() == (workspace / "run1" / "metrics.csv").read_text()


@pytest.mark.parametrize(
    "argv,code",
    [
        (["gen-data", "--bogus", "1", "--out", "{t}/x"], 1),
        (["evaluate", "--data", "{t}"], 1),
        (["nosuchcommand"], 1),
        (["train", "--config", "{t}/missing.cfg", "--data", "{t}", "--out", "{t}/x"], 1),
        (["train", "--lr", "fast", "--data", "{t}", "--out", "{t}/x"], 1),
        (["evaluate", "--model", "{t}/none.ckpt", "--data", "{t}", "--out", "{t}/x"], 2),
        (["pretrain-baseline", "--data", "{t}/nodata", "--out", "{t}/x"], 2),
        (["report", "--records", "{t}/r.csv", "--group-by", "colour", "--out", "{t}/x"], 1),
    ],
)
def test_exit_codes(tmp_path, argv, code):
    (tmp_path / "r.csv").write_text("subject_id,vendor_id,center_id,phase,structure,dice,hd\n")
    assert cli(*[a.format(t=tmp_path) for a in argv]) == code


def test_help_exits_zero(capsys):
    assert cli("--help") == 0
    assert "gen-data" in capsys.readouterr().out
