import pytest

from cdnode.config import ConfigError, RunConfig


def test_defaults_and_accessors():
    cfg = RunConfig.load()
    assert cfg.constraint().q == 0.15
    assert cfg.window().F == 6
    assert cfg.predict_solve().method == "dopri5"
    assert cfg.train().seed == cfg["seed"]


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\ndata.target = valence\ntrain.epochs = 3\n\nconstraint.mode = rate_only\n")
    cfg = RunConfig.load(p, ["train.epochs = 5", "constraint.validity_clamp = false"])
    assert cfg.window().F == 1
    assert cfg.train().epochs == 5
    assert cfg.constraint().mode == "rate_only"
    assert cfg.constraint().validity_clamp is False


def test_errors(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.load(overrides=["nope = 1"])
    with pytest.raises(ConfigError, match="parse"):
        RunConfig.load(overrides=["train.epochs = many"])
    with pytest.raises(ConfigError, match="admissibility"):
        RunConfig.load(overrides=["constraint.q = 0.2"])
    p = tmp_path / "bad.cfg"
    p.write_text("train.epochs\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        RunConfig.load(p)


def test_dump_round_trip(tmp_path):
    cfg = RunConfig.load(overrides=["seed = 4", "train.lr_mu = 0.002"])
    p = tmp_path / "dump.cfg"
    p.write_text(cfg.dump())
    assert RunConfig.load(p).values == cfg.values
