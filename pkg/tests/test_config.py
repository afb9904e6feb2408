import json
import math

import pytest

from coldamp.config import ConfigError, RunConfig, env_overrides
from coldamp.params import ParamsError, desk_params


def test_defaults_are_desk_preset():
    cfg = RunConfig()
    p = cfg.validated()
    ref = desk_params()
    assert p.nu == pytest.approx(ref.nu)
    assert p.gamma_in == pytest.approx(ref.gamma_in)
    assert cfg.feedback().phase == -math.pi / 2


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="bogus"):
        RunConfig.from_dict({"bogus": 1})


def test_load_file_and_environment(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "n_traj": 2, "fb_mode": "filter"}))
    env = {"COLDAMP_SEED": "9", "COLDAMP_GAINS": "[0, 1.5]", "COLDAMP_FB_MODE": "ideal",
           "UNRELATED": "x"}
    cfg = RunConfig.load(path, environ=env)
    assert cfg.seed == 9
    assert cfg.n_traj == 2
    assert cfg.gains == [0, 1.5]
    # non-JSON values fall back to the raw string
    assert cfg.fb_mode == "ideal"


def test_environment_typo_rejected():
    with pytest.raises(ConfigError, match="COLDAMP_SEEED"):
        env_overrides({"COLDAMP_SEEED": "1"})


@pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
def test_bad_file(tmp_path, text):
    path = tmp_path / "c.json"
    path.write_text(text)
    with pytest.raises(ConfigError):
        RunConfig.load(path, environ={})


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "absent.json", environ={})


@pytest.mark.parametrize("bad", [{"t_total_s": 0}, {"n_traj": 0}, {"n_traj": 1.5},
                                 {"gains": [1, -1]}, {"dt_sme_s": -1e-9}])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_invalid_loop_setting():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"fb_mode": "analog"})


def test_physics_checked_on_use():
    cfg = RunConfig.from_dict({"eta": 0.9})
    with pytest.raises(ParamsError):
        cfg.validated()


def test_roundtrip_through_dict():
    cfg = RunConfig.from_dict({"seed": 4, "gains": [0.0, 2.0]})
    assert RunConfig.from_dict(cfg.to_dict()) == cfg
    assert "extra" not in cfg.to_dict()


def test_timebase_respects_step_limit():
    cfg = RunConfig()
    p = cfg.validated()
    tb = cfg.timebase(p)
    assert tb.dt_sme <= 1 / (50 * p.nu) * (1 + 1e-9)
    assert tb.n_samples == round(cfg.t_total_s / tb.dt_sample)
