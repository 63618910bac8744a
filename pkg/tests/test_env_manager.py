import pytest

import core.env_manager as env_manager
from core.env_manager import (
    ConfigError,
    RunConfig,
    parse_config,
    parse_flags,
    write_config,
)


def write_env(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults_without_sources():
    cfg = parse_config(use_app_defaults=False)
    assert cfg == RunConfig()
    assert cfg.stem == "minimize_1d_s0.5_theta1_n64"


def test_out_of_range_order_names_the_key():
    with pytest.raises(ConfigError) as e:
        parse_config(flags={"s": "1.2"}, use_app_defaults=False)
    assert e.value.key == "s"


def test_flags_win_over_file(tmp_path):
    path = write_env(tmp_path / "run.env", "THETA=0.5\nn=8,16,32\nexperiment=scaling\n")
    cfg = parse_config(path, ["--theta=2", "--jobs=3"], use_app_defaults=False)
    assert cfg.theta == 2.0
    assert cfg.n == (8, 16, 32)
    assert cfg.jobs == 3
    assert cfg.workers == 3
    assert cfg.stem == "scaling_1d_s0.5_theta2_n8-16-32"


@pytest.mark.parametrize("flags,key", [
    ({"colour": "red"}, "colour"),
    ({"n": "8,abc"}, "n"),
    ({"n": "7"}, "n"),
    ({"d": "3"}, "d"),
    ({"site": "1,2"}, "site"),
    ({"overwrite": "maybe"}, "overwrite"),
    ({"theta": "nan"}, "theta"),
])
def test_rejects(flags, key):
    with pytest.raises(ConfigError) as e:
        parse_config(flags=flags, use_app_defaults=False)
    assert e.value.key == key


def test_experiment_specific_checks():
    with pytest.raises(ConfigError) as e:
        parse_config(flags={"experiment": "variance", "realizations": "10"},
                     use_app_defaults=False)
    assert e.value.key == "realizations"
    with pytest.raises(ConfigError):
        parse_config(flags={"experiment": "scaling", "n": "8,16"}, use_app_defaults=False)


def test_parse_flags():
    assert parse_flags(["--overwrite", "--k-gap=false", "--n=4,8"]) == {
        "overwrite": "true", "k-gap": "false", "n": "4,8",
    }
    cfg = parse_config(flags=["--overwrite", "--k-gap=false"], use_app_defaults=False)
    assert cfg.overwrite and not cfg.k_gap
    with pytest.raises(ConfigError):
        parse_flags(["theta=1"])


def test_optional_values():
    cfg = parse_config(flags={"k": "auto", "pad": "none", "cache_dir": ""},
                       use_app_defaults=False)
    assert cfg.k is None and cfg.pad is None and cfg.cache_dir is None


def test_write_and_parse_round_trip(tmp_path):
    cfg = parse_config(
        flags={"experiment": "gap", "d": "2", "s": "0.7", "n": "4,8", "site": "0,1",
               "theta": "0.25", "quiet": "true", "h_list": "0.1,0.01"},
        use_app_defaults=False,
    )
    path = write_config(cfg, tmp_path / "gap.env")
    assert parse_config(path, use_app_defaults=False) == cfg


def test_app_defaults(tmp_path, monkeypatch):
    env = write_env(tmp_path / ".env", "OUT=/tmp/runs\nJOBS=2\nTHETA=9\n")
    monkeypatch.setattr(env_manager, "ENV_PATH", env)
    cfg = parse_config()
    assert cfg.out == "/tmp/runs"
    assert cfg.jobs == 2
    # only out/jobs/cache_dir are taken from the application .env
    assert cfg.theta == 1.0
    assert parse_config(flags={"jobs": "1"}).jobs == 1


def test_missing_config_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        parse_config(tmp_path / "nope.env", use_app_defaults=False)
