import pytest

from majchain.config import (ConfigError, apply_overrides, config_hash, defaults, load, parse_assignment,
                             rule_dict, validate_top)


def test_load_and_merge(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('seed = 5\n[scales]\nalpha = 0.1\nk_star = 7\n[rule]\nkind = "tilde"\nlam = 2.0\ndelta = 0.5\n'
                 '[rule.base]\nkind = "tanh"\nbeta = 1.0\n')
    cfg = load(str(p))
    assert cfg["seed"] == 5 and cfg["scales"]["alpha"] == 0.1 and cfg["scales"]["epsilon_star"] == 0.5
    assert rule_dict(cfg) == {"kind": "tilde", "lam": 2.0, "delta": 0.5, "base": {"kind": "tanh", "beta": 1.0}}


@pytest.mark.parametrize("text, field", [
    ("bogus = 1\n", "bogus"),
    ("[scales]\nnope = 1\n", "scales.nope"),
    ("scales = 3\n", "scales"),
    ("seed = \n", "--config"),
])
def test_load_errors(tmp_path, text, field):
    p = tmp_path / "c.toml"
    p.write_text(text)
    with pytest.raises(ConfigError) as e:
        load(str(p))
    assert e.value.field == field


def test_missing_file():
    with pytest.raises(ConfigError):
        load("/nonexistent/c.toml")


def test_overrides():
    cfg = apply_overrides(defaults(), {"seed": 9, "threads": None}, ("chain.n=[1, 3]", "rule.kind=tanh"))
    assert cfg["seed"] == 9 and cfg["threads"] == 1
    assert cfg["chain"]["n"] == [1, 3] and cfg["rule"]["kind"] == "tanh"
    assert parse_assignment("a.b=0.5") == (["a", "b"], 0.5)
    with pytest.raises(ConfigError):
        apply_overrides(defaults(), {}, ("chain.zzz=1",))
    with pytest.raises(ConfigError):
        parse_assignment("novalue")


@pytest.mark.parametrize("key, value", [("seed", -1), ("replicas", 0), ("threads", 0), ("formats", ["pdf"])])
def test_validate_top(key, value):
    cfg = defaults()
    cfg[key] = value
    with pytest.raises(ConfigError) as e:
        validate_top(cfg)
    assert e.value.field == key


def test_hash_ignores_scheduling():
    a, b = defaults(), defaults()
    b["threads"], b["out"], b["formats"] = 8, "elsewhere", ["svg"]
    assert config_hash("chain", a) == config_hash("chain", b)
    b["seed"] = 1
    assert config_hash("chain", a) != config_hash("chain", b)
    assert config_hash("chain", a) != config_hash("toy", a)
    assert len(config_hash("x", a)) == 12
