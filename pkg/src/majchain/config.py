"""Run configuration: TOML file, defaults, flag overrides and validation."""
from __future__ import annotations

import copy
import hashlib
import sys
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .io import dumps_json

FORMATS = ("csv", "json", "svg")

TOP = {
    "seed": 0,
    "replicas": 1000,
    "out": "out",
    "formats": ["csv", "json"],
    "threads": 1,
    "budget": 1 << 22,
}

SECTIONS: dict[str, dict[str, Any]] = {
    "scales": {"epsilon_star": 0.5, "k_star": 3, "alpha": 0.4, "h_custom": None, "ell_custom": None,
               "k_max": 6},
    "rule": {"kind": "pure", "lam": None, "delta": None, "beta": None, "base": None, "points": None},
    "chain": {"n": 101, "h": 0.5, "depth": 5, "k_lo": 1, "xi_M": 1.0, "from_table": False,
              "n_cap": 10 ** 6, "coupled": False, "lam": 1.0, "delta": 1.0, "L": None, "dump": True},
    "criterion": {"K": None},
    "toy": {"h": 0.5, "mu_M": 1.0, "depth": 5, "k_lo": 0},
    "env": {"scales": None, "window": 1 << 18, "connectivity_k": None, "connectivity_K": None},
    "blocks": {"window": [0, 255], "scales": None},
    "phase_scan": {"epsilons": [0.5], "alphas": [0.1, 0.4], "depth": 10, "n_cap": 10 ** 4,
                   "rules": ["pure", "identity"], "h_zero_row": True},
    "gap": {"sites": [0], "Ns": [4, 16, 64], "window": [-(1 << 20), 1024], "k_max": 7},
}

# keys that change scheduling or file layout but never results
NOT_HASHED = ("threads", "out", "formats")


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def defaults() -> dict:
    d = copy.deepcopy(TOP)
    for name, sec in SECTIONS.items():
        d[name] = copy.deepcopy(sec)
    return d


def _merge(base: dict, new: dict, where: str = "") -> None:
    for key, value in new.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(path, "unknown key")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(path, "expected a table")
            if key == "rule":
                # rule tables carry nested base rules; accept them verbatim
                base[key].update(value)
                continue
            _merge(base[key], value, path + ".")
        else:
            base[key] = value


def load(path: Optional[str]) -> dict:
    cfg = defaults()
    if path:
        try:
            data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError("--config", f"cannot read {path}: {e}")
        except tomllib.TOMLDecodeError as e:
            raise ConfigError("--config", f"invalid TOML: {e}")
        _merge(cfg, data)
    return cfg


def parse_assignment(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError("--set", f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(cfg: dict, flags: dict, assignments: tuple[str, ...] = ()) -> dict:
    for key, value in flags.items():
        if value is not None:
            cfg[key] = value
    for a in assignments:
        path, value = parse_assignment(a)
        node = cfg
        for p in path[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(".".join(path), "unknown key")
            node = node[p]
        if path[-1] not in node:
            raise ConfigError(".".join(path), "unknown key")
        node[path[-1]] = value
    return cfg


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(field, message)


def validate_top(cfg: dict) -> None:
    _require(isinstance(cfg["seed"], int) and cfg["seed"] >= 0, "seed", "must be a non-negative integer")
    _require(isinstance(cfg["replicas"], int) and cfg["replicas"] >= 1, "replicas", "must be a positive integer")
    _require(isinstance(cfg["threads"], int) and cfg["threads"] >= 1, "threads", "must be a positive integer")
    _require(isinstance(cfg["budget"], int) and cfg["budget"] >= 1, "budget", "must be a positive integer")
    fmts = cfg["formats"]
    if isinstance(fmts, str):
        fmts = cfg["formats"] = [fmts]
    _require(all(f in FORMATS for f in fmts), "formats", f"choose from {FORMATS}")


def rule_dict(cfg: dict) -> dict:
    return {k: v for k, v in cfg["rule"].items() if v is not None}


def config_hash(command: str, cfg: dict) -> str:
    key = {k: v for k, v in cfg.items() if k not in NOT_HASHED}
    return hashlib.sha256(dumps_json({"command": command, "config": key}).encode()).hexdigest()[:12]
