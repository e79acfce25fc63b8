import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from majchain.cli import main
from majchain.environment import Environment

SMALL = ["--set", "scales.ell_custom=[2,3,4,5]", "--set", "scales.h_custom=[0.4,0.3,0.2,0.1]",
         "--set", "scales.k_star=1", "--set", "scales.k_max=4"]


def invoke(*args):
    return CliRunner().invoke(main, list(args), catch_exceptions=False)


def run_dir(out: Path, prefix: str) -> Path:
    dirs = sorted(p for p in out.iterdir() if p.is_dir() and p.name.startswith(prefix))
    assert dirs
    return dirs[-1]


def test_scales_row(tmp_path):
    r = invoke("scales", "--out", str(tmp_path), "--set", "scales.k_star=1", "--set", "scales.k_max=4",
               "--set", "scales.alpha=1.0")
    assert r.exit_code == 0, r.output
    rows = list(csv.DictReader(open(run_dir(tmp_path, "scales") / "scales.csv", newline="")))
    last = rows[-1]
    assert (last["k"], last["ell"], last["beta"]) == ("4", "6", "64")


def test_toy_csv(tmp_path):
    r = invoke("toy", "--out", str(tmp_path), "--set", 'rule.kind="identity"', "--set", "toy.h=0.5",
               "--set", "toy.depth=5", "--set", "toy.mu_M=1.0", "--format", "csv")
    assert r.exit_code == 0
    text = (run_dir(tmp_path, "toy") / "toy.csv").read_text()
    assert text.splitlines()[-1] == "0,0.03125"


def test_rerun_byte_identical_and_suffix(tmp_path):
    args = ["chain", "--out", str(tmp_path), "--replicas", "1500", "--seed", "3"]
    assert invoke(*args, "--threads", "1").exit_code == 0
    assert invoke(*args, "--threads", "3").exit_code == 0
    dirs = sorted(p for p in tmp_path.iterdir() if p.is_dir())
    assert len(dirs) == 2 and dirs[1].name == dirs[0].name + "-r2"
    for name in ("chain.json", "trajectories.csv", "manifest.json"):
        assert (dirs[0] / name).read_bytes() == (dirs[1] / name).read_bytes()


def test_manifest(tmp_path):
    invoke("criterion", "--out", str(tmp_path), "--format", "json", "--format", "svg")
    d = run_dir(tmp_path, "criterion")
    m = json.loads((d / "manifest.json").read_text())
    assert m["command"] == "criterion" and d.name.endswith(m["config_hash"])
    assert set(m["versions"]) >= {"majchain", "numpy", "scipy", "python"}
    assert m["files"] == ["criterion.json", "criterion.svg"]
    assert "threads" not in m["config"]


def test_dry_run_writes_nothing(tmp_path):
    r = invoke("chain", "--out", str(tmp_path / "o"), "--dry-run", "--seed", "4")
    assert r.exit_code == 0
    assert json.loads(r.output)["config"]["seed"] == 4
    assert not (tmp_path / "o").exists()


def test_exit_codes(tmp_path):
    out = ["--out", str(tmp_path)]
    r = invoke("toy", *out, "--set", "toy.colour=1")
    assert r.exit_code == 1 and "toy.colour" in r.output
    r = invoke("chain", *out, "--set", "chain.h=0.9")
    assert r.exit_code == 1 and "chain" in r.output
    r = invoke("env-stats", *out, "--set", "scales.k_max=30")
    assert r.exit_code == 2
    r = invoke("gap", *out, "--replicas", "50")
    assert r.exit_code == 3 and "replicas" in r.output
    r = invoke("toy", *out, "--replicas", "0")
    assert r.exit_code == 1 and "replicas" in r.output
    assert not any(p.is_dir() for p in tmp_path.iterdir())


def test_blocks_dump(tmp_path):
    r = invoke("blocks", "--out", str(tmp_path), *SMALL, "--set", "blocks.window=[-50, 400]")
    assert r.exit_code == 0
    d = run_dir(tmp_path, "blocks")
    env = Environment.loads((d / "environment.bits").read_text())
    assert env.window == (-50, 400)
    targets = list(csv.DictReader(open(d / "targets.csv", newline="")))
    assert len(targets) == 451


def test_config_file(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('replicas = 200\n[chain]\nn = 11\nh = 0.25\ndepth = 3\ndump = false\n')
    r = invoke("chain", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert r.exit_code == 0
    d = run_dir(tmp_path / "o", "chain")
    assert not (d / "trajectories.csv").exists()
    assert json.loads((d / "chain.json").read_text())["replicas"] == 200


@pytest.mark.parametrize("cmd, extra", [
    ("env-stats", SMALL + ["--set", "env.window=16384", "--replicas", "500"]),
    ("phase-scan", ["--replicas", "100", "--set", "phase_scan.depth=4", "--format", "svg", "--format", "csv"]),
    ("gap", ["--replicas", "200", "--set", "gap.Ns=[4, 16]"]),
    ("chain", ["--replicas", "300", "--set", "chain.coupled=true", "--set", "chain.xi_M=0.0099009900990099",
               "--set", "chain.h=0.25", "--set", 'rule.kind="linear"', "--set", "rule.lam=1.0",
               "--set", "chain.lam=2.0", "--set", "chain.delta=0.5", "--set", "chain.L=3"]),
])
def test_commands_run(tmp_path, cmd, extra):
    r = invoke(cmd, "--out", str(tmp_path), *extra)
    assert r.exit_code == 0, r.output
    d = run_dir(tmp_path, cmd)
    files = json.loads((d / "manifest.json").read_text())["files"]
    assert files and all((d / f).exists() for f in files)
