"""Command-line entry point: ``majchain <command> [--config FILE] [flags]``.

Every run writes into ``<out>/<command>-<hash>`` (with ``-r2``, ``-r3`` ... if
the directory exists) and leaves a ``manifest.json`` describing the resolved
configuration. Exit codes: 1 invalid configuration, 2 scale budget exceeded,
3 statistical floor violated.
"""
from __future__ import annotations

import json
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import click
import numpy as np
import scipy
from filelock import FileLock

from . import __version__
from .chain import ChainError, ChainSpec, coupled_chain_run, criterion_series, decoupling_bound, run_chain, toy_iterate
from .config import NOT_HASHED, ConfigError, apply_overrides, config_hash, load, rule_dict, validate_top
from .environment import BlockStructure, BoundaryError, sample_environment
from .experiments import (DEFAULT_BUDGET, InfeasibleError, PhasePoint, connectivity_rate, phase_scan,
                          uniqueness_diagnostic, verify_block_laws)
from .gfunction import GSpec, MajorityRule, RuleError
from .io import dumps_csv, dumps_json
from .sampler import StatisticalFloorError
from .scales import ScaleError, ScaleParams, build_scale_table, smallest_admissible_k_star, table_rows
from .stats import mean_ci, wilson
from .svg import heat_map, line_chart

EXIT_CONFIG, EXIT_BUDGET, EXIT_FLOOR = 1, 2, 3


@dataclass
class Outputs:
    tables: dict = field(default_factory=dict)   # stem -> list of row dicts
    docs: dict = field(default_factory=dict)     # stem -> JSON-able object
    plots: dict = field(default_factory=dict)    # stem -> svg text
    raw: dict = field(default_factory=dict)      # file name -> text, always written
    summary: str = ""


# builders

def _table(cfg: dict, k_max=None):
    sec = dict(cfg["scales"])
    k = sec.pop("k_max") if k_max is None else k_max
    sec.pop("k_max", None)
    try:
        params = ScaleParams.from_dict({key: v for key, v in sec.items() if v is not None})
        return build_scale_table(params, int(k))
    except ScaleError as e:
        raise ConfigError("scales", str(e))
    except (KeyError, TypeError) as e:
        raise ConfigError("scales", f"bad value: {e}")


def _rule(cfg: dict) -> MajorityRule:
    try:
        return MajorityRule.from_dict(rule_dict(cfg))
    except (RuleError, KeyError, TypeError) as e:
        raise ConfigError("rule", str(e))


def _schedule(value, size: int, name: str):
    if isinstance(value, list):
        if len(value) != size:
            raise ConfigError(name, f"needs {size} entries (one per scale), got {len(value)}")
        return tuple(value)
    return (value,) * size


def _chain_spec(cfg: dict) -> ChainSpec:
    c = cfg["chain"]
    rule = _rule(cfg)
    k_lo, depth = int(c["k_lo"]), int(c["depth"])
    try:
        if c["from_table"]:
            table = _table(cfg, k_lo + depth)
            return ChainSpec.from_table(table, rule, k_lo, k_lo + depth, int(c["n_cap"]))
        n = _schedule(c["n"], depth + 1, "chain.n")
        h = _schedule(c["h"], depth + 1, "chain.h")
        return ChainSpec(k_lo, k_lo + depth, n, h, rule)
    except ChainError as e:
        raise ConfigError("chain", str(e))


# commands

def cmd_scales(cfg: dict) -> Callable[[], Outputs]:
    table = _table(cfg)

    def run():
        rows = table_rows(table)
        ks = [r["k"] for r in rows]
        plot = line_chart({"log2 h": (ks, [table.row(k).log2_h for k in ks]),
                           "log2 n1": (ks, [table.row(k).log2_n1 for k in ks]),
                           "log2 n2": (ks, [table.row(k).log2_n2 for k in ks])},
                          "Scale table", "k", "log2 value")
        lines = [f"k={r['k']} ell={r['ell']} beta={r['beta']} nu={r['nu']} h={r['h']:.6g} "
                 f"n1={r['n1']:.6g} n2={r['n2']:.6g}" for r in rows]
        return Outputs({"scales": rows}, {"scales": {"params": table.params.to_dict(), "rows": rows}},
                       {"scales": plot}, summary="\n".join(lines))
    return run


def cmd_env_stats(cfg: dict) -> Callable[[], Outputs]:
    table = _table(cfg)
    e = cfg["env"]
    ks = e["scales"] or list(table.scales())
    for k in ks:
        if k not in table.rows:
            raise ConfigError("env.scales", f"scale {k} outside the table")
    conn = e["connectivity_k"], e["connectivity_K"]
    if (conn[0] is None) != (conn[1] is None):
        raise ConfigError("env.connectivity_K", "set both connectivity_k and connectivity_K")

    def run():
        reps = verify_block_laws(table, ks, cfg["replicas"], cfg["seed"], window=int(e["window"]),
                                 budget=cfg["budget"], threads=cfg["threads"])
        if conn[0] is not None:
            reps.append(connectivity_rate(table, int(conn[0]), int(conn[1]), cfg["replicas"], cfg["seed"],
                                          budget=cfg["budget"], threads=cfg["threads"]))
        rows = [{**{k: v for k, v in r.to_dict().items() if k != "extra"}, "extra": json.dumps(r.extra, sort_keys=True)}
                for r in reps]
        summary = "\n".join(f"{r.quantity}: {r.estimate:.6g} (ref {r.reference}) pass={r.passed}" for r in reps)
        return Outputs({"block_laws": rows}, {"block_laws": [r.to_dict() for r in reps]}, summary=summary)
    return run


def cmd_blocks(cfg: dict) -> Callable[[], Outputs]:
    table = _table(cfg)
    lo, hi = cfg["blocks"]["window"]
    if hi < lo:
        raise ConfigError("blocks.window", "empty window")
    if hi - lo + 1 > cfg["budget"]:
        raise InfeasibleError("blocks.window exceeds the budget", hi - lo + 1)
    ks = cfg["blocks"]["scales"] or list(table.scales())

    def run():
        env = sample_environment((lo, hi), cfg["seed"])
        bs = BlockStructure(env, table)
        rows = [r for k in ks for r in bs.block_report(k)]
        targets = []
        for t in range(lo, hi + 1):
            res = bs.target(t)
            targets.append({"t": t, "bit": env.bit(t), "k_t": "" if res.k_t is None else res.k_t,
                            "size_S": "" if res.S_t is None else len(res.S_t),
                            "anchor": "" if res.anchor is None else res.anchor,
                            "influential": res.influential})
        doc = {"window": [lo, hi], "seed": cfg["seed"],
               "scales": {str(k): {"occurrences": len(bs.occurrence_ends(k)),
                                   "determinate_blocks": sum(1 for b in bs.partition_blocks(k) if b.determinate)}
                          for k in ks}}
        return Outputs({"blocks": rows, "targets": targets}, {"blocks": doc}, raw={"environment.bits": env.dumps()},
                       summary=f"{len(rows)} determinate blocks over scales {ks}")
    return run


def cmd_chain(cfg: dict) -> Callable[[], Outputs]:
    spec = _chain_spec(cfg)
    c = cfg["chain"]
    xi_M = float(c["xi_M"])

    def run():
        R, seed, th = cfg["replicas"], cfg["seed"], cfg["threads"]
        try:
            if c["coupled"]:
                res = coupled_chain_run(spec, float(c["lam"]), float(c["delta"]), xi_M, seed, R, th)
                traj = res.plain
            else:
                traj = run_chain(spec, xi_M, seed, R, th)
        except ChainError as e:
            raise ConfigError("chain", str(e))
        fin = traj.final
        ks = list(range(spec.k_lo, spec.M + 1))
        means = traj.xi.mean(axis=0)
        doc = {"spec": spec.to_dict(), "xi_M": xi_M, "replicas": R, "seed": seed,
               "mean_final": mean_ci(fin).__dict__ if R > 1 else float(fin[0]),
               "p_plus_final": wilson(int(np.sum(fin > 0)), R).__dict__,
               "mean_by_scale": {str(k): float(m) for k, m in zip(ks, means)},
               "S_M_counts": {str(int(s)): int(n) for s, n in zip(*np.unique(traj.S_M, return_counts=True))}}
        tables = {}
        if c["dump"]:
            rows = traj.rows()
            if traj.D is not None:
                for r in rows:
                    r["D"] = int(traj.D[r["replica"]])
            tables["trajectories"] = rows
        if traj.D is not None:
            doc["D_counts"] = {str(int(s)): int(n) for s, n in zip(*np.unique(traj.D, return_counts=True))}
            if c["L"] is not None:
                L = int(c["L"])
                doc["decoupling_audit"] = {"L": L, "empirical": float(np.mean(traj.D >= L)),
                                           "bound": decoupling_bound(spec, float(c["delta"]), L)}
        plot = line_chart({"mean xi_k": (ks, means.tolist())}, "Magnetization chain", "k", "mean xi_k")
        return Outputs(tables, {"chain": doc}, {"chain": plot},
                       summary=f"mean xi_{spec.k_lo} = {fin.mean():.6g}, P(+) = {np.mean(fin > 0):.6g}")
    return run


def cmd_criterion(cfg: dict) -> Callable[[], Outputs]:
    K = cfg["criterion"]["K"]
    table = _table(cfg, None if K is None else max(int(K), cfg["scales"]["k_max"]))

    def run():
        rep = criterion_series(table, None if K is None else int(K))
        plot = line_chart({"n1 series": (rep.ks, rep.x_conv), "n2 series": (rep.ks, rep.x_div),
                           "leading": (rep.ks, rep.x_lead)},
                          "Criterion series exponents", "k", "log2 of exponent")
        return Outputs({"criterion": rep.rows()}, {"criterion": rep.to_dict()}, {"criterion": plot},
                       summary=f"verdict: {rep.verdict} (leading-order series: {rep.leading_verdict})")
    return run


def cmd_toy(cfg: dict) -> Callable[[], Outputs]:
    t = cfg["toy"]
    rule = _rule(cfg)
    k_lo, depth = int(t["k_lo"]), int(t["depth"])
    h = t["h"]
    if isinstance(h, list) and len(h) != depth + 1:
        raise ConfigError("toy.h", f"needs {depth + 1} entries")
    if abs(float(t["mu_M"])) > 1:
        raise ConfigError("toy.mu_M", "must lie in [-1, 1]")

    def run():
        mu = toy_iterate(rule, h, float(t["mu_M"]), k_lo, k_lo + depth)
        ks = list(range(k_lo + depth, k_lo - 1, -1))
        rows = [{"k": k, "mu": float(mu[k - k_lo])} for k in ks]
        plot = line_chart({"mu_k": (ks, [r["mu"] for r in rows])}, "Toy iteration", "k", "mu_k")
        return Outputs({"toy": rows}, {"toy": {"rule": rule.to_dict(), "h": h, "rows": rows}}, {"toy": plot},
                       summary=f"mu_{k_lo} = {rows[-1]['mu']!r}")
    return run


def cmd_phase_scan(cfg: dict) -> Callable[[], Outputs]:
    p = cfg["phase_scan"]
    depth, n_cap = int(p["depth"]), int(p["n_cap"])
    points = []
    try:
        rules = [MajorityRule.from_dict({"kind": r} if isinstance(r, str) else r) for r in p["rules"]]
    except (RuleError, KeyError) as e:
        raise ConfigError("phase_scan.rules", str(e))
    for eps in p["epsilons"]:
        for alpha in p["alphas"]:
            try:
                ks = smallest_admissible_k_star(float(eps), float(alpha))
                params = ScaleParams(float(eps), ks, alpha=float(alpha))
                table = build_scale_table(params, ks + depth)
                crit = build_scale_table(params, ks + 40)
            except ScaleError as e:
                raise ConfigError("phase_scan", str(e))
            for rule in rules:
                spec = ChainSpec.from_table(table, rule, ks, ks + depth, n_cap)
                points.append(PhasePoint(f"eps={eps},alpha={alpha}", spec, crit,
                                         {"epsilon_star": eps, "alpha": alpha, "k_star": ks}))
    if p["h_zero_row"]:
        for rule in rules:
            spec = ChainSpec.constant(min(n_cap, 101), 0.0, rule, depth)
            points.append(PhasePoint("h=0", spec, None, {"epsilon_star": "", "alpha": "", "k_star": ""}))

    def run():
        rows = phase_scan(points, cfg["replicas"], cfg["seed"], cfg["threads"])
        recs = [r.to_dict() for r in rows]
        plots = {}
        eps_list, alpha_list = list(p["epsilons"]), list(p["alphas"])
        for rule in rules:
            grid = [[next((r["p_plus"] for r in recs if r["rule"] == rule.kind and r["epsilon_star"] == e
                           and r["alpha"] == a), float("nan")) for a in alpha_list] for e in eps_list]
            plots[f"phase_{rule.kind}"] = heat_map(grid, alpha_list, eps_list,
                                                   f"P(sigma = +) under the {rule.kind} rule", "alpha", "epsilon_star")
        return Outputs({"phase": recs}, {"phase": recs}, plots, summary=f"{len(recs)} grid points")
    return run


def cmd_gap(cfg: dict) -> Callable[[], Outputs]:
    # targets near the origin need many scales to be decided, hence a separate depth
    table = _table(cfg, cfg["gap"]["k_max"])
    rule = _rule(cfg)
    g = cfg["gap"]
    lo, hi = g["window"]
    if hi - lo + 1 > cfg["budget"]:
        raise InfeasibleError("gap.window exceeds the budget", hi - lo + 1)
    sites, Ns = [int(s) for s in g["sites"]], [int(n) for n in g["Ns"]]
    if not sites or not Ns:
        raise ConfigError("gap", "sites and Ns must be non-empty")
    if cfg["replicas"] < 100:
        raise StatisticalFloorError(f"replicas={cfg['replicas']} is below the floor of 100")

    def run():
        env = sample_environment((lo, hi), cfg["seed"])
        bs = BlockStructure(env, table)
        try:
            rep = uniqueness_diagnostic(GSpec(table, rule), bs, sites, Ns, cfg["replicas"], cfg["seed"],
                                        cfg["threads"])
        except BoundaryError as e:
            raise ConfigError("gap.window", str(e))
        series = {f"t={t}": ([r["N"] for r in rep.rows if r["t"] == t],
                             [r["estimate"] for r in rep.rows if r["t"] == t]) for t in sites}
        plot = line_chart(series, "Boundary gap", "N", "gap estimate")
        return Outputs({"gap": rep.rows}, {"gap": rep.to_dict()}, {"gap": plot}, summary=f"verdict: {rep.verdict}")
    return run


COMMANDS = {
    "scales": cmd_scales, "env-stats": cmd_env_stats, "blocks": cmd_blocks, "chain": cmd_chain,
    "criterion": cmd_criterion, "toy": cmd_toy, "phase-scan": cmd_phase_scan, "gap": cmd_gap,
}


# driver

def _run_dir(out: Path, command: str, digest: str) -> Path:
    base = out / f"{command}-{digest}"
    path, i = base, 1
    while path.exists():
        i += 1
        path = Path(f"{base}-r{i}")
    path.mkdir(parents=True)
    return path


def versions() -> dict:
    return {"majchain": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def execute(command: str, config: str | None, flags: dict, assignments: tuple[str, ...], dry_run: bool) -> Path | None:
    cfg = apply_overrides(load(config), flags, assignments)
    validate_top(cfg)
    job = COMMANDS[command](cfg)
    if dry_run:
        click.echo(dumps_json({"command": command, "config": cfg}), nl=False)
        return None
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(command, cfg)
    with FileLock(str(out / ".majchain.lock")):
        result = job()
        run_dir = _run_dir(out, command, digest)
        files = []
        fmts = cfg["formats"]
        if "csv" in fmts:
            for stem, rows in result.tables.items():
                (run_dir / f"{stem}.csv").write_bytes(dumps_csv(rows).encode())
                files.append(f"{stem}.csv")
        if "json" in fmts:
            for stem, doc in result.docs.items():
                (run_dir / f"{stem}.json").write_text(dumps_json(doc))
                files.append(f"{stem}.json")
        if "svg" in fmts:
            for stem, text in result.plots.items():
                (run_dir / f"{stem}.svg").write_text(text)
                files.append(f"{stem}.svg")
        for name, text in result.raw.items():
            (run_dir / name).write_text(text)
            files.append(name)
        # scheduling and layout keys are left out so the manifest, like the data, is thread-independent
        manifest = {"command": command, "config": {k: v for k, v in cfg.items() if k not in NOT_HASHED},
                    "config_hash": digest, "seed": cfg["seed"], "versions": versions(), "files": sorted(files)}
        (run_dir / "manifest.json").write_text(dumps_json(manifest))
    if result.summary:
        click.echo(result.summary)
    click.echo(f"wrote {run_dir}")
    return run_dir


def _common(fn):
    opts = [
        click.option("--config", "config", type=click.Path(dir_okay=False), help="TOML run configuration."),
        click.option("--seed", type=int, help="Master seed."),
        click.option("--replicas", type=int, help="Number of Monte Carlo replicas."),
        click.option("--out", type=click.Path(file_okay=False), help="Parent directory for run outputs."),
        click.option("--format", "formats", type=click.Choice(["csv", "json", "svg"]), multiple=True,
                     help="Output formats (repeatable)."),
        click.option("--threads", type=int, help="Worker threads; results do not depend on it."),
        click.option("--set", "assignments", multiple=True, metavar="SECTION.KEY=VALUE",
                     help="Override one configuration value (TOML syntax)."),
        click.option("--dry-run", is_flag=True, help="Validate and print the resolved configuration."),
    ]
    for o in reversed(opts):
        fn = o(fn)
    return fn


def _make(command: str):
    @click.command(name=command, help=f"Run the '{command}' task.")
    @_common
    def cmd(config, seed, replicas, out, formats, threads, assignments, dry_run):
        flags = {"seed": seed, "replicas": replicas, "out": out, "threads": threads,
                 "formats": list(formats) if formats else None}
        try:
            execute(command, config, flags, assignments, dry_run)
        except ConfigError as e:
            click.echo(f"invalid configuration: {e}", err=True)
            sys.exit(EXIT_CONFIG)
        except InfeasibleError as e:
            click.echo(f"infeasible scale budget: {e} (required window {e.required})", err=True)
            sys.exit(EXIT_BUDGET)
        except StatisticalFloorError as e:
            click.echo(f"statistical floor: replicas: {e}", err=True)
            sys.exit(EXIT_FLOOR)
    return cmd


@click.group()
@click.version_option(__version__, prog_name="majchain")
def main():
    """Simulate chains with complete connections in a multiscale random environment."""


for _name in COMMANDS:
    main.add_command(_make(_name))


if __name__ == "__main__":
    main()
