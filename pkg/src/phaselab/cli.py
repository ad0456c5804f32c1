"""Command-line front end.

Subcommands::

    phaselab stats      --config cfg.json --out DIR
    phaselab trajectory --config cfg.json --out DIR [--seed N] [--jobs N]
    phaselab oracle     [--config cfg.json] --out DIR
    phaselab figure {fig2,fig4,fig5} --out DIR

Exit codes: 0 success, 1 oracle failure, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .detstat import (
    EnumerationBudgetExceeded,
    chain_partition_table,
    chain_symmetry_orbit,
    co_maximal,
    partition_table,
)
from .distribution import DistributionAnnihilated, find_peaks, phase_marginal
from .export import fmt, prob_columns, write_csv, write_json
from .fock import InsufficientTruncation, run_oracle_suite
from .trajectory import ChainTrajectoryConfig, run_ensemble

EXIT_OK, EXIT_ORACLE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def resolve_seed(flag, doc_seed) -> int:
    if flag is not None:
        return int(flag)
    env = os.environ.get("PHASELAB_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise cfgmod.ConfigError(f"PHASELAB_SEED is not an integer: {env!r}") from None
    return int(doc_seed or 0)


def _with_overrides(exp: cfgmod.ExperimentConfig, args) -> cfgmod.ExperimentConfig:
    doc = dict(exp.doc)
    if getattr(args, "grid", None) is not None:
        doc["grid"] = args.grid
    if getattr(args, "tol", None) is not None:
        doc["tol"] = args.tol
    return cfgmod.ExperimentConfig(cfgmod.validate(doc))


# ---------------------------------------------------------------------------
# stats
# ---------------------------------------------------------------------------

def cmd_stats(exp: cfgmod.ExperimentConfig, out: Path) -> dict:
    """Full partition table and co-maximal set for one experiment."""
    L = exp.get("L")
    if L is None:
        raise cfgmod.ConfigError("stats needs 'L'")
    rtol = exp.get("tol", 1e-9)
    if exp.kind == "chain":
        return _chain_stats(exp, L, rtol, out)
    if exp.kind in ("continuous", "energy_shift"):
        raise cfgmod.ConfigError("partition statistics need time-independent detectors")
    setup = exp.setup()
    table = partition_table(exp.initial(), setup, L, exp.get("constraint"))
    C = len(setup)
    header = [f"n{i + 1}" for i in range(C)] + ["prob", "log10_prob"]
    write_csv(out / "partitions.csv", header, (list(c) + list(prob_columns(lp)) for c, lp in table))
    best = co_maximal(table, rtol)
    lookup = dict(table)
    write_csv(out / "comaximal.csv", header, (list(c) + list(prob_columns(lookup[c])) for c in best))
    summary = {
        "experiment": exp.kind,
        "setup": setup.name,
        "channels": setup.ids,
        "L": L,
        "constraint": exp.get("constraint"),
        "n_partitions": len(table),
        "total_prob": math.fsum(math.exp(lp) for _, lp in table),
        "comaximal": [list(c) for c in best],
        "max_log10_prob": max(lp for _, lp in table) / math.log(10),
    }
    write_json(out / "summary.json", summary)
    return summary


def _chain_stats(exp, L, rtol, out: Path) -> dict:
    chain = exp.chain
    counts, logp = chain_partition_table(chain, L)
    B = chain.n_bonds

    def rows():
        for pid, (row, lp) in enumerate(zip(counts, logp)):
            lin, lg = prob_columns(float(lp))
            for s in range(B):
                yield [pid, s + 1, int(row[2 * s]), int(row[2 * s + 1]), lin, lg]

    header = ["partition", "bond", "n", "m", "prob", "log10_prob"]
    write_csv(out / "partitions.csv", header, rows())
    best_lp = logp.max()
    keep = np.flatnonzero(logp >= best_lp + math.log1p(-rtol))
    best = sorted(
        (tuple((int(counts[i][2 * s]), int(counts[i][2 * s + 1])) for s in range(B)), float(logp[i])) for i in keep
    )
    write_csv(
        out / "comaximal.csv",
        header,
        ([pid, s + 1, n, m, *prob_columns(lp)] for pid, (pairs, lp) in enumerate(best) for s, (n, m) in enumerate(pairs)),
    )
    members = [p for p, _ in best]
    orbit = chain_symmetry_orbit(members[0]) if chain.topology == "circular" else {members[0]}
    summary = {
        "experiment": "chain",
        "K": chain.K,
        "topology": chain.topology,
        "xi": list(chain.xi),
        "L": L,
        "n_partitions": int(len(logp)),
        "total_prob": math.fsum(np.exp(logp).tolist()),
        "comaximal": [[list(pair) for pair in p] for p in members],
        "outside_symmetry_orbit": [[list(pair) for pair in p] for p in members if p not in orbit],
        "max_log10_prob": float(best_lp) / math.log(10),
    }
    write_json(out / "summary.json", summary)
    return summary


def figure_fig2(exp: cfgmod.ExperimentConfig, out: Path) -> dict:
    """Balanced-constraint surface ``p_L`` over ``(n1, n3)``."""
    L = exp.get("L")
    table = partition_table(exp.initial(), exp.setup(), L, "balanced")
    write_csv(
        out / "fig2.csv",
        ["n1", "n3", "prob", "log10_prob"],
        ([c[0], c[2], *prob_columns(lp)] for c, lp in sorted(table)),
    )
    best = co_maximal(table, exp.get("tol", 1e-9))
    lookup = dict(table)
    write_csv(
        out / "fig2_argmax.csv",
        ["n1", "n2", "n3", "n4", "prob", "log10_prob"],
        (list(c) + list(prob_columns(lookup[c])) for c in best),
    )
    summary = {"figure": "fig2", "L": L, "xi": exp.get("xi"), "comaximal": [list(c) for c in best]}
    write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

def cmd_trajectory(exp: cfgmod.ExperimentConfig, out: Path, seed: int, jobs: int = 1) -> dict:
    """Run an ensemble; write event logs, phase marginals and peak summaries."""
    tcfg = exp.trajectory_config(seed)
    n_traj = exp.get("n_traj", 10)
    grid = exp.get("grid", 256)
    stats = run_ensemble(tcfg, n_traj, jobs=jobs, with_peaks=False, keep_results=True)
    events, marginals, peaks = [], [], []
    is_chain = isinstance(tcfg, ChainTrajectoryConfig)
    for i, res in enumerate(stats.results):
        events.extend([i, fmt(e.t), e.channel] for e in res.events)
        if is_chain:
            for b in range(tcfg.chain.n_bonds):
                x, dens = res.final_dist.bond_marginal(b, grid)
                marginals.extend([i, b + 1, fmt(p), fmt(d)] for p, d in zip(x, dens))
                k = int(np.argmax(dens))
                peaks.append([i, b + 1, fmt(x[k]), fmt(dens[k])])
        elif res.final_dist.base.kind != "point":
            x, dens = phase_marginal(res.final_dist, grid)
            marginals.extend([i, fmt(p), fmt(d)] for p, d in zip(x, dens))
            pk = find_peaks(res.final_dist)
            if pk:
                peaks.append([i, fmt(pk[0].phi), fmt(pk[0].height)])
            else:
                peaks.append([i, "nan", fmt(dens.max())])
    write_csv(out / "events.csv", ["traj_id", "t", "channel"], events)
    if is_chain:
        write_csv(out / "marginals.csv", ["traj_id", "bond", "phi", "density"], marginals)
        write_csv(out / "peaks.csv", ["traj_id", "bond", "peak_phi", "peak_height"], peaks)
    else:
        write_csv(out / "marginals.csv", ["traj_id", "phi", "density"], marginals)
        write_csv(out / "peaks.csv", ["traj_id", "peak_phi", "peak_height"], peaks)
    summary = stats.to_json()
    summary.update({"experiment": exp.kind, "seed": seed, "policy": tcfg.policy, "time_law": tcfg.time_law})
    write_json(out / "summary.json", summary)
    return summary


# ---------------------------------------------------------------------------
# oracle
# ---------------------------------------------------------------------------

def cmd_oracle(doc: dict, out: Path, seed: int) -> dict:
    o = doc.get("oracle", {})
    kwargs = {"seed": seed, "N_max": o.get("N_max"), "history_L": o.get("history_L", 6)}
    if o.get("quick"):
        kwargs.update(R_values=tuple(o.get("R_values", (0.5,))), n_pairs=o.get("n_pairs", 20),
                      history_L=o.get("history_L", 3))
    else:
        kwargs.update(R_values=tuple(o.get("R_values", (0.5, 1.0, 2.0))), n_pairs=o.get("n_pairs", 100))
    try:
        report = run_oracle_suite(**kwargs)
    except InsufficientTruncation as exc:
        report = {"passed": False, "error": str(exc), "checks": []}
    write_json(out / "oracle.json", report)
    return report


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment configuration")
    common.add_argument("--seed", type=int, help="64-bit seed (overrides PHASELAB_SEED)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--grid", type=int, help="phase grid size for marginals")
    common.add_argument("--tol", type=float, help="relative tie tolerance for co-maximal sets")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for ensembles")

    parser = argparse.ArgumentParser(prog="phaselab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("stats", parents=[common], help="partition-probability tables")
    sub.add_parser("trajectory", parents=[common], help="quantum-jump trajectory ensembles")
    sub.add_parser("oracle", parents=[common], help="truncated Fock-basis verification")
    fig = sub.add_parser("figure", parents=[common], help="figure data")
    fig.add_argument("name", choices=sorted(cfgmod.FIGURE_DEFAULTS))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    out = args.out
    try:
        if args.command == "oracle":
            doc = cfgmod.load_overrides(args.config) if args.config else {}
            cfgmod.validate({"experiment": "two_bs", **doc})
            report = cmd_oracle(doc, out, resolve_seed(args.seed, doc.get("seed")))
            print(f"oracle {'passed' if report['passed'] else 'FAILED'}; report in {out / 'oracle.json'}")
            return EXIT_OK if report["passed"] else EXIT_ORACLE
        if args.command == "figure":
            overrides = cfgmod.load_overrides(args.config) if args.config else None
            exp = _with_overrides(cfgmod.figure_config(args.name, overrides), args)
            if args.name == "fig2":
                summary = figure_fig2(exp, out)
            else:
                summary = cmd_trajectory(exp, out, resolve_seed(args.seed, exp.get("seed")), args.jobs)
            print(f"{args.name} written to {out}")
            return EXIT_OK
        if args.config is None:
            raise cfgmod.ConfigError(f"{args.command} needs --config")
        exp = _with_overrides(cfgmod.ExperimentConfig(cfgmod.load(args.config)), args)
        if args.command == "stats":
            summary = cmd_stats(exp, out)
            print(f"{summary['n_partitions']} partitions; co-maximal: {summary['comaximal']}")
        else:
            cmd_trajectory(exp, out, resolve_seed(args.seed, exp.get("seed")), args.jobs)
            print(f"trajectories written to {out}")
        return EXIT_OK
    except cfgmod.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DistributionAnnihilated, EnumerationBudgetExceeded, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
