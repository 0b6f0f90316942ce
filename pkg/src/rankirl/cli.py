"""Command-line interface.

Exit codes: 0 success, 1 usage or validation error, 2 I/O error,
3 solver non-convergence. Every run writes ``config.json`` next to its
outputs; ``rankirl replay DIR --out NEW`` re-runs it from that manifest.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .experiments import GridSpec, report_to_dict, run_gridworld_comparison, run_prop1_check
from .features import FeatureMap, empirical_mu
from .mdp import validate_mdp
from .minnorm import NonConvergenceError
from .ordinal import SolverError, UnboundedProgramError, solve_sum_of_margins

log = logging.getLogger("rankirl")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_SOLVER = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", default=".", help="existing output directory (default: current)")
    p.add_argument("--tol", type=float, default=1e-9, help="solver tolerance")
    p.add_argument("--gamma", type=float, default=None, help="discount factor (command default if omitted)")
    p.add_argument("--c", type=float, default=1.0, dest="C", help="slack price C (default 1)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="rankirl", description="Inverse RL from ranked demonstrators.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prop1", parents=[common], help="hidden-penalty counterexample check")
    p.add_argument("--delta", type=float, default=1.0)

    p = sub.add_parser("gridworld", parents=[common], help="ranked vs apprenticeship comparison")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--odd-row-penalty", type=float, default=-0.1)
    p.add_argument("--goal-reward", type=float, default=1.0)
    p.add_argument("--goal-row", type=int, default=None)
    p.add_argument("--goal-col", type=int, default=None)
    p.add_argument("--slip", type=float, default=0.0)
    p.add_argument("--baseline-seeds", type=int, default=10)
    p.add_argument("--sample-mode", choices=["exact", "sampled"], default="exact")
    p.add_argument("--n-traj", type=int, default=1000)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("rank-solve", parents=[common], help="solve the sum-of-margins program for a mu CSV")
    p.add_argument("mu_csv")

    p = sub.add_parser("mu", parents=[common], help="empirical feature expectations from a trajectory file")
    p.add_argument("trajectories")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--features", help="feature CSV (state,phi_0,...)")
    group.add_argument("--lossless", action="store_true", help="one indicator feature per state")
    p.add_argument("--n-states", type=int, help="state count for --lossless")
    p.add_argument("--mdp", help="MDP JSON supplying the state count for --lossless")
    p.add_argument("--rank", type=int, default=1, help="rank label for the output row (1 = best)")
    p.add_argument("--source-id", default=None)

    p = sub.add_parser("city", parents=[common], help="synthetic taxi pipeline")
    p.add_argument("--network", default=None, help="network JSON (generated when omitted)")
    p.add_argument("--segments", type=int, default=200)
    p.add_argument("--drivers", type=int, default=30)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--per-rank", type=int, default=10)
    p.add_argument("--max-dim", type=int, default=130)
    p.add_argument("--hotspots", type=int, default=3)
    p.add_argument("--shift-length", type=int, default=3000)
    p.add_argument("--value-gamma", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("validate-mdp", parents=[common], help="check an MDP JSON file")
    p.add_argument("mdp")

    p = sub.add_parser("replay", help="re-run a command from its config.json")
    p.add_argument("manifest", help="output directory (or config.json) of an earlier run")
    p.add_argument("--out", required=True)
    return parser


# --- helpers ------------------------------------------------------------------

def _resolved_argv(parser: argparse.ArgumentParser, args) -> list[str]:
    """Every option spelled out, so the run can be repeated exactly (``--out`` excluded)."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    argv = [args.command]
    for action in sub._actions:
        if isinstance(action, argparse._HelpAction) or action.dest in ("out", "verbose"):
            continue
        value = getattr(args, action.dest)
        if not action.option_strings:
            argv.append(str(value))
        elif isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(action.option_strings[-1])
        elif value is not None:
            argv.extend([action.option_strings[-1], repr(value) if isinstance(value, float) else str(value)])
    return argv


def _out_dir(args) -> Path:
    out = Path(args.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    return out


def _emit(out: Path, files: dict, config: dict) -> None:
    """Write every output after computation, in a fixed order."""
    files = dict(files)
    files["config.json"] = io.dumps(config)
    for name in sorted(files):
        (out / name).write_text(files[name])


def _gamma(args, default: float) -> float:
    gamma = default if args.gamma is None else args.gamma
    if not 0.0 <= gamma < 1.0:
        raise UsageError(f"gamma must lie in [0, 1), got {gamma}")
    args.gamma = gamma  # recorded in the manifest
    return gamma


# --- commands -----------------------------------------------------------------

def cmd_prop1(args):
    if not args.delta > 0:
        raise UsageError(f"delta must be positive, got {args.delta}")
    gamma = _gamma(args, 0.9)
    report = run_prop1_check(args.delta, gamma, tol=args.tol)
    return (EXIT_OK if report["passed"] else EXIT_USAGE), {"prop1.json": io.dumps(report)}, report


def cmd_gridworld(args):
    goal = (args.size - 1 if args.goal_row is None else args.goal_row,
            args.size - 1 if args.goal_col is None else args.goal_col)
    spec = GridSpec(args.size, args.odd_row_penalty, args.goal_reward, goal, _gamma(args, 0.95), args.slip)
    report = run_gridworld_comparison(
        spec, n_baseline_seeds=args.baseline_seeds, sample_mode=args.sample_mode, n_traj=args.n_traj,
        C=args.C, epsilon=args.epsilon, max_iter=args.max_iter, seed=args.seed, tol=args.tol, n_jobs=args.jobs,
    )
    n = spec.size
    baseline_mean = np.mean(np.vstack(list(report.baseline_w.values())), axis=0)
    files = {
        "report.json": io.dumps(report_to_dict(report)),
        "heatmap_rankirl.csv": io.heatmap_csv_text(report.rankirl_w.reshape(n, n)),
        "heatmap_baseline.csv": io.heatmap_csv_text(baseline_mean.reshape(n, n)),
    }
    summary = {"advantage": report.advantage, "even_odd_preference": report.even_odd_preference}
    return EXIT_OK, files, summary


def cmd_rank_solve(args):
    data, mapping = io.read_ranked_dataset(args.mu_csv, args.C)
    sol = solve_sum_of_margins(data, tol=args.tol)
    return EXIT_OK, {"solution.json": io.dumps(io.solution_to_dict(sol, mapping))}, {
        "objective": sol.objective, "degenerate": sol.degenerate}


def cmd_mu(args):
    if args.gamma is None:
        raise UsageError("mu needs --gamma")
    gamma = _gamma(args, 0.0)
    trajs = io.read_trajectories(args.trajectories)
    if args.features:
        fmap = io.read_features(args.features)
    else:
        if args.mdp:
            n_states = io.read_mdp(args.mdp).n_states
        elif args.n_states:
            n_states = args.n_states
        else:
            raise UsageError("--lossless needs --n-states or --mdp")
        fmap = FeatureMap.lossless(n_states)
    if args.rank < 1:
        raise UsageError("--rank must be at least 1")
    vector = empirical_mu(trajs, fmap, gamma)
    sid = Path(args.trajectories).stem if args.source_id is None else args.source_id
    text = io.mu_rows_text([(sid, args.rank, vector)])
    return EXIT_OK, {"mu.csv": text}, {"d": fmap.d, "n_trajectories": len(trajs)}


def cmd_city(args):
    from .roadnet import (
        decompose, generate_network, plant_hotspots, rank_drivers, segment_quality, simulate_drivers,
        solve_city, value_quality_correlation,
    )

    gamma = _gamma(args, 0.99)
    net = io.read_network(args.network) if args.network else generate_network(args.segments, args.seed)
    hotspots = plant_hotspots(net, args.hotspots, args.seed)
    logs, _ = simulate_drivers(net, args.drivers, seed=args.seed, shift_length=args.shift_length, hotspots=hotspots)
    ranking = rank_drivers(logs, args.k, args.per_rank)
    dec = decompose(net, logs, args.max_dim)
    result = solve_city(net, logs, ranking, dec, gamma, args.C, tol=args.tol, n_jobs=args.jobs,
                        value_gamma=args.value_gamma)
    quality = segment_quality(net, hotspots)
    rho = value_quality_correlation(result, quality)
    solution = {
        "w": result.w,
        "flagged_states": np.flatnonzero(result.flagged),
        "expected_value": result.expected_value,
        "spearman_value_vs_quality": rho,
        "clusters": [
            {"size": int(c.states.size), "degenerate": c.degenerate, "error": c.error,
             "objective": None if c.solution is None else c.solution.objective}
            for c in result.clusters
        ],
        "max_cluster_size": max(int(c.size) for c in dec.clusters) if dec.clusters else 0,
        "cut_intersections": list(dec.cut_intersections),
        "decomposition_satisfied": dec.satisfied,
        "driver_ranks": {str(d): r for d, r in sorted(ranking.ranks.items())},
        "rank_ties": ranking.ties,
        "rank_labels": {"convention": "label 1 = best", "label_to_internal":
                        {str(label): args.k + 1 - label for label in range(1, args.k + 1)}},
        "hotspots": hotspots.centers,
    }
    files = {
        "network.json": io.dumps(io.network_to_dict(net)),
        "drivers.csv": io.driver_csv_text(logs),
        "solution.json": io.dumps(solution),
        "values.csv": io.value_csv_text(result.values, result.flagged),
    }
    return EXIT_OK, files, {"spearman": rho, "max_cluster_size": solution["max_cluster_size"]}


def cmd_validate_mdp(args):
    mdp = io.read_mdp(args.mdp)
    problems = validate_mdp(mdp)
    for line in problems:
        print(line)
    report = {"mdp": args.mdp, "valid": not problems, "violations": problems}
    return (EXIT_OK if not problems else EXIT_USAGE), {"validation.json": io.dumps(report)}, report


COMMANDS = {
    "prop1": cmd_prop1,
    "gridworld": cmd_gridworld,
    "rank-solve": cmd_rank_solve,
    "mu": cmd_mu,
    "city": cmd_city,
    "validate-mdp": cmd_validate_mdp,
}


def _replay_argv(manifest: str, out: str) -> list[str]:
    path = Path(manifest)
    if path.is_dir():
        path = path / "config.json"
    config = io.read_json(path)
    return list(config["argv"]) + ["--out", out]


def run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "replay":
        return run(_replay_argv(args.manifest, args.out))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = _out_dir(args)
    code, files, summary = COMMANDS[args.command](args)
    config = {"command": args.command, "argv": _resolved_argv(parser, args)}
    _emit(out, files, config)
    print(io.dumps(summary), end="")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        return run(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, NonConvergenceError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (io.FormatError, UnboundedProgramError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
