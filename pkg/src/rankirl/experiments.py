"""Scripted experiments: the hidden-penalty counterexample and the gridworld comparison."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .apprenticeship import abbeel_max_margin
from .features import (
    FeatureMap,
    Mu,
    discounted_feature_sums,
    exact_mu,
    sample_trajectories,
    truncation_horizon,
    uniform_distribution,
)
from .mdp import Mdp, build_prop1_mdp, optimal_policy, policy_evaluation
from .ordinal import RankedDataset, reward_from_w, solve_sum_of_margins

log = logging.getLogger(__name__)

NORTH, SOUTH, EAST, WEST = range(4)
MOVES = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}


# --- counterexample -----------------------------------------------------------

def run_prop1_check(delta: float = 1.0, gamma: float = 0.9, tol: float = 1e-9) -> dict:
    """Check that the expert hides the penalty state from an expert-only reward.

    Passes when the expert is optimal under both rewards, pi1 and pi2 tie
    under the approximate reward, and pi1 is worse than pi2 under the true
    reward by ``gamma * delta / (1 - gamma)``. At ``gamma = 0`` the gap
    vanishes; the report flags that case rather than failing it.
    """
    inst = build_prop1_mdp(delta, gamma)
    mdp = inst.mdp
    # every deterministic policy is determined by its action at s0
    start_values = {}
    for name, reward in (("true", inst.true_reward), ("approx", inst.approx_reward)):
        start_values[name] = [
            policy_evaluation(mdp, np.array([a, 0, 0, 0]), reward)[0] for a in range(mdp.n_actions)
        ]
    expert_action = int(inst.expert_policy[0])
    pi_star_true, _ = optimal_policy(mdp, inst.true_reward)
    pi_star_approx, _ = optimal_policy(mdp, inst.approx_reward)

    v = lambda policy, reward: float(policy_evaluation(mdp, policy, reward)[0])
    v1_true, v2_true = v(inst.pi1, inst.true_reward), v(inst.pi2, inst.true_reward)
    v1_approx, v2_approx = v(inst.pi1, inst.approx_reward), v(inst.pi2, inst.approx_reward)
    gap = gamma * delta / (1.0 - gamma)
    degenerate = gamma == 0.0
    checks = {
        # the expert must be among the maximizers; at gamma = 0 every start action ties
        "expert_optimal_true": start_values["true"][expert_action] >= max(start_values["true"]) - tol,
        "expert_optimal_approx": start_values["approx"][expert_action] >= max(start_values["approx"]) - tol,
        "approx_values_equal": abs(v1_approx - v2_approx) <= tol,
        "true_gap": v1_true <= v2_true - gap + tol and (degenerate or v1_true < v2_true),
    }
    return {
        "delta": delta,
        "gamma": gamma,
        "values": {
            "pi1_true": v1_true,
            "pi2_true": v2_true,
            "pi1_approx": v1_approx,
            "pi2_approx": v2_approx,
        },
        "expected_gap": gap,
        "start_action_values": start_values,
        "greedy_start_action": {"true": int(pi_star_true[0]), "approx": int(pi_star_approx[0])},
        "expert_start_action": expert_action,
        "checks": checks,
        "degenerate_gamma_zero": degenerate,
        "passed": all(checks.values()),
    }


# --- gridworld ----------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """Room with a penalty on odd rows and an absorbing goal.

    Defaults are experiment parameters chosen for this package; they are not
    values taken from any published plot.
    """

    size: int = 16
    odd_row_penalty: float = -0.1
    goal_reward: float = 1.0
    goal_cell: tuple = (15, 15)
    gamma: float = 0.95
    slip_prob: float = 0.0

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("size must be at least 2")
        if not 0.0 <= self.slip_prob < 1.0:
            raise ValueError("slip_prob must lie in [0, 1)")
        if not self.odd_row_penalty < 0.0 < self.goal_reward:
            raise ValueError("need odd_row_penalty < 0 < goal_reward")
        r, c = self.goal_cell
        if not (0 <= r < self.size and 0 <= c < self.size):
            raise ValueError("goal cell outside the grid")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "goal_cell", (int(r), int(c)))

    def state(self, row: int, col: int) -> int:
        return row * self.size + col

    @property
    def goal_state(self) -> int:
        return self.state(*self.goal_cell)


@dataclass(frozen=True)
class Gridworld:
    spec: GridSpec
    mdp: Mdp
    fmap: FeatureMap
    true_reward: np.ndarray


def build_gridworld(spec: GridSpec = GridSpec()) -> Gridworld:
    n = spec.size
    S = n * n
    P = np.zeros((S, 4, S))
    for row in range(n):
        for col in range(n):
            s = spec.state(row, col)
            if s == spec.goal_state:
                P[s, :, s] = 1.0
                continue
            targets = []
            for a in range(4):
                dr, dc = MOVES[a]
                r2, c2 = row + dr, col + dc
                targets.append(spec.state(r2, c2) if 0 <= r2 < n and 0 <= c2 < n else s)
            for a in range(4):
                P[s, a, targets[a]] += 1.0 - spec.slip_prob
                for other in range(4):
                    if other != a:
                        P[s, a, targets[other]] += spec.slip_prob / 3.0
    reward = np.zeros(S)
    for row in range(1, n, 2):
        reward[row * n:(row + 1) * n] = spec.odd_row_penalty
    reward[spec.goal_state] = spec.goal_reward
    return Gridworld(spec, Mdp(P, spec.gamma), FeatureMap.lossless(S), reward)


def _toward(row_from: int, rows: list[int], goal_row: int) -> int:
    """Action moving vertically to the nearest row in ``rows``; ties go toward the goal."""
    target = min(rows, key=lambda r: (abs(r - row_from), abs(r - goal_row)))
    return SOUTH if target > row_from else NORTH


def rank_policies(grid: Gridworld) -> dict[int, np.ndarray]:
    """The four demonstrators keyed by internal rank (4 = best).

    4: optimal policy for the true reward.
    3: avoid odd rows, run east along even rows, then south in the last column.
    2: the same with the parities swapped.
    1: avoid even rows and run west along odd rows.
    """
    spec = grid.spec
    n = spec.size
    goal_row = spec.goal_cell[0]
    even = [r for r in range(n) if r % 2 == 0]
    odd = [r for r in range(n) if r % 2 == 1]

    def scripted(preferred, east: bool, last_col_south: bool):
        policy = np.zeros(n * n, dtype=np.int64)
        for row in range(n):
            for col in range(n):
                s = spec.state(row, col)
                if last_col_south and col == n - 1:
                    policy[s] = SOUTH if row < goal_row else NORTH if row > goal_row else EAST
                elif row in preferred:
                    policy[s] = EAST if east else WEST
                else:
                    policy[s] = _toward(row, preferred, goal_row)
        return policy

    optimal, _ = optimal_policy(grid.mdp, grid.true_reward)
    return {
        4: optimal,
        3: scripted(even, east=True, last_col_south=True),
        2: scripted(odd, east=True, last_col_south=True),
        1: scripted(odd, east=False, last_col_south=False),
    }


def even_odd_preference(reward, spec: GridSpec) -> float:
    """Fraction of (row 2i, row 2i+1) same-column pairs where the even cell is preferred.

    The pair containing the goal cell is excluded.
    """
    R = np.asarray(reward).reshape(spec.size, spec.size)
    wins = total = 0
    for row in range(0, spec.size - 1, 2):
        for col in range(spec.size):
            if spec.goal_cell in ((row, col), (row + 1, col)):
                continue
            total += 1
            wins += R[row, col] > R[row + 1, col]
    return wins / total


def performance_ratio(grid: Gridworld, reward, d0=None, tol: float = 1e-10) -> float:
    """``E_D[V^pi_true] / E_D[V^pi*_true]`` for ``pi`` optimal under ``reward``."""
    d0 = uniform_distribution(grid.mdp.n_states) if d0 is None else d0
    policy, _ = optimal_policy(grid.mdp, reward, tol=tol)
    achieved = d0 @ policy_evaluation(grid.mdp, policy, grid.true_reward)
    _, v_star = optimal_policy(grid.mdp, grid.true_reward, tol=tol)
    return float(achieved / (d0 @ v_star))


@dataclass
class ComparisonReport:
    rankirl_w: np.ndarray
    baseline_w: dict  # seed -> final w
    even_odd_preference: float
    baseline_even_odd_preference: dict
    perf_ratio_rankirl: float
    perf_ratio_baseline: dict
    advantage: float
    baseline_converged: dict
    baseline_iterations: dict
    rankirl_margins: list
    rankirl_objective: float
    mus: dict  # internal rank -> mu
    spec: dict
    settings: dict = field(default_factory=dict)


def ranked_feature_expectations(grid: Gridworld, policies: dict, sample_mode: str = "exact",
                                n_traj: int = 1000, seed: int = 0) -> dict:
    d0 = uniform_distribution(grid.mdp.n_states)
    if sample_mode == "exact":
        return {r: exact_mu(grid.mdp, p, grid.fmap, d0) for r, p in policies.items()}
    if sample_mode != "sampled":
        raise ValueError(f"unknown sample mode {sample_mode!r}")
    rng = np.random.default_rng(seed)
    horizon = truncation_horizon(grid.mdp.gamma, 1.0)
    out = {}
    for r in sorted(policies):
        trajs = sample_trajectories(grid.mdp, policies[r], d0, n_traj, horizon, rng)
        out[r] = discounted_feature_sums(trajs, grid.fmap, grid.mdp.gamma).mean(axis=0)
    return out


def run_gridworld_comparison(
    spec: GridSpec = GridSpec(),
    n_baseline_seeds: int = 10,
    sample_mode: str = "exact",
    n_traj: int = 1000,
    C: float = 1.0,
    epsilon: float = 0.1,
    max_iter: int = 100,
    seed: int = 0,
    tol: float = 1e-9,
    n_jobs: int = 1,
) -> ComparisonReport:
    """Recover rewards with the ranking solver and with the apprenticeship baseline.

    Baseline seeds are ``seed + 1 .. seed + n_baseline_seeds``; ``seed`` itself
    drives trajectory sampling.
    """
    if n_baseline_seeds < 1:
        raise ValueError("need at least one baseline seed")
    grid = build_gridworld(spec)
    policies = rank_policies(grid)
    mus = ranked_feature_expectations(grid, policies, sample_mode, n_traj, seed)

    data = RankedDataset(tuple(Mu(mus[r], r, f"rank{r}") for r in sorted(mus)), C)
    sol = solve_sum_of_margins(data, tol=tol)
    rank_reward = reward_from_w(sol.w, grid.fmap)

    d0 = uniform_distribution(grid.mdp.n_states)
    seeds = [seed + i for i in range(1, n_baseline_seeds + 1)]

    def run_seed(s):
        return abbeel_max_margin(grid.mdp, grid.fmap, d0, mus[4], epsilon, max_iter=max_iter, seed=s,
                                 sampled=sample_mode == "sampled", n_traj=n_traj)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            traces = list(pool.map(run_seed, seeds))
    else:
        traces = [run_seed(s) for s in seeds]

    baseline_w = {s: tr.final_w for s, tr in zip(seeds, traces)}
    ratio_base = {s: performance_ratio(grid, reward_from_w(w, grid.fmap)) for s, w in baseline_w.items()}
    ratio_rank = performance_ratio(grid, rank_reward)
    return ComparisonReport(
        rankirl_w=sol.w,
        baseline_w=baseline_w,
        even_odd_preference=even_odd_preference(rank_reward, spec),
        baseline_even_odd_preference={s: even_odd_preference(w, spec) for s, w in baseline_w.items()},
        perf_ratio_rankirl=ratio_rank,
        perf_ratio_baseline=ratio_base,
        advantage=ratio_rank - float(np.mean(list(ratio_base.values()))),
        baseline_converged={s: tr.converged for s, tr in zip(seeds, traces)},
        baseline_iterations={s: len(tr.iterations) for s, tr in zip(seeds, traces)},
        rankirl_margins=sol.margins.tolist(),
        rankirl_objective=sol.objective,
        mus={r: mus[r] for r in sorted(mus)},
        spec=asdict(spec),
        settings={
            "n_baseline_seeds": n_baseline_seeds,
            "sample_mode": sample_mode,
            "n_traj": n_traj,
            "C": C,
            "epsilon": epsilon,
            "max_iter": max_iter,
            "seed": seed,
            "tol": tol,
        },
    )


def report_to_dict(report: ComparisonReport) -> dict:
    """Plain-data view of a report; internal rank 4 is the expert (user label 1)."""
    base_ratios = list(report.perf_ratio_baseline.values())
    return {
        "rankirl": {
            "w": report.rankirl_w,
            "even_odd_preference": report.even_odd_preference,
            "perf_ratio": report.perf_ratio_rankirl,
            "margins": report.rankirl_margins,
            "objective": report.rankirl_objective,
        },
        "baseline": {
            str(seed): {
                "final_w": report.baseline_w[seed],
                "even_odd_preference": report.baseline_even_odd_preference[seed],
                "perf_ratio": report.perf_ratio_baseline[seed],
                "converged": report.baseline_converged[seed],
                "iterations": report.baseline_iterations[seed],
            }
            for seed in report.baseline_w
        },
        "baseline_mean_even_odd_preference": float(np.mean(list(report.baseline_even_odd_preference.values()))),
        "baseline_mean_perf_ratio": float(np.mean(base_ratios)),
        "baseline_w_std": float(np.std(np.vstack(list(report.baseline_w.values())), axis=0).max()),
        "advantage": report.advantage,
        "rank_labels": {"convention": "label 1 = expert", "label_to_internal": {"1": 4, "2": 3, "3": 2, "4": 1}},
        "grid": report.spec,
        "grid_note": "reward values, goal cell and discount are package defaults, not published values",
        "settings": report.settings,
    }
