"""Max-margin apprenticeship learning (Abbeel & Ng, 2004) as a comparison baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap, empirical_mu, exact_mu, sample_trajectories, truncation_horizon
from .mdp import Mdp, optimal_policy
from .minnorm import min_norm_in_hull

log = logging.getLogger(__name__)


@dataclass
class AlIteration:
    w: np.ndarray
    t: float
    policy: np.ndarray
    mu: np.ndarray


@dataclass
class AlTrace:
    seed: int
    iterations: list = field(default_factory=list)
    final_w: np.ndarray | None = None
    converged: bool = False
    initial_policy: np.ndarray | None = None
    initial_mu: np.ndarray | None = None


def max_margin_weights(mu_expert, mus) -> tuple[np.ndarray, float]:
    """Solve ``max t s.t. w.mu_E >= w.mu_j + t for all j, ||w|| <= 1``.

    The optimum is the minimum-norm point ``x`` of conv{mu_E - mu_j}:
    ``t = ||x||`` and ``w = x / ||x||``. If the expert lies in the hull of
    the other feature expectations the margin is 0 and ``w = 0``.
    """
    diffs = np.asarray(mu_expert, dtype=float)[None, :] - np.atleast_2d(np.asarray(mus, dtype=float))
    scale = max(1.0, float(np.max(np.abs(diffs))))
    res = min_norm_in_hull(diffs, tol=1e-12 * scale, zero_tol=1e-12 * scale)
    t = res.norm
    if t <= 1e-12 * scale:
        return np.zeros(diffs.shape[1]), 0.0
    return res.x / t, t


def abbeel_max_margin(
    mdp: Mdp,
    fmap: FeatureMap,
    d0,
    mu_expert,
    epsilon: float,
    max_iter: int = 100,
    seed: int = 0,
    initial_policy=None,
    sampled: bool = False,
    n_traj: int = 1000,
    tol: float = 1e-10,
) -> AlTrace:
    """Run the max-margin loop until the margin ``t_i`` drops to ``epsilon``.

    ``pi_0`` draws one uniformly random action per state from ``seed`` unless
    ``initial_policy`` is given. With ``sampled=True`` the feature expectations
    of intermediate policies are Monte-Carlo estimates from ``n_traj`` rollouts.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    mu_expert = np.asarray(mu_expert, dtype=float)
    if mu_expert.shape != (fmap.d,):
        raise ValueError(f"expert mu must have length {fmap.d}")
    rng = np.random.default_rng(seed)

    if sampled:
        horizon = truncation_horizon(mdp.gamma, float(fmap.phi.max(initial=1.0)))

        def feature_expectation(policy):
            trajs = sample_trajectories(mdp, policy, d0, n_traj, horizon, rng)
            return empirical_mu(trajs, fmap, mdp.gamma)
    else:
        def feature_expectation(policy):
            return exact_mu(mdp, policy, fmap, d0)

    if initial_policy is None:
        initial_policy = rng.integers(mdp.n_actions, size=mdp.n_states)
    policy = np.asarray(initial_policy)
    trace = AlTrace(seed=seed, initial_policy=policy, initial_mu=feature_expectation(policy))
    seen = [trace.initial_mu]

    w = np.zeros(fmap.d)
    for i in range(1, max_iter + 1):
        w, t = max_margin_weights(mu_expert, np.vstack(seen))
        if t <= epsilon:
            trace.iterations.append(AlIteration(w, t, None, None))
            trace.converged = True
            break
        policy, _ = optimal_policy(mdp, fmap.phi @ w, tol=tol)
        mu = feature_expectation(policy)
        trace.iterations.append(AlIteration(w, t, policy, mu))
        seen.append(mu)
        log.debug("iteration %d: t=%.6g", i, t)
    trace.final_w = w
    return trace
