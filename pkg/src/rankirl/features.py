"""Feature maps and discounted feature expectations.

A feature expectation is ``mu(pi) = E[sum_t gamma^t phi(s_t) | pi, s_0 ~ D]``;
for a linear reward ``R = w . phi`` it satisfies ``E_D[V^pi] = w . mu(pi)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .mdp import Mdp, check_policy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureMap:
    """Per-state feature table ``phi[s]`` with shape (n_states, d)."""

    phi: np.ndarray

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 2:
            raise ValueError("phi must be a 2-d table (n_states, d)")
        if phi.min(initial=0.0) < 0.0 or phi.max(initial=0.0) > 1.0:
            raise ValueError("features must lie in [0, 1]; use FeatureMap.normalized for raw data")
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)

    @property
    def n_states(self) -> int:
        return self.phi.shape[0]

    @property
    def d(self) -> int:
        return self.phi.shape[1]

    @classmethod
    def lossless(cls, n_states: int) -> "FeatureMap":
        """One indicator feature per state."""
        return cls(np.eye(n_states))

    @classmethod
    def normalized(cls, raw) -> "FeatureMap":
        """Min-max scale each column of ``raw`` into [0, 1]; constant columns become 0."""
        raw = np.asarray(raw, dtype=float)
        lo, hi = raw.min(axis=0), raw.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        if np.any(lo < 0) or np.any(hi > 1):
            log.info("min-max normalizing features: lo=%s hi=%s", lo.tolist(), hi.tolist())
        return cls((raw - lo) / span)


@dataclass(frozen=True)
class Trajectory:
    """Visited state indices with optional per-step metadata."""

    states: np.ndarray
    occupied: np.ndarray | None = None
    times: np.ndarray | None = None

    def __post_init__(self):
        states = np.asarray(self.states, dtype=np.int64)
        if states.ndim != 1 or states.size == 0:
            raise ValueError("trajectory must be a non-empty 1-d sequence of states")
        object.__setattr__(self, "states", states)
        for name in ("occupied", "times"):
            value = getattr(self, name)
            if value is not None:
                value = np.asarray(value)
                if value.shape != states.shape:
                    raise ValueError(f"{name} must align with states")
                object.__setattr__(self, name, value)

    def __len__(self):
        return self.states.size


@dataclass(frozen=True)
class Mu:
    """A feature expectation with its rank label (higher rank = better)."""

    vector: np.ndarray
    rank: int
    source_id: Any = None

    def __post_init__(self):
        v = np.array(self.vector, dtype=float)
        if v.ndim != 1:
            raise ValueError("mu vector must be 1-d")
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)
        if int(self.rank) != self.rank or self.rank < 1:
            raise ValueError(f"rank must be a positive integer, got {self.rank!r}")
        object.__setattr__(self, "rank", int(self.rank))


def point_mass(n_states: int, state: int) -> np.ndarray:
    d0 = np.zeros(n_states)
    d0[state] = 1.0
    return d0


def uniform_distribution(n_states: int) -> np.ndarray:
    return np.full(n_states, 1.0 / n_states)


def check_distribution(d0, n_states: int) -> np.ndarray:
    d0 = np.asarray(d0, dtype=float)
    if d0.shape != (n_states,):
        raise ValueError(f"initial distribution must have length {n_states}")
    if d0.min() < 0 or abs(d0.sum() - 1.0) > 1e-12:
        raise ValueError("initial distribution must be nonnegative and sum to 1")
    return d0


def occupancy(mdp: Mdp, policy, d0) -> np.ndarray:
    """Discounted state occupancy ``x = d0 + gamma P_pi^T x``."""
    d0 = check_distribution(d0, mdp.n_states)
    P_pi = mdp.policy_matrix(policy)
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi.T
    x = np.linalg.solve(A, d0)
    r = d0 - A @ x
    if np.max(np.abs(r)) > 1e-10:
        x = x + np.linalg.solve(A, r)
    return x


def exact_mu(mdp: Mdp, policy, fmap: FeatureMap, d0) -> np.ndarray:
    if fmap.n_states != mdp.n_states:
        raise ValueError("feature map and MDP disagree on the number of states")
    return fmap.phi.T @ occupancy(mdp, policy, d0)


def _states_of(traj) -> np.ndarray:
    return traj.states if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.int64)


def discounted_feature_sums(trajectories: Sequence, fmap: FeatureMap, gamma: float) -> np.ndarray:
    """Per-trajectory ``sum_t gamma^t phi(s_t)``, one row per trajectory."""
    if len(trajectories) == 0:
        raise ValueError("need at least one trajectory")
    rows = np.empty((len(trajectories), fmap.d))
    for i, traj in enumerate(trajectories):
        states = _states_of(traj)
        if states.size == 0:
            raise ValueError(f"trajectory {i} is empty")
        if states.min() < 0 or states.max() >= fmap.n_states:
            raise ValueError(f"trajectory {i} has a state index outside [0, {fmap.n_states})")
        discounts = float(gamma) ** np.arange(states.size)
        rows[i] = discounts @ fmap.phi[states]
    return rows


def empirical_mu(trajectories: Sequence, fmap: FeatureMap, gamma: float) -> np.ndarray:
    """Average discounted feature sum; each trajectory is discounted from its own t = 0."""
    return discounted_feature_sums(trajectories, fmap, gamma).mean(axis=0)


def value_from_w(w, mu) -> float:
    w = np.asarray(w, dtype=float)
    mu = np.asarray(getattr(mu, "vector", mu), dtype=float)
    if w.shape != mu.shape:
        raise ValueError(f"w has shape {w.shape} but mu has shape {mu.shape}")
    return float(w @ mu)


def truncation_horizon(gamma: float, phi_max: float = 1.0, tol: float = 1e-6) -> int:
    """Smallest T with ``gamma^T * phi_max / (1 - gamma) <= tol``."""
    if gamma == 0.0:
        return 1
    bound = phi_max / (1.0 - gamma)
    if bound <= tol:
        return 1
    T = math.ceil(math.log(tol / bound) / math.log(gamma))
    while gamma ** T * bound > tol:
        T += 1
    return max(T, 1)


def sample_trajectories(mdp: Mdp, policy, d0, n: int, horizon: int, rng) -> list[np.ndarray]:
    """Roll out ``n`` trajectories of fixed length under a deterministic policy."""
    policy = check_policy(mdp, policy)
    d0 = check_distribution(d0, mdp.n_states)
    P_pi = mdp.policy_matrix(policy)
    cdf = np.cumsum(P_pi, axis=1)
    cdf[:, -1] = 1.0
    states = np.empty((n, horizon), dtype=np.int64)
    states[:, 0] = rng.choice(mdp.n_states, size=n, p=d0)
    for t in range(1, horizon):
        u = rng.random(n)
        prev = states[:, t - 1]
        states[:, t] = (cdf[prev] < u[:, None]).sum(axis=1)
    return list(states)
