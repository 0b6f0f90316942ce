"""Finite MDPs: validation, exact policy evaluation and optimal control.

Rewards are per-state and accrue on the current state, including t = 0::

    V(s) = R(s) + gamma * sum_s' P(s' | s, pi(s)) V(s')

Policies are deterministic integer arrays of length ``n_states``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DIRECT_SOLVE_MAX_STATES = 2000
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Mdp:
    """A finite MDP with transition table ``P[s, a, s']``."""

    transition: np.ndarray
    gamma: float
    reward: np.ndarray | None = field(default=None)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        P.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "gamma", float(self.gamma))
        if self.reward is not None:
            r = np.array(self.reward, dtype=float)
            if r.shape != (P.shape[0],):
                raise ValueError(f"reward must have length {P.shape[0]}, got {r.shape}")
            r.setflags(write=False)
            object.__setattr__(self, "reward", r)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def policy_matrix(self, policy) -> np.ndarray:
        """Return the state-to-state matrix ``P_pi[s, s'] = P(s' | s, pi(s))``."""
        policy = check_policy(self, policy)
        return self.transition[np.arange(self.n_states), policy]


def validate_mdp(mdp: Mdp) -> list[str]:
    """List every violated MDP invariant; empty when the MDP is well formed."""
    problems = []
    P = mdp.transition
    for s, a in zip(*np.nonzero((P < 0).any(axis=2))):
        problems.append(f"(s={s}, a={a}): negative transition probability")
    sums = P.sum(axis=2)
    for s, a in zip(*np.nonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)):
        problems.append(f"(s={s}, a={a}): row sums to {sums[s, a]!r}, not 1")
    if not (0.0 <= mdp.gamma < 1.0):
        problems.append(f"gamma not < 1 (or negative): gamma={mdp.gamma!r}")
    return problems


def check_policy(mdp: Mdp, policy) -> np.ndarray:
    policy = np.asarray(policy)
    if policy.shape != (mdp.n_states,):
        raise ValueError(f"policy must have length {mdp.n_states}, got shape {policy.shape}")
    if not np.issubdtype(policy.dtype, np.integer):
        raise ValueError("policy entries must be integer action indices")
    if policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ValueError("policy contains an action index out of range")
    return policy


def _check_reward(mdp: Mdp, reward) -> np.ndarray:
    reward = np.asarray(reward, dtype=float)
    if reward.shape != (mdp.n_states,):
        raise ValueError(f"reward must have length {mdp.n_states}, got shape {reward.shape}")
    return reward


def bellman_residual(mdp: Mdp, policy, reward, values) -> float:
    """Max-norm residual of the policy's Bellman equation at ``values``."""
    P_pi = mdp.policy_matrix(policy)
    values = np.asarray(values, dtype=float)
    return float(np.max(np.abs(reward + mdp.gamma * P_pi @ values - values)))


def policy_evaluation(mdp: Mdp, policy, reward, tol: float = 1e-10) -> np.ndarray:
    """Exact value of a deterministic policy.

    Small MDPs are solved directly as ``(I - gamma P_pi) V = R``; above
    ``DIRECT_SOLVE_MAX_STATES`` states repeated Bellman sweeps are used.
    Either way the returned vector has Bellman residual at most ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    reward = _check_reward(mdp, reward)
    P_pi = mdp.policy_matrix(policy)
    n = mdp.n_states
    if n <= DIRECT_SOLVE_MAX_STATES:
        A = np.eye(n) - mdp.gamma * P_pi
        V = np.linalg.solve(A, reward)
        for _ in range(3):
            # iterative refinement; matters only when gamma is close to 1
            r = reward - A @ V
            if np.max(np.abs(r)) <= tol:
                break
            V = V + np.linalg.solve(A, r)
        return V
    # sweeps: the residual of V is the gap to the next iterate
    V = np.zeros(n)
    while True:
        V_next = reward + mdp.gamma * P_pi @ V
        if np.max(np.abs(V_next - V)) <= tol:
            return V
        V = V_next


def q_values(mdp: Mdp, reward, values) -> np.ndarray:
    """``Q[s, a] = R(s) + gamma * E[V(s') | s, a]``."""
    return reward[:, None] + mdp.gamma * mdp.transition @ values


def greedy_policy(mdp: Mdp, reward, values, tie_tol: float = 1e-12) -> np.ndarray:
    """Greedy actions; near-ties (within ``tie_tol`` relative) go to the lowest index."""
    reward = _check_reward(mdp, reward)
    Q = q_values(mdp, reward, np.asarray(values, dtype=float))
    best = Q.max(axis=1, keepdims=True)
    slack = tie_tol * np.maximum(1.0, np.abs(best))
    return np.argmax(Q >= best - slack, axis=1)


def bellman_backup(mdp: Mdp, reward, values) -> np.ndarray:
    """One value-iteration sweep."""
    reward = _check_reward(mdp, reward)
    return q_values(mdp, reward, np.asarray(values, dtype=float)).max(axis=1)


def optimal_policy(mdp: Mdp, reward, tol: float = 1e-10, max_iter: int = 100_000):
    """Optimal deterministic policy and its value function.

    Value iteration runs until the Bellman optimality residual is below ``tol``;
    the greedy policy is then polished by policy iteration so the returned
    values are the exact values of the returned policy.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    reward = _check_reward(mdp, reward)
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        V_next = bellman_backup(mdp, reward, V)
        done = np.max(np.abs(V_next - V)) <= tol
        V = V_next
        if done:
            break
    else:
        raise RuntimeError(f"value iteration did not reach residual {tol} in {max_iter} sweeps")

    policy = greedy_policy(mdp, reward, V)
    for _ in range(100):
        V = policy_evaluation(mdp, policy, reward, tol=tol)
        improved = greedy_policy(mdp, reward, V)
        # keep the incumbent action unless another is strictly better
        Q = q_values(mdp, reward, V)
        idx = np.arange(mdp.n_states)
        keep = Q[idx, improved] <= Q[idx, policy] + 1e-12 * np.maximum(1.0, np.abs(V))
        improved = np.where(keep, policy, improved)
        if np.array_equal(improved, policy):
            break
        policy = improved
    return policy, V


def single_state_mdp(n_actions: int = 1, gamma: float = 0.9) -> Mdp:
    return Mdp(np.ones((1, n_actions, 1)), gamma)


def random_mdp(n_states: int, n_actions: int, gamma: float, rng) -> Mdp:
    """Dense random MDP with Dirichlet transition rows (test/benchmark helper)."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return Mdp(P, gamma)


@dataclass(frozen=True)
class Prop1Instance:
    mdp: Mdp
    true_reward: np.ndarray
    approx_reward: np.ndarray
    expert_policy: np.ndarray
    pi1: np.ndarray
    pi2: np.ndarray


def build_prop1_mdp(delta: float, gamma: float) -> Prop1Instance:
    """Four-state counterexample where the expert hides a penalty state.

    States s0..s3, actions a, b, c (indices 0, 1, 2). From s0 action a enters
    s1, b enters s2 and c enters s3; s1, s2 and s3 absorb under every action.
    True reward is (0, -delta, +1, 0); the approximate reward (0, 0, 1, 0)
    makes the same expert optimal but cannot tell s1 from s3.

    Labels follow the transition diagram: the expert takes b (into the +1
    state s2), pi1 takes a (into the penalty state s1) and pi2 takes c.
    The textual proof's "pi_E(s0) = a" and "R_hat(s1) = 1" are read as a
    relabelling of the same construction, and the value equality under the
    approximate reward is the one between pi1 and pi2.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    P = np.zeros((4, 3, 4))
    P[0, 0, 1] = P[0, 1, 2] = P[0, 2, 3] = 1.0
    for s in (1, 2, 3):
        P[s, :, s] = 1.0
    return Prop1Instance(
        mdp=Mdp(P, gamma),
        true_reward=np.array([0.0, -delta, 1.0, 0.0]),
        approx_reward=np.array([0.0, 0.0, 1.0, 0.0]),
        expert_policy=np.array([1, 0, 0, 0]),
        pi1=np.array([0, 0, 0, 0]),
        pi2=np.array([2, 0, 0, 0]),
    )
