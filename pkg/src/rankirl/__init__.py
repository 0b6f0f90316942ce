"""Reward recovery from ranked demonstrators via sum-of-margins ordinal regression."""

from .features import FeatureMap, Mu, Trajectory, empirical_mu, exact_mu
from .mdp import Mdp, optimal_policy, policy_evaluation, validate_mdp
from .ordinal import RankedDataset, RankSolution, solve_sum_of_margins

__all__ = [
    "FeatureMap",
    "Mdp",
    "Mu",
    "RankSolution",
    "RankedDataset",
    "Trajectory",
    "empirical_mu",
    "exact_mu",
    "optimal_policy",
    "policy_evaluation",
    "solve_sum_of_margins",
    "validate_mdp",
]
