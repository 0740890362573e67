"""Imitation learning in tabular two-player zero-sum Markov games."""

from .environments import ExpertMixSpec, LowerBoundSpec, build_lower_bound_expert, build_lower_bound_game, build_random_zero_sum
from .equilibrium import best_response_max, best_response_min, expert_concentrability, nash_gap, shapley_value_iteration
from .expert_data import ExpertOracle, behavior_cloning, collect_dataset
from .game import PolicyPair, TabularPolicy, ZeroSumGame
from .mail_bro import run_mail_bro
from .murmail import run_murmail, ucbvi

__all__ = [
    "ExpertMixSpec",
    "ExpertOracle",
    "LowerBoundSpec",
    "PolicyPair",
    "TabularPolicy",
    "ZeroSumGame",
    "behavior_cloning",
    "best_response_max",
    "best_response_min",
    "build_lower_bound_expert",
    "build_lower_bound_game",
    "build_random_zero_sum",
    "collect_dataset",
    "expert_concentrability",
    "nash_gap",
    "run_mail_bro",
    "run_murmail",
    "shapley_value_iteration",
    "ucbvi",
]
