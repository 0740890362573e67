"""Interactive imitation with an exact best-response oracle and exponential-weights updates.

Each iteration computes exact best responses to the current learner pair, samples one
state from each deviation occupancy, asks the expert for one action at each, and
takes a mirror-descent step on the sampled state's row.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import best_response_max, best_response_min, nash_gap
from .expert_data import ExpertOracle, Player
from .game import PolicyPair, TabularPolicy, ZeroSumGame, sample_state_from_tables
from .records import Checkpoints, RunRecord
from .rng import split

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SparseGradient:
    """The one nonzero row of a policy gradient estimate."""

    state: int
    row: np.ndarray


@dataclass
class LearnerRunResult:
    output_pair: PolicyPair
    output_index: int  # 1-based index of the returned iterate
    expert_queries_used: int
    checkpoint_records: list[RunRecord]
    eta: float
    iterate_policies: list[PolicyPair] | None = None
    iterate_gaps: np.ndarray | None = None  # Nash gap of iterate k at position k-1
    diagnostics: dict = field(default_factory=dict)

    @property
    def average_iterate_gap(self) -> float:
        """Expected Nash gap of the output over the uniform draw of its index."""
        if self.iterate_gaps is None:
            raise ValueError("iterate gaps were not recorded")
        return float(np.mean(self.iterate_gaps))


def gradient_estimate(current_row, sampled_state: int, expert_action: int) -> SparseGradient:
    row = np.array(current_row, dtype=float)
    if not 0 <= expert_action < row.shape[0]:
        raise IndexError(f"expert action {expert_action} out of range")
    row[expert_action] -= 1.0
    return SparseGradient(int(sampled_state), row)


def _step_log_row(log_row: np.ndarray, grad_row: np.ndarray, eta: float) -> np.ndarray:
    z = log_row - eta * grad_row
    top = z.max()
    return z - (top + math.log(np.exp(z - top).sum()))


def exp_weights_update(policy: TabularPolicy, gradient: SparseGradient, eta: float) -> TabularPolicy:
    """Multiply the sampled row by ``exp(-eta * g)`` and renormalize."""
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    row = policy.probs[gradient.state]
    if np.any(row <= 0):
        raise ValueError(f"row {gradient.state} is not strictly positive")
    new_row = np.exp(_step_log_row(np.log(row), gradient.row, eta))
    if not np.all(new_row > 0) or not np.isfinite(new_row).all():
        raise FloatingPointError("exponential-weights row lost all mass")
    probs = policy.probs.copy()
    probs[gradient.state] = new_row / new_row.sum()
    return TabularPolicy(probs)


def learning_rate(n_states: int, n_actions_max: int, K: int, mode: str = "sqrt") -> float:
    """Default step size. ``sqrt`` balances the regret bound; ``literal`` omits the root."""
    base = 2 * n_states * math.log(n_actions_max) / K
    if mode == "sqrt":
        return math.sqrt(base)
    if mode == "literal":
        return base
    raise ValueError(f"unknown learning-rate mode {mode!r}")


def resolve_eta(game: ZeroSumGame, K: int, eta) -> float:
    if isinstance(eta, str):
        value = learning_rate(game.n_states, max(game.n_actions_max, game.n_actions_min), K, eta)
        log.info("learning rate %s form: eta=%.6g", eta, value)
        return value
    return float(eta)


class LogPolicy:
    """Learner policy kept in log space so rows stay strictly positive."""

    def __init__(self, probs: np.ndarray):
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("initial policy must be strictly positive")
        self.log = np.log(probs / probs.sum(axis=1, keepdims=True))

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log)

    def step(self, gradient: SparseGradient, eta: float) -> None:
        self.log[gradient.state] = _step_log_row(self.log[gradient.state], gradient.row, eta)

    def freeze(self) -> TabularPolicy:
        p = self.probs
        return TabularPolicy(p / p.sum(axis=1, keepdims=True))


def _initial_tables(game: ZeroSumGame, init: PolicyPair | None):
    if init is None:
        return (
            LogPolicy(np.full((game.n_states, game.n_actions_max), 1.0 / game.n_actions_max)),
            LogPolicy(np.full((game.n_states, game.n_actions_min), 1.0 / game.n_actions_min)),
        )
    init.check_against(game)
    return LogPolicy(init.max_policy.probs), LogPolicy(init.min_policy.probs)


def run_mail_bro(
    game: ZeroSumGame,
    oracle: ExpertOracle,
    K: int,
    eta,
    rng: np.random.Generator,
    eval_schedule=(),
    *,
    init: PolicyPair | None = None,
    keep_iterates: bool = False,
    algo_tag: str = "mail_bro",
) -> LearnerRunResult:
    """Run ``K`` iterations and return the iterate at a uniformly drawn index.

    ``eta`` is a number or a learning-rate mode (``"sqrt"`` or ``"literal"``).
    The exact Nash gap of every iterate is a by-product of the best responses and
    is returned in ``iterate_gaps``.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    oracle.expert.check_against(game)
    eta = resolve_eta(game, K, eta)
    loop_rng, pick_rng = split(rng, 2)
    k_hat = int(pick_rng.integers(1, K + 1))
    start_queries = oracle.queries
    checkpoints = Checkpoints(eval_schedule)
    records: list[RunRecord] = []
    gaps = np.empty(K)
    iterates: list[PolicyPair] = []
    output = None
    mu, nu = _initial_tables(game, init)
    t0 = time.perf_counter()

    for k in range(1, K + 1):
        mu_k, nu_k = mu.freeze(), nu.freeze()
        pair_k = PolicyPair(mu_k, nu_k)
        if keep_iterates:
            iterates.append(pair_k)
        if k == k_hat:
            output = pair_k
        try:
            br_max, V_max = best_response_max(game, nu_k)
            br_min, V_min = best_response_min(game, mu_k)
        except Exception as exc:
            raise RuntimeError(f"best-response oracle failed at iteration {k}") from exc
        gaps[k - 1] = float(game.initial_dist @ (V_max - V_min))

        s_mu = sample_state_from_tables(game, mu_k.probs, br_min.probs, loop_rng)
        a_mu = oracle.sample(Player.MAX, s_mu, loop_rng)
        s_nu = sample_state_from_tables(game, br_max.probs, nu_k.probs, loop_rng)
        b_nu = oracle.sample(Player.MIN, s_nu, loop_rng)
        mu.step(gradient_estimate(mu_k.probs[s_mu], s_mu, a_mu), eta)
        nu.step(gradient_estimate(nu_k.probs[s_nu], s_nu, b_nu), eta)

        used = oracle.queries - start_queries
        if checkpoints.due(used):
            gap = nash_gap(game, PolicyPair(mu.freeze(), nu.freeze())).gap
            ms = int((time.perf_counter() - t0) * 1000)
            records.append(RunRecord(algo_tag, -1, used, gap, ms))

    return LearnerRunResult(
        output_pair=output,
        output_index=k_hat,
        expert_queries_used=oracle.queries - start_queries,
        checkpoint_records=records,
        eta=eta,
        iterate_policies=iterates if keep_iterates else None,
        iterate_gaps=gaps,
    )
