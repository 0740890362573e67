"""Exact equilibrium tools: matrix games, Shapley iteration, best responses, Nash gap,
and expert-deviation concentrability."""

from __future__ import annotations

import enum
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .game import (
    InducedMdp,
    PolicyPair,
    TabularPolicy,
    ZeroSumGame,
    chain_occupancy,
    evaluate_chain,
    induce_mdp_for_max,
    induce_mdp_for_min,
    occupancy_of_pair,
)

log = logging.getLogger(__name__)

# Relative slack under which two Q values count as tied when picking greedy actions.
GREEDY_TIE_RTOL = 1e-12
# Looser slack used to enumerate tied best responses for concentrability.
ENUMERATION_TIE_TOL = 1e-9
MAX_ENUMERATED = 1_000_000
# Exact support enumeration is the last resort for matrix games up to this size.
MAX_SUPPORT_ENUMERATION = 6
ZERO_DENOMINATOR = 1e-14
NONZERO_NUMERATOR = 1e-12


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class MatrixGameSolution:
    row_strategy: np.ndarray
    col_strategy: np.ndarray
    value: float

    def deviation_slack(self, payoff: np.ndarray) -> float:
        """Largest gain any pure deviation achieves against the solution."""
        M = np.asarray(payoff, dtype=float)
        row_best = float(np.max(M @ self.col_strategy))
        col_best = float(np.min(self.row_strategy @ M))
        return max(row_best - self.value, self.value - col_best)


def _certified(M, x, y, tolerance) -> MatrixGameSolution | None:
    x = np.clip(x, 0.0, None)
    y = np.clip(y, 0.0, None)
    if x.sum() <= 0 or y.sum() <= 0:
        return None
    x, y = x / x.sum(), y / y.sum()
    sol = MatrixGameSolution(x, y, float(x @ M @ y))
    return sol if sol.deviation_slack(M) <= tolerance else None


def _row_lp(M: np.ndarray):
    m, n = M.shape
    c = np.zeros(m + 1)
    c[-1] = -1.0
    A_ub = np.hstack([-M.T, np.ones((n, 1))])
    A_eq = np.hstack([np.ones((1, m)), np.zeros((1, 1))])
    bounds = [(0, None)] * m + [(None, None)]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=[1.0], bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        return None, None
    return res.x[:m], -res.ineqlin.marginals


def _equalize(M: np.ndarray, rows: np.ndarray, cols: np.ndarray):
    """Strategies supported on ``rows`` x ``cols`` that make the opponent indifferent."""
    k = len(rows)
    if k != len(cols) or k < 2:
        return None
    sub = M[np.ix_(rows, cols)]
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = sub
    K[:k, k] = -1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    try:
        y_sub = np.linalg.solve(K, rhs)[:k]
        Kt = K.copy()
        Kt[:k, :k] = sub.T
        x_sub = np.linalg.solve(Kt, rhs)[:k]
    except np.linalg.LinAlgError:
        return None
    x = np.zeros(M.shape[0])
    y = np.zeros(M.shape[1])
    x[rows], y[cols] = x_sub, y_sub
    return x, y


def _try_supports(M, pairs, tolerance) -> MatrixGameSolution | None:
    for rows, cols in pairs:
        guess = _equalize(M, np.asarray(rows), np.asarray(cols))
        if guess is not None and min(guess[0].min(), guess[1].min()) >= -1e-12:
            sol = _certified(M, *guess, tolerance)
            if sol is not None:
                return sol
    return None


def _polish(M, x, y, tolerance) -> MatrixGameSolution | None:
    pairs = [(np.flatnonzero(x > cut), np.flatnonzero(y > cut)) for cut in (1e-9, 1e-7, 1e-5)]
    return _try_supports(M, pairs, tolerance)


def _enumerate_supports(M, tolerance) -> MatrixGameSolution | None:
    m, n = M.shape
    pairs = (
        (rows, cols)
        for k in range(2, min(m, n) + 1)
        for rows in itertools.combinations(range(m), k)
        for cols in itertools.combinations(range(n), k)
    )
    return _try_supports(M, pairs, tolerance)


def solve_matrix_game(
    payoff, tolerance: float = 1e-10, hint: MatrixGameSolution | None = None
) -> MatrixGameSolution:
    """Equilibrium of the zero-sum matrix game where the row player maximizes.

    A pure saddle point is returned directly when one exists. If ``hint`` is a
    previous solution of a nearby game, its supports are tried with an
    equalizing linear solve. Otherwise the minimax linear program is solved and
    its dual gives the column strategy. Every answer is certified by
    pure-deviation checks.
    """
    M = np.asarray(payoff, dtype=float)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("payoff must be a nonempty matrix")
    if not np.all(np.isfinite(M)):
        raise ValueError("payoff has non-finite entries")

    i = int(np.argmax(M.min(axis=1)))
    j = int(np.argmin(M.max(axis=0)))
    if M.max(axis=0)[j] - M.min(axis=1)[i] <= tolerance:
        return MatrixGameSolution(np.eye(M.shape[0])[i], np.eye(M.shape[1])[j], float(M[i, j]))

    if hint is not None:
        guess = _equalize(M, np.flatnonzero(hint.row_strategy > 0), np.flatnonzero(hint.col_strategy > 0))
        if guess is not None and min(guess[0].min(), guess[1].min()) >= -1e-12:
            sol = _certified(M, *guess, tolerance)
            if sol is not None:
                return sol

    # centre and scale the payoff for the LP, then map back
    shift = float(M.mean())
    scale = float(np.max(np.abs(M - shift))) or 1.0
    x, y = _row_lp((M - shift) / scale)
    if x is not None:
        sol = _certified(M, x, y, tolerance)
        if sol is not None:
            return sol
        # LP feasibility tolerances are coarse on badly scaled payoffs; re-solve on its supports
        sol = _polish(M, x, y, tolerance)
        if sol is not None:
            return sol
    # fall back to solving each side as its own row problem
    x2, _ = _row_lp((M - shift) / scale)
    y2, _ = _row_lp(-((M - shift) / scale).T)
    if x2 is not None and y2 is not None:
        sol = _certified(M, x2, y2, tolerance)
        if sol is not None:
            return sol
    if min(M.shape) <= MAX_SUPPORT_ENUMERATION:
        sol = _enumerate_supports(M, tolerance)
        if sol is not None:
            return sol
    raise RuntimeError(f"could not certify a matrix-game equilibrium within {tolerance}")


@dataclass(frozen=True)
class ShapleyResult:
    pair: PolicyPair
    values: np.ndarray
    iterations: int
    converged: bool

    def __iter__(self):
        # allows ``pair, values = shapley_value_iteration(...)``
        return iter((self.pair, self.values))


def shapley_value_iteration(
    game: ZeroSumGame, tolerance: float = 1e-8, max_iters: int = 10_000
) -> ShapleyResult:
    """Iterate the minimax Bellman operator, solving a stage matrix game per state.

    Stops once successive value vectors differ by at most
    ``tolerance * (1 - gamma) / (2 gamma)`` in sup norm. Hitting ``max_iters`` first
    returns ``converged=False`` and emits a warning.
    """
    S, A, B = game.n_states, game.n_actions_max, game.n_actions_min
    gamma = game.discount
    threshold = tolerance * (1 - gamma) / (2 * gamma) if gamma > 0 else math.inf
    stage_tol = min(1e-10, threshold / 10) if math.isfinite(threshold) else 1e-10
    V = np.zeros(S)
    mu = np.full((S, A), 1.0 / A)
    nu = np.full((S, B), 1.0 / B)
    previous: list[MatrixGameSolution | None] = [None] * S
    for it in range(1, max_iters + 1):
        stage = game.reward + gamma * game.transition @ V
        V_new = np.empty(S)
        for s in range(S):
            sol = solve_matrix_game(stage[s], stage_tol, hint=previous[s])
            previous[s] = sol
            mu[s], nu[s], V_new[s] = sol.row_strategy, sol.col_strategy, sol.value
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta <= threshold:
            return ShapleyResult(PolicyPair(TabularPolicy(mu), TabularPolicy(nu)), V, it, True)
    warnings.warn(f"Shapley iteration did not meet its stopping rule in {max_iters} iterations")
    return ShapleyResult(PolicyPair(TabularPolicy(mu), TabularPolicy(nu)), V, max_iters, False)


def _lowest_argmax(Q: np.ndarray, tie_tol: float) -> np.ndarray:
    best = Q.max(axis=1, keepdims=True)
    return np.argmax(Q >= best - tie_tol, axis=1)


def solve_induced_mdp(mdp: InducedMdp, max_iters: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Optimal deterministic policy (as action indices) and its value by policy iteration.

    Minimization is handled by negating rewards. Among near-tied actions the
    lowest index wins.
    """
    sign = 1.0 if mdp.sense.value == "maximize" else -1.0
    P, r, gamma = mdp.transition, sign * mdp.reward, mdp.discount
    S = P.shape[0]
    rows = np.arange(S)
    scale = max(1.0, float(np.max(np.abs(r))) / max(1e-300, 1 - gamma))
    tie_tol = GREEDY_TIE_RTOL * scale
    policy = np.zeros(S, dtype=int)
    for _ in range(max_iters):
        V = evaluate_chain(P[rows, policy], r[rows, policy], gamma)
        Q = r + gamma * P @ V
        improvable = Q.max(axis=1) > Q[rows, policy] + tie_tol
        if not improvable.any():
            greedy = _lowest_argmax(Q, tie_tol)
            if np.any(greedy != policy):
                policy = greedy
                V = evaluate_chain(P[rows, policy], r[rows, policy], gamma)
            return policy, sign * V
        policy = np.where(improvable, _lowest_argmax(Q, tie_tol), policy)
    raise NotConverged("policy iteration did not stabilize")


def best_response_max(game: ZeroSumGame, min_policy: TabularPolicy) -> tuple[TabularPolicy, np.ndarray]:
    actions, V = solve_induced_mdp(induce_mdp_for_max(game, min_policy))
    return TabularPolicy.deterministic(actions, game.n_actions_max), V


def best_response_min(game: ZeroSumGame, max_policy: TabularPolicy) -> tuple[TabularPolicy, np.ndarray]:
    actions, V = solve_induced_mdp(induce_mdp_for_min(game, max_policy))
    return TabularPolicy.deterministic(actions, game.n_actions_min), V


@dataclass(frozen=True)
class NashGapReport:
    gap: float
    max_br_value: float
    min_br_value: float
    best_response_max: TabularPolicy
    best_response_min: TabularPolicy

    def to_dict(self) -> dict:
        return {
            "gap": self.gap,
            "max_br_value": self.max_br_value,
            "min_br_value": self.min_br_value,
            "best_response_max": self.best_response_max.probs.tolist(),
            "best_response_min": self.best_response_min.probs.tolist(),
        }


def nash_gap(game: ZeroSumGame, pair: PolicyPair) -> NashGapReport:
    """Exploitability: value of the max best response minus value of the min best response."""
    pair.check_against(game)
    br_max, V_max = best_response_max(game, pair.min_policy)
    br_min, V_min = best_response_min(game, pair.max_policy)
    hi = float(game.initial_dist @ V_max)
    lo = float(game.initial_dist @ V_min)
    return NashGapReport(hi - lo, hi, lo, br_max, br_min)


class ConcentrabilityMode(str, enum.Enum):
    CANONICAL_GREEDY = "canonical_greedy"
    ENUMERATED_DETERMINISTIC = "enumerated_deterministic"


@dataclass(frozen=True)
class ConcentrabilityReport:
    """Largest occupancy ratio of a best-response deviation over the expert's occupancy.

    ``value`` is ``math.inf`` when a deviation reaches a state the expert never
    visits. The number is a certified lower bound: only deterministic best
    responses are examined.
    """

    value: float
    witness_state: int | None
    witness_policy: TabularPolicy
    witness_player: str
    restricted_to: ConcentrabilityMode
    enumeration_overflow: bool = False
    deviations_checked: int = 0
    lower_bound_only: bool = field(default=True)

    @property
    def infinite(self) -> bool:
        return math.isinf(self.value)

    def to_dict(self) -> dict:
        return {
            "value": "inf" if self.infinite else self.value,
            "infinite": self.infinite,
            "witness_state": self.witness_state,
            "witness_policy": self.witness_policy.probs.tolist(),
            "witness_player": self.witness_player,
            "restricted_to": self.restricted_to.value,
            "enumeration_overflow": self.enumeration_overflow,
            "deviations_checked": self.deviations_checked,
            "lower_bound_only": self.lower_bound_only,
        }


def _occupancy_ratio(dev: np.ndarray, ref: np.ndarray) -> tuple[float, int]:
    ratio = np.zeros_like(dev)
    tiny = ref < ZERO_DENOMINATOR
    blowup = tiny & (dev > NONZERO_NUMERATOR)
    if blowup.any():
        return math.inf, int(np.argmax(blowup))
    ratio[~tiny] = dev[~tiny] / ref[~tiny]
    s = int(np.argmax(ratio))
    return float(ratio[s]), s


def _tied_action_sets(mdp: InducedMdp) -> list[list[int]]:
    sign = 1.0 if mdp.sense.value == "maximize" else -1.0
    _, V = solve_induced_mdp(mdp)
    Q = sign * (mdp.reward + mdp.discount * mdp.transition @ V)
    best = Q.max(axis=1)
    return [list(np.flatnonzero(Q[s] >= best[s] - ENUMERATION_TIE_TOL)) for s in range(Q.shape[0])]


def expert_concentrability(
    game: ZeroSumGame,
    expert: PolicyPair,
    mode: ConcentrabilityMode | str = ConcentrabilityMode.ENUMERATED_DETERMINISTIC,
) -> ConcentrabilityReport:
    """Occupancy ratios of best-response deviations against the expert pair."""
    mode = ConcentrabilityMode(mode)
    expert.check_against(game)
    ref = occupancy_of_pair(game, expert)
    sides = [
        ("max", induce_mdp_for_max(game, expert.min_policy), game.n_actions_max),
        ("min", induce_mdp_for_min(game, expert.max_policy), game.n_actions_min),
    ]
    overflow = False
    best = (-math.inf, None, None, "max")
    checked = 0
    for player, mdp, n_actions in sides:
        if mode is ConcentrabilityMode.CANONICAL_GREEDY:
            candidates = [solve_induced_mdp(mdp)[0]]
        else:
            ties = _tied_action_sets(mdp)
            count = math.prod(len(t) for t in ties)
            if count > MAX_ENUMERATED:
                overflow = True
                log.warning("%d tied best responses for %s player; using the greedy one", count, player)
                candidates = [solve_induced_mdp(mdp)[0]]
            else:
                candidates = (np.array(c) for c in itertools.product(*ties))
        rows = np.arange(game.n_states)
        for actions in candidates:
            checked += 1
            dev = chain_occupancy(mdp.transition[rows, actions], game.initial_dist, game.discount)
            value, s = _occupancy_ratio(dev, ref)
            if value > best[0]:
                best = (value, s, TabularPolicy.deterministic(actions, n_actions), player)
            if math.isinf(value):
                break
        if math.isinf(best[0]):
            break
    value, state, policy, player = best
    return ConcentrabilityReport(value, state, policy, player, mode, overflow, checked)
