"""Interactive imitation without a best-response oracle.

The exact best response is replaced by a maximum-uncertainty response: an opponent
policy that steers play toward states where the learner's row is far from the
expert's. It is learned with optimistic tabular value iteration (UCBVI) on the MDP
induced by the learner's current policy, with a two-query unbiased estimate of the
squared distance as reward.
"""

from __future__ import annotations

import bisect
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import nash_gap
from .expert_data import Dataset, ExpertOracle, Player, behavior_cloning
from .game import (
    InducedMdp,
    MAX_ROLLOUT_STEPS,
    PolicyPair,
    RolloutTooLong,
    Sense,
    TabularPolicy,
    ZeroSumGame,
    induce_mdp_for_max,
    induce_mdp_for_min,
    sample_state_from_tables,
)
from .mail_bro import LearnerRunResult, LogPolicy, gradient_estimate, resolve_eta
from .records import Checkpoints, RunRecord
from .rng import split

DISTANCE_REWARD_BOUND = 2.0


def stochastic_distance_reward(
    policy_row, expert_sampler: Callable[[np.random.Generator], int], rng: np.random.Generator
) -> float:
    """Unbiased estimate of ``||expert_row - policy_row||^2`` from two expert draws.

    Returns ``1{a == a'} - 2 policy_row[a] + ||policy_row||^2``, which lies in [-2, 2].
    """
    row = np.asarray(policy_row, dtype=float)
    a1 = expert_sampler(rng)
    a2 = expert_sampler(rng)
    return float(a1 == a2) - 2.0 * float(row[a1]) + float(row @ row)


class _Uniforms:
    """Buffered uniform draws; consumption order is fixed, so results stay reproducible."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self._rng = rng
        self._block = block
        self._buf: list[float] = []
        self._i = 0

    def __call__(self) -> float:
        if self._i >= len(self._buf):
            self._buf = self._rng.random(self._block).tolist()
            self._i = 0
        u = self._buf[self._i]
        self._i += 1
        return u


def _geometric_from_uniform(u: float, log_discount: float) -> int:
    # P(H >= h) = gamma^h with 1 - u uniform on (0, 1]
    if log_discount == -math.inf:
        return 0
    h = int(math.log1p(-u) / log_discount)
    if h > MAX_ROLLOUT_STEPS:
        raise RolloutTooLong(f"geometric horizon {h} exceeds the cap of {MAX_ROLLOUT_STEPS} steps")
    return h


def _pick(cdf_row: list[float], u: float) -> int:
    return min(bisect.bisect_right(cdf_row, u * cdf_row[-1]), len(cdf_row) - 1)


@dataclass
class GenerativeMdp:
    """Single-agent MDP accessed through samplers.

    ``transition`` (shape ``(S, A, S)``) is optional; when present, transitions are
    drawn from it directly, which is much faster than calling ``next_state_sampler``.
    """

    next_state_sampler: Callable[[int, int, np.random.Generator], int] | None
    reward_sampler: Callable[[int, np.random.Generator], float]
    discount: float
    initial_dist: np.ndarray
    n_states: int
    n_actions: int
    reward_bound: float = DISTANCE_REWARD_BOUND
    transition: np.ndarray | None = None

    @classmethod
    def from_table(cls, transition: np.ndarray, reward_sampler, discount, initial_dist, reward_bound=DISTANCE_REWARD_BOUND):
        transition = np.asarray(transition, dtype=float)
        cdf = np.cumsum(transition, axis=-1)

        def next_state(s: int, a: int, rng: np.random.Generator) -> int:
            row = cdf[s, a]
            return min(int(np.searchsorted(row, rng.random() * row[-1], side="right")), row.shape[0] - 1)

        S, A, _ = transition.shape
        return cls(next_state, reward_sampler, float(discount), np.asarray(initial_dist, float), S, A, reward_bound, transition)

    @classmethod
    def from_induced(cls, mdp: InducedMdp, reward_sampler, reward_bound=DISTANCE_REWARD_BOUND):
        return cls.from_table(mdp.transition, reward_sampler, mdp.discount, mdp.initial_dist, reward_bound)


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """Uniform mixture over deterministic policies, stored as a ``(T, S)`` action table."""

    components: np.ndarray

    def __post_init__(self):
        comps = np.asarray(self.components, dtype=np.int64)
        if comps.ndim != 2 or comps.shape[0] == 0:
            raise ValueError("a mixture needs at least one component")
        comps.setflags(write=False)
        object.__setattr__(self, "components", comps)

    def __len__(self) -> int:
        return self.components.shape[0]

    def component(self, i: int, n_actions: int) -> TabularPolicy:
        return TabularPolicy.deterministic(self.components[i], n_actions)

    def sample_component(self, rng: np.random.Generator) -> np.ndarray:
        return self.components[int(rng.integers(len(self)))]

    def distinct(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct components and their mixture weights."""
        uniq, counts = np.unique(self.components, axis=0, return_counts=True)
        return uniq, counts / len(self)

    def value(self, transition: np.ndarray, reward: np.ndarray, discount: float, initial_dist: np.ndarray) -> float:
        """Expected discounted return from ``initial_dist``; the mixture average of component values."""
        rows = np.arange(transition.shape[0])
        total = 0.0
        for comp, w in zip(*self.distinct()):
            P, r = transition[rows, comp], reward[rows, comp]
            total += w * float(initial_dist @ np.linalg.solve(np.eye(len(rows)) - discount * P, r))
        return total


@dataclass
class UcbviState:
    visits: np.ndarray  # N(s, a)
    transitions: np.ndarray  # N(s, a, s')
    reward_sum: np.ndarray
    q: np.ndarray
    v: np.ndarray
    delta: float
    horizon: int
    policies: np.ndarray  # greedy action table per iteration

    def to_dict(self) -> dict:
        return {
            "visits": self.visits.tolist(),
            "transitions": self.transitions.tolist(),
            "reward_sum": self.reward_sum.tolist(),
            "q": self.q.tolist(),
            "v": self.v.tolist(),
            "delta": self.delta,
            "T": self.horizon,
        }


@dataclass
class UcbviRun:
    mixture: MixturePolicy
    state: UcbviState
    samples: list[tuple[int, int]]  # visited (S_t, A_t)
    bonus_event_held: bool | None = None
    value_history: np.ndarray | None = None


def bonus_coefficient(n_states: int, discount: float, T: int, delta: float) -> float:
    return 4 * n_states / (1 - discount) * math.sqrt(math.log(2 * T * (T + 1) * n_states / delta))


def ucbvi(
    mdp: GenerativeMdp,
    T: int,
    delta: float,
    rng: np.random.Generator,
    *,
    bonus_scale: float = 1.0,
    audit: tuple[np.ndarray, np.ndarray] | None = None,
    record_values: bool = False,
    compiled: bool = True,
) -> UcbviRun:
    """Optimistic value iteration with count-based bonuses.

    Q starts at ``reward_bound / (1 - gamma)`` and each update is clipped to
    ``[0, Q_t]``, so Q never increases. Each iteration plays the greedy policy
    (lowest index among ties) from a geometric-time rollout, observes one
    transition and one reward, and refreshes every Q entry.

    ``audit=(P, r)`` with the true tables checks the concentration event
    ``|r_hat + gamma P_hat V_t - r - gamma P V_t| <= b_t`` at every step.
    ``bonus_scale`` multiplies the bonus (1 reproduces the analysed algorithm).

    Tabular MDPs with a :class:`DistanceReward` run in a compiled loop unless
    ``compiled=False``; the two paths draw from different streams but follow the
    same law.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if compiled and audit is None and not record_values and _compilable(mdp):
        return _ucbvi_compiled(mdp, T, delta, rng, bonus_scale)
    S, A, gamma = mdp.n_states, mdp.n_actions, mdp.discount
    q_init = mdp.reward_bound / (1 - gamma)
    Q = np.full((S, A), q_init)
    V = np.full(S, q_init)
    N = np.zeros((S, A))
    Nsas = np.zeros((S, A, S))
    Rsum = np.zeros((S, A))
    coef = bonus_scale * bonus_coefficient(S, gamma, T, delta)
    log_gamma = math.log(gamma) if gamma > 0 else -math.inf
    uniforms = _Uniforms(rng)
    d0_cdf = np.cumsum(mdp.initial_dist).tolist()
    table_cdf = np.cumsum(mdp.transition, axis=-1) if mdp.transition is not None else None
    policies = np.empty((T, S), dtype=np.int64)
    samples: list[tuple[int, int]] = []
    history = np.empty((T + 1, S)) if record_values else None
    event = True if audit is not None else None
    if audit is not None:
        P_true, r_true = (np.asarray(x, dtype=float) for x in audit)
    rows = np.arange(S)
    chain: list[list[float]] | None = None
    last_pi: tuple | None = None
    # r_hat + bonus and P_hat only change in the visited (s, a) row
    optimistic_reward = np.full((S, A), coef)
    P_hat = np.zeros((S, A, S))

    for t in range(T):
        if history is not None:
            history[t] = V
        pi = Q.argmax(axis=1)
        policies[t] = pi
        pi_list = pi.tolist()
        if table_cdf is not None and tuple(pi_list) != last_pi:
            chain = table_cdf[rows, pi].tolist()
            last_pi = tuple(pi_list)

        s = _pick(d0_cdf, uniforms())
        for _ in range(_geometric_from_uniform(uniforms(), log_gamma)):
            if chain is not None:
                s = _pick(chain[s], uniforms())
            else:
                s = mdp.next_state_sampler(s, pi_list[s], rng)
        a = pi_list[s]
        s_next = _pick(chain[s], uniforms()) if chain is not None else mdp.next_state_sampler(s, a, rng)
        reward = mdp.reward_sampler(s, rng)
        samples.append((s, a))

        N[s, a] += 1
        Nsas[s, a, s_next] += 1
        Rsum[s, a] += reward
        denom = N[s, a] + 1.0
        optimistic_reward[s, a] = Rsum[s, a] / denom + coef / math.sqrt(denom)
        P_hat[s, a] = Nsas[s, a] / denom
        if event:
            full = N + 1.0
            err = np.abs((Rsum + gamma * (Nsas @ V)) / full - r_true - gamma * (P_true @ V))
            event = bool(np.all(err <= coef / np.sqrt(full)))
        Q_next = np.minimum(np.maximum(optimistic_reward + gamma * (P_hat @ V), 0.0), Q)
        if (Q_next > Q).any():
            raise AssertionError("Q increased")  # unreachable: clipped above by Q
        Q = Q_next
        V = Q.max(axis=1)

    if history is not None:
        history[T] = V
    state = UcbviState(N, Nsas, Rsum, Q, V, delta, T, policies)
    return UcbviRun(MixturePolicy(policies), state, samples, event, history)


def _compilable(mdp: GenerativeMdp) -> bool:
    return mdp.transition is not None and type(mdp.reward_sampler) is DistanceReward


def _ucbvi_compiled(mdp: GenerativeMdp, T: int, delta: float, rng: np.random.Generator, bonus_scale: float) -> UcbviRun:
    from . import _kernels

    reward: DistanceReward = mdp.reward_sampler
    S, A, gamma = mdp.n_states, mdp.n_actions, mdp.discount
    Q = np.full((S, A), mdp.reward_bound / (1 - gamma))
    N = np.zeros((S, A))
    Nsas = np.zeros((S, A, S))
    Rsum = np.zeros((S, A))
    policies = np.empty((T, S), dtype=np.int64)
    samples = np.empty((T, 2), dtype=np.int64)
    expert_actions = np.empty(T, dtype=np.int64)
    status = _kernels.ucbvi_distance_kernel(
        int(rng.integers(0, 2**32 - 1)),
        np.cumsum(mdp.transition, axis=-1),
        np.cumsum(mdp.initial_dist),
        reward.learner_probs,
        (reward.learner_probs**2).sum(axis=1),
        np.cumsum(reward.oracle.row_table(reward.player), axis=1),
        float(gamma),
        bonus_scale * bonus_coefficient(S, gamma, T, delta),
        float(MAX_ROLLOUT_STEPS),
        Q,
        N,
        Nsas,
        Rsum,
        policies,
        samples,
        expert_actions,
    )
    if status == _kernels.ROLLOUT_TOO_LONG:
        raise RolloutTooLong(f"geometric horizon exceeded the cap of {MAX_ROLLOUT_STEPS} steps")
    reward.oracle.charge(2 * T)
    reward.expert_actions.extend(expert_actions.tolist())
    state = UcbviState(N, Nsas, Rsum, Q, Q.max(axis=1), delta, T, policies)
    return UcbviRun(MixturePolicy(policies), state, [tuple(x) for x in samples.tolist()])


def sample_mixture_occupancy(
    game: ZeroSumGame,
    fixed_policy: TabularPolicy,
    mixture: MixturePolicy,
    side: Player,
    rng: np.random.Generator,
) -> int:
    """State drawn from the occupancy of ``fixed_policy`` against a uniform mixture component.

    ``side`` names the player the mixture plays for.
    """
    side = Player(side)
    comp = mixture.sample_component(rng)
    if side is Player.MIN:
        mu, nu = fixed_policy.probs, np.eye(game.n_actions_min)[comp]
    else:
        mu, nu = np.eye(game.n_actions_max)[comp], fixed_policy.probs
    if mu.shape != (game.n_states, game.n_actions_max) or nu.shape != (game.n_states, game.n_actions_min):
        raise ValueError("policy dimensions do not match the game")
    return sample_state_from_tables(game, mu, nu, rng)


class DistanceReward:
    """Reward sampler for the uncertainty MDP of one learner policy.

    Each call draws two expert actions at the state (two queries) and returns the
    unbiased squared-distance estimate. The first draw of each call is kept in
    ``expert_actions`` so an outer update can reuse it.
    """

    def __init__(self, learner_probs: np.ndarray, oracle: ExpertOracle, player: Player):
        self.learner_probs = np.asarray(learner_probs, dtype=float)
        self.oracle = oracle
        self.player = Player(player)
        self.rows = self.learner_probs.tolist()
        self.sq = (self.learner_probs**2).sum(axis=1).tolist()
        self.draw = oracle.fast_sampler(player)
        self.uniforms: _Uniforms | None = None
        self.expert_actions: list[int] = []

    def __call__(self, s: int, rng: np.random.Generator) -> float:
        if self.uniforms is None:
            self.uniforms = _Uniforms(rng, block=1024)
        a1 = self.draw(s, self.uniforms())
        a2 = self.draw(s, self.uniforms())
        self.expert_actions.append(a1)
        return float(a1 == a2) - 2.0 * self.rows[s][a1] + self.sq[s]


def uncertainty_mdp(game: ZeroSumGame, learner: TabularPolicy, expert: TabularPolicy, learner_side: Player) -> InducedMdp:
    """Exact MDP whose reward is the squared distance between learner and expert rows.

    The opponent of ``learner_side`` is the free player. Used to compute the exact
    maximum-uncertainty response in tests and diagnostics.
    """
    learner_side = Player(learner_side)
    base = induce_mdp_for_min(game, learner) if learner_side is Player.MAX else induce_mdp_for_max(game, learner)
    u = ((learner.probs - expert.probs) ** 2).sum(axis=1)
    reward = np.broadcast_to(u[:, None], base.reward.shape).copy()
    return InducedMdp(base.transition, reward, game.discount, game.initial_dist, Sense.MAXIMIZE)


def smoothed_warm_start(dataset: Dataset, game: ZeroSumGame, mix: float) -> PolicyPair:
    """Behavior cloning blended with uniform so every row is strictly positive."""
    bc = behavior_cloning(dataset, game.n_actions_max, game.n_actions_min)
    mu = (1 - mix) * bc.max_policy.probs + mix / game.n_actions_max
    nu = (1 - mix) * bc.min_policy.probs + mix / game.n_actions_min
    return PolicyPair(TabularPolicy(mu), TabularPolicy(nu))


def run_murmail(
    game: ZeroSumGame,
    oracle: ExpertOracle,
    K: int,
    T: int,
    eta,
    delta: float,
    rng: np.random.Generator,
    eval_schedule=(),
    warm_start: Dataset | None = None,
    *,
    warm_start_mix: float = 0.01,
    recycle: bool = False,
    bonus_scale: float = 1.0,
    track_gaps: bool = True,
    algo_tag: str = "murmail",
) -> LearnerRunResult:
    """Outer mirror descent driven by maximum-uncertainty responses learned with UCBVI.

    Expert queries: two per inner step per side, plus one per side for the outer
    update. With ``recycle=True`` the outer state and expert action are reused from
    a uniformly chosen inner sample instead of being drawn afresh (no extra queries).
    """
    if K < 1 or T < 1:
        raise ValueError("K and T must be at least 1")
    oracle.expert.check_against(game)
    eta = resolve_eta(game, K, eta)
    loop_rng, pick_rng = split(rng, 2)
    k_hat = int(pick_rng.integers(1, K + 1))
    start_queries = oracle.queries
    checkpoints = Checkpoints(eval_schedule)
    records: list[RunRecord] = []
    gaps = np.empty(K) if track_gaps else None
    init = smoothed_warm_start(warm_start, game, warm_start_mix) if warm_start is not None else None
    if init is None:
        mu = LogPolicy(np.full((game.n_states, game.n_actions_max), 1.0 / game.n_actions_max))
        nu = LogPolicy(np.full((game.n_states, game.n_actions_min), 1.0 / game.n_actions_min))
    else:
        mu, nu = LogPolicy(init.max_policy.probs), LogPolicy(init.min_policy.probs)
    output = None
    t0 = time.perf_counter()

    for k in range(1, K + 1):
        mu_k, nu_k = mu.freeze(), nu.freeze()
        if k == k_hat:
            output = PolicyPair(mu_k, nu_k)
        if gaps is not None:
            gaps[k - 1] = nash_gap(game, PolicyPair(mu_k, nu_k)).gap
        try:
            reward_mu = DistanceReward(mu_k.probs, oracle, Player.MAX)
            mdp_mu = GenerativeMdp.from_induced(induce_mdp_for_min(game, mu_k), reward_mu)
            y = ucbvi(mdp_mu, T, delta, loop_rng, bonus_scale=bonus_scale)
            reward_nu = DistanceReward(nu_k.probs, oracle, Player.MIN)
            mdp_nu = GenerativeMdp.from_induced(induce_mdp_for_max(game, nu_k), reward_nu)
            z = ucbvi(mdp_nu, T, delta, loop_rng, bonus_scale=bonus_scale)
        except Exception as exc:
            raise RuntimeError(f"inner UCBVI failed at outer iteration {k}") from exc

        if recycle:
            i = int(loop_rng.integers(T))
            s_mu, a_mu = y.samples[i][0], reward_mu.expert_actions[i]
            j = int(loop_rng.integers(T))
            s_nu, b_nu = z.samples[j][0], reward_nu.expert_actions[j]
        else:
            s_mu = sample_mixture_occupancy(game, mu_k, y.mixture, Player.MIN, loop_rng)
            a_mu = oracle.sample(Player.MAX, s_mu, loop_rng)
            s_nu = sample_mixture_occupancy(game, nu_k, z.mixture, Player.MAX, loop_rng)
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
        iterate_gaps=gaps,
    )
