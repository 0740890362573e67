"""Tabular two-player zero-sum Markov games.

The max player picks ``a`` in ``range(n_actions_max)``, the min player picks ``b`` in
``range(n_actions_min)``. Rewards are paid to the max player. Exact quantities
(values, Q tables, discounted occupancies) come from dense linear solves; the
samplers draw geometric horizons so that sampled states follow the normalized
discounted occupancy exactly in law.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STOCHASTIC_TOL = 1e-12
MAX_STATES = 2000
MAX_ROLLOUT_STEPS = 10_000_000


class Sense(str, enum.Enum):
    MAXIMIZE = "maximize"
    MINIMIZE = "minimize"


class RolloutTooLong(RuntimeError):
    """A geometric horizon exceeded the hard rollout cap."""


def _readonly(values, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must have {ndim} dimensions, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ZeroSumGame:
    """Full tabular game.

    ``transition[s, a, b]`` is a distribution over next states and ``reward[s, a, b]``
    is the max player's payoff. Only shapes are checked at construction; use
    :func:`validate_game` for the value-level invariants.
    """

    transition: np.ndarray
    reward: np.ndarray
    discount: float
    initial_dist: np.ndarray

    def __post_init__(self):
        P = _readonly(self.transition, 4, "transition")
        r = _readonly(self.reward, 3, "reward")
        d0 = _readonly(self.initial_dist, 1, "initial_dist")
        S, A, B, S2 = P.shape
        if S != S2 or r.shape != (S, A, B) or d0.shape != (S,):
            raise ValueError(
                f"inconsistent shapes: transition {P.shape}, reward {r.shape}, initial_dist {d0.shape}"
            )
        if min(S, A, B) < 1:
            raise ValueError("a game needs at least one state and one action per player")
        if S > MAX_STATES:
            raise ValueError(f"{S} states exceeds the cap of {MAX_STATES}")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_dist", d0)
        object.__setattr__(self, "discount", float(self.discount))

    @classmethod
    def from_state_reward(cls, transition, state_reward, discount, initial_dist) -> "ZeroSumGame":
        """Build a game whose reward depends on the state only."""
        P = np.asarray(transition, dtype=float)
        r = np.broadcast_to(np.asarray(state_reward, dtype=float)[:, None, None], P.shape[:3])
        return cls(P, r, discount, initial_dist)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions_max(self) -> int:
        return self.transition.shape[1]

    @property
    def n_actions_min(self) -> int:
        return self.transition.shape[2]

    def transition_cdf(self) -> np.ndarray:
        """Cumulative next-state distribution, cached per game."""
        cdf = self.__dict__.get("_cdf")
        if cdf is None:
            cdf = np.cumsum(self.transition, axis=-1)
            self.__dict__["_cdf"] = cdf
        return cdf


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    """Row-stochastic table ``probs[s, a]``."""

    probs: np.ndarray

    def __post_init__(self):
        p = _readonly(self.probs, 2, "probs")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("policy table must be nonempty")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ValueError("policy entries must be finite and nonnegative")
        bad = np.flatnonzero(np.abs(p.sum(axis=1) - 1.0) > STOCHASTIC_TOL)
        if bad.size:
            raise ValueError(f"policy rows {bad.tolist()} do not sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions: int) -> "TabularPolicy":
        actions = np.asarray(actions, dtype=int)
        return cls(np.eye(n_actions)[actions])

    @property
    def n_states(self) -> int:
        return self.probs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all((self.probs == 0.0) | (self.probs == 1.0)))

    def greedy_actions(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)


@dataclass(frozen=True, eq=False)
class PolicyPair:
    max_policy: TabularPolicy
    min_policy: TabularPolicy

    def check_against(self, game: ZeroSumGame) -> None:
        _check_policy(game, self.max_policy, game.n_actions_max, "max")
        _check_policy(game, self.min_policy, game.n_actions_min, "min")

    def to_dict(self) -> dict:
        return {
            "max_policy": self.max_policy.probs.tolist(),
            "min_policy": self.min_policy.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyPair":
        return cls(TabularPolicy(data["max_policy"]), TabularPolicy(data["min_policy"]))


@dataclass(frozen=True, eq=False)
class InducedMdp:
    """Single-agent MDP left after freezing one player's policy."""

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    discount: float
    initial_dist: np.ndarray
    sense: Sense

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Steps ``(s_t, a_t, b_t)`` for ``t = 0..H-1``, stored as an ``(H, 3)`` int array."""

    steps: np.ndarray

    def __post_init__(self):
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1, 3)
        steps.setflags(write=False)
        object.__setattr__(self, "steps", steps)

    def __len__(self) -> int:
        return self.steps.shape[0]


def _check_policy(game: ZeroSumGame, policy: TabularPolicy, n_actions: int, who: str) -> None:
    if policy.probs.shape != (game.n_states, n_actions):
        raise ValueError(
            f"{who} policy has shape {policy.probs.shape}, game expects {(game.n_states, n_actions)}"
        )


def validate_game(game: ZeroSumGame) -> list[str]:
    """Return every invariant violation, each with the offending index path."""
    problems: list[str] = []
    P, r, d0 = game.transition, game.reward, game.initial_dist
    for idx in zip(*np.nonzero(~np.isfinite(P) | (P < 0))):
        problems.append(f"transition{list(map(int, idx))} = {P[idx]!r} is not a probability")
    sums = P.sum(axis=-1)
    for idx in zip(*np.nonzero(np.abs(sums - 1.0) > STOCHASTIC_TOL)):
        problems.append(f"transition row (s,a,b)={tuple(map(int, idx))} sums to {sums[idx]!r}")
    for idx in zip(*np.nonzero(~np.isfinite(r) | (np.abs(r) > 1.0))):
        problems.append(f"reward{list(map(int, idx))} = {r[idx]!r} outside [-1, 1]")
    for s in np.nonzero(~np.isfinite(d0) | (d0 < 0))[0]:
        problems.append(f"initial_dist[{int(s)}] = {d0[s]!r} is not a probability")
    if abs(d0.sum() - 1.0) > STOCHASTIC_TOL:
        problems.append(f"initial_dist sums to {d0.sum()!r}")
    if not (0.0 <= game.discount < 1.0):
        problems.append(f"discount {game.discount!r} outside [0, 1)")
    return problems


def induce_mdp_for_max(game: ZeroSumGame, min_policy: TabularPolicy) -> InducedMdp:
    """Freeze the min player: P(s'|s,a) = sum_b nu(b|s) P(s'|s,a,b)."""
    _check_policy(game, min_policy, game.n_actions_min, "min")
    nu = min_policy.probs
    P = np.einsum("sabt,sb->sat", game.transition, nu)
    r = np.einsum("sab,sb->sa", game.reward, nu)
    return InducedMdp(P, r, game.discount, game.initial_dist, Sense.MAXIMIZE)


def induce_mdp_for_min(game: ZeroSumGame, max_policy: TabularPolicy) -> InducedMdp:
    """Freeze the max player; the remaining action index is the min player's."""
    _check_policy(game, max_policy, game.n_actions_max, "max")
    mu = max_policy.probs
    P = np.einsum("sabt,sa->sbt", game.transition, mu)
    r = np.einsum("sab,sa->sb", game.reward, mu)
    return InducedMdp(P, r, game.discount, game.initial_dist, Sense.MINIMIZE)


def joint_chain(game: ZeroSumGame, pair: PolicyPair) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state transition matrix and per-state reward under a policy pair."""
    pair.check_against(game)
    return chain_from_tables(game, pair.max_policy.probs, pair.min_policy.probs)


def chain_from_tables(game: ZeroSumGame, mu: np.ndarray, nu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`joint_chain` for raw probability tables (no validation)."""
    joint = mu[:, :, None] * nu[:, None, :]
    P = np.einsum("sab,sabt->st", joint, game.transition)
    r = np.einsum("sab,sab->s", joint, game.reward)
    return P, r


def sample_state_from_tables(game: ZeroSumGame, mu: np.ndarray, nu: np.ndarray, rng: np.random.Generator) -> int:
    """Occupancy sampler for raw probability tables (used in learner inner loops)."""
    P, _ = chain_from_tables(game, mu, nu)
    steps = geometric_horizon(game.discount, rng)
    return rollout_chain(np.cumsum(P, axis=1), np.cumsum(game.initial_dist), steps, rng)


def evaluate_chain(P: np.ndarray, r: np.ndarray, discount: float) -> np.ndarray:
    """Solve (I - gamma P) V = r."""
    return np.linalg.solve(np.eye(P.shape[0]) - discount * P, r)


def chain_occupancy(P: np.ndarray, initial_dist: np.ndarray, discount: float) -> np.ndarray:
    """(1 - gamma) d0^T (I - gamma P)^{-1}."""
    d = np.linalg.solve((np.eye(P.shape[0]) - discount * P).T, initial_dist)
    return (1.0 - discount) * d


def value_of_pair(game: ZeroSumGame, pair: PolicyPair) -> np.ndarray:
    P, r = joint_chain(game, pair)
    return evaluate_chain(P, r, game.discount)


def q_of_pair(game: ZeroSumGame, pair: PolicyPair) -> np.ndarray:
    V = value_of_pair(game, pair)
    return game.reward + game.discount * game.transition @ V


def occupancy_of_pair(game: ZeroSumGame, pair: PolicyPair) -> np.ndarray:
    P, _ = joint_chain(game, pair)
    return chain_occupancy(P, game.initial_dist, game.discount)


def geometric_horizon(discount: float, rng: np.random.Generator) -> int:
    """Draw H with P(H = h) = (1 - gamma) gamma^h on h = 0, 1, 2, ..."""
    h = int(rng.geometric(1.0 - discount)) - 1
    if h > MAX_ROLLOUT_STEPS:
        raise RolloutTooLong(f"geometric horizon {h} exceeds the cap of {MAX_ROLLOUT_STEPS} steps")
    return h


def _draw(cdf_row: np.ndarray, u: float) -> int:
    i = int(np.searchsorted(cdf_row, u * cdf_row[-1], side="right"))
    return min(i, cdf_row.shape[0] - 1)


def rollout_chain(cdf: np.ndarray, d0_cdf: np.ndarray, steps: int, rng: np.random.Generator) -> int:
    """Start from d0 and take ``steps`` transitions of a chain given by row CDFs."""
    us = rng.random(steps + 1)
    s = _draw(d0_cdf, us[0])
    for k in range(1, steps + 1):
        s = _draw(cdf[s], us[k])
    return s


def sample_occupancy_state(game: ZeroSumGame, pair: PolicyPair, rng: np.random.Generator) -> int:
    """Exact sampler for the normalized discounted occupancy of ``pair``.

    Actions are marginalized into the state chain; the law of the returned state is
    the same as when actions are drawn explicitly.
    """
    pair.check_against(game)
    return sample_state_from_tables(game, pair.max_policy.probs, pair.min_policy.probs, rng)


def sample_occupancy_states(game: ZeroSumGame, pair: PolicyPair, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent draws from the occupancy of ``pair``, advanced as one batch.

    Same law as :func:`sample_occupancy_state`; the random stream differs.
    """
    pair.check_against(game)
    P, _ = joint_chain(game, pair)
    cdf = np.cumsum(P, axis=1)
    cdf[:, -1] = np.inf
    d0_cdf = np.cumsum(game.initial_dist)
    d0_cdf[-1] = np.inf
    remaining = rng.geometric(1.0 - game.discount, size=n) - 1
    if n and remaining.max() > MAX_ROLLOUT_STEPS:
        raise RolloutTooLong(f"geometric horizon {remaining.max()} exceeds the cap of {MAX_ROLLOUT_STEPS} steps")
    states = np.searchsorted(d0_cdf, rng.random(n), side="right")
    active = np.nonzero(remaining > 0)[0]
    while active.size:
        u = rng.random(active.size)
        states[active] = (u[:, None] >= cdf[states[active]]).sum(axis=1)
        remaining[active] -= 1
        active = active[remaining[active] > 0]
    return states


def sample_trajectory(game: ZeroSumGame, pair: PolicyPair, rng: np.random.Generator) -> Trajectory:
    """Geometric-length trajectory recording ``(s_t, a_t, b_t)`` for ``t < H``."""
    pair.check_against(game)
    H = geometric_horizon(game.discount, rng)
    mu_cdf = np.cumsum(pair.max_policy.probs, axis=1)
    nu_cdf = np.cumsum(pair.min_policy.probs, axis=1)
    P_cdf = game.transition_cdf()
    us = rng.random((H, 3))
    steps = np.empty((H, 3), dtype=np.int64)
    s = _draw(np.cumsum(game.initial_dist), rng.random())
    for t in range(H):
        a = _draw(mu_cdf[s], us[t, 0])
        b = _draw(nu_cdf[s], us[t, 1])
        steps[t] = (s, a, b)
        s = _draw(P_cdf[s, a, b], us[t, 2])
    return Trajectory(steps)


def game_to_dict(game: ZeroSumGame) -> dict:
    return {
        "n_states": game.n_states,
        "n_actions_max": game.n_actions_max,
        "n_actions_min": game.n_actions_min,
        "gamma": game.discount,
        "d0": game.initial_dist.tolist(),
        "reward": game.reward.tolist(),
        "transition": game.transition.tolist(),
    }


def game_from_dict(data: dict) -> ZeroSumGame:
    game = ZeroSumGame(data["transition"], data["reward"], data["gamma"], data["d0"])
    declared = (data["n_states"], data["n_actions_max"], data["n_actions_min"])
    actual = (game.n_states, game.n_actions_max, game.n_actions_min)
    if tuple(declared) != actual:
        raise ValueError(f"declared dimensions {declared} disagree with tensors {actual}")
    return game


def save_game(game: ZeroSumGame, path: str | Path) -> None:
    # json writes floats with repr, which round-trips doubles exactly
    Path(path).write_text(json.dumps(game_to_dict(game)))


def load_game(path: str | Path) -> ZeroSumGame:
    return game_from_dict(json.loads(Path(path).read_text()))
