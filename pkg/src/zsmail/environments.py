"""Game constructors: the hard instance where cloning cannot recover, and random games."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np

from .game import PolicyPair, TabularPolicy, ZeroSumGame
from .rng import as_rng

S0, S1, S2, S3 = 0, 1, 2, 3


class TransitionMap(str, enum.Enum):
    # diagonal and upper-triangular non-special pairs exploit the min player's side
    TRIANGULAR = "triangular"
    # diagonal pairs to one exploit state, off-diagonal pairs to the other
    DIAGONAL = "diagonal"


class Route(str, enum.Enum):
    COPY = "copy"
    XPLT1 = "xplt1"
    XPLT2 = "xplt2"


@dataclass(frozen=True)
class LowerBoundSpec:
    """Parameters of the hard instance. ``special_index`` is 1-based."""

    n_actions: int = 3
    special_index: int = 3
    reward_magnitude: float = 0.1
    discount: float = 0.9
    collapsed: bool = True
    transition_map: TransitionMap = TransitionMap.TRIANGULAR

    def __post_init__(self):
        object.__setattr__(self, "transition_map", TransitionMap(self.transition_map))
        if self.n_actions < 3:
            raise ValueError("the construction needs at least 3 actions per player")
        if not 1 <= self.special_index <= self.n_actions:
            raise ValueError("special_index must lie in [1, n_actions]")
        if not 0 < self.reward_magnitude <= 1:
            raise ValueError("reward_magnitude must lie in (0, 1]")
        if not 0 <= self.discount < 1:
            raise ValueError("discount must lie in [0, 1)")

    @property
    def special(self) -> int:
        """0-based index of the special action."""
        return self.special_index - 1

    @property
    def alternative(self) -> int:
        """0-based index of the second pure equilibrium action at s0 (a_2, else a_1)."""
        return 1 if self.special != 1 else 0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transition_map"] = self.transition_map.value
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "LowerBoundSpec":
        return cls(**data)


@dataclass(frozen=True)
class ExpertMixSpec:
    p_safe: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.p_safe <= 1.0:
            raise ValueError("p_safe must lie in [0, 1]")


def route_from_s1(spec: LowerBoundSpec, a: int, b: int) -> Route:
    """Where joint action ``(a, b)`` (0-based) leads from s1."""
    i = spec.special
    if a == i or b == i:
        return Route.COPY
    if a == b:
        return Route.XPLT1
    if spec.transition_map is TransitionMap.TRIANGULAR:
        return Route.XPLT1 if a < b else Route.XPLT2
    return Route.XPLT2


def lower_bound_state_names(spec: LowerBoundSpec) -> list[str]:
    names = ["s0", "s1", "s2", "s3"]
    if spec.collapsed:
        return names + ["copy", "xplt1", "xplt2"]
    n = spec.n_actions
    for route in Route:
        names += [
            f"{route.value}(a{a + 1},b{b + 1})"
            for a in range(n)
            for b in range(n)
            if route_from_s1(spec, a, b) is route
        ]
    return names


def build_lower_bound_game(spec: LowerBoundSpec) -> ZeroSumGame:
    """The hard instance.

    From s0 the joint special action leads to s2 (then to absorbing s3); anything
    else leads to s1. From s1 the joint action selects an absorbing tail state.
    The max player earns ``-m`` on xplt1 tails and ``+m`` on xplt2 tails.
    """
    n, m = spec.n_actions, spec.reward_magnitude
    names = lower_bound_state_names(spec)
    index = {name: k for k, name in enumerate(names)}
    S = len(names)
    P = np.zeros((S, n, n, S))
    reward = np.zeros(S)

    P[S0, :, :, S1] = 1.0
    P[S0, spec.special, spec.special, S1] = 0.0
    P[S0, spec.special, spec.special, S2] = 1.0
    P[S2, :, :, S3] = 1.0
    for s in range(S3, S):
        P[s, :, :, s] = 1.0
    for a in range(n):
        for b in range(n):
            route = route_from_s1(spec, a, b)
            tail = route.value if spec.collapsed else f"{route.value}(a{a + 1},b{b + 1})"
            P[S1, a, b, index[tail]] = 1.0
    for name, k in index.items():
        if name.startswith("xplt1"):
            reward[k] = -m
        elif name.startswith("xplt2"):
            reward[k] = m

    d0 = np.zeros(S)
    d0[S0] = 1.0
    return ZeroSumGame.from_state_reward(P, reward, spec.discount, d0)


def build_lower_bound_expert(spec: LowerBoundSpec, mix: ExpertMixSpec) -> PolicyPair:
    """Equilibrium expert: mixes special and alternative actions at s0, special at s1,
    uniform elsewhere. Both players use the same table."""
    n = spec.n_actions
    S = len(lower_bound_state_names(spec))
    probs = np.full((S, n), 1.0 / n)
    probs[S0] = 0.0
    probs[S0, spec.special] += mix.p_safe
    probs[S0, spec.alternative] += 1.0 - mix.p_safe
    probs[S1] = np.eye(n)[spec.special]
    return PolicyPair(TabularPolicy(probs), TabularPolicy(probs.copy()))


def build_random_zero_sum(
    n_states: int,
    n_actions_max: int,
    n_actions_min: int,
    discount: float,
    rng: np.random.Generator | int,
) -> ZeroSumGame:
    """Random game: flat-Dirichlet transition rows, uniform rewards on [-1, 1], uniform d0."""
    if min(n_states, n_actions_max, n_actions_min) < 1:
        raise ValueError("dimensions must be positive")
    if not 0 <= discount < 1:
        raise ValueError("discount must lie in [0, 1)")
    rng = as_rng(rng)
    shape = (n_states, n_actions_max, n_actions_min)
    P = rng.dirichlet(np.ones(n_states), size=shape)
    P /= P.sum(axis=-1, keepdims=True)
    r = rng.uniform(-1.0, 1.0, size=shape)
    d0 = np.full(n_states, 1.0 / n_states)
    return ZeroSumGame(P, r, discount, d0)
