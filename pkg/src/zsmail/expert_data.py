"""Expert oracles with query accounting, trajectory datasets and behavior cloning."""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .game import PolicyPair, TabularPolicy, Trajectory, ZeroSumGame, sample_trajectory


class Player(str, enum.Enum):
    MAX = "max"
    MIN = "min"


class ExpertOracle:
    """Samples expert actions and counts every draw as one query.

    The counter is plain mutable state; give each worker its own oracle.
    """

    def __init__(self, expert: PolicyPair):
        self.expert = expert
        self._queries = 0
        self._cdf = {
            Player.MAX: np.cumsum(expert.max_policy.probs, axis=1),
            Player.MIN: np.cumsum(expert.min_policy.probs, axis=1),
        }

    @property
    def queries(self) -> int:
        return self._queries

    def row_table(self, player: Player) -> np.ndarray:
        policy = self.expert.max_policy if Player(player) is Player.MAX else self.expert.min_policy
        return policy.probs

    def row(self, player: Player, state: int) -> np.ndarray:
        return self.row_table(player)[state]

    def sample(self, player: Player, state: int, rng: np.random.Generator) -> int:
        cdf = self._cdf[Player(player)]
        if not 0 <= state < cdf.shape[0]:
            raise IndexError(f"state {state} out of range")
        row = cdf[state]
        a = int(np.searchsorted(row, rng.random() * row[-1], side="right"))
        self._queries += 1
        return min(a, row.shape[0] - 1)

    def fast_sampler(self, player: Player):
        """Return ``draw(state, u) -> action`` that inverts the expert CDF at uniform ``u``.

        Each call counts as one query. Meant for tight inner loops that buffer
        their own uniforms.
        """
        cdf_rows = self._cdf[Player(player)].tolist()

        def draw(state: int, u: float) -> int:
            row = cdf_rows[state]
            self._queries += 1
            return min(bisect.bisect_right(row, u * row[-1]), len(row) - 1)

        return draw

    def charge(self, n: int) -> None:
        """Record ``n`` draws made outside :meth:`sample` (dataset collection)."""
        if n < 0:
            raise ValueError("query counts never decrease")
        self._queries += n


def query_expert_action(oracle: ExpertOracle, player: Player, state: int, rng: np.random.Generator) -> int:
    return oracle.sample(player, state, rng)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Expert trajectories with visit counts derived from them."""

    trajectories: tuple[Trajectory, ...]
    state_counts: np.ndarray  # N(s)
    max_action_counts: np.ndarray  # N(s, a)
    min_action_counts: np.ndarray  # N(s, b)

    @classmethod
    def from_trajectories(cls, trajectories, n_states: int, n_actions_max: int, n_actions_min: int) -> "Dataset":
        trajectories = tuple(trajectories)
        Na = np.zeros((n_states, n_actions_max), dtype=np.int64)
        Nb = np.zeros((n_states, n_actions_min), dtype=np.int64)
        if trajectories:
            steps = np.concatenate([t.steps for t in trajectories])
            np.add.at(Na, (steps[:, 0], steps[:, 1]), 1)
            np.add.at(Nb, (steps[:, 0], steps[:, 2]), 1)
        return cls(trajectories, Na.sum(axis=1), Na, Nb)

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def total_steps(self) -> int:
        return int(self.state_counts.sum())

    def prefix(self, n: int) -> "Dataset":
        S, A = self.max_action_counts.shape
        return Dataset.from_trajectories(self.trajectories[:n], S, A, self.min_action_counts.shape[1])

    def counts_consistent(self) -> bool:
        return bool(
            np.array_equal(self.max_action_counts.sum(axis=1), self.state_counts)
            and np.array_equal(self.min_action_counts.sum(axis=1), self.state_counts)
        )


def collect_dataset(
    game: ZeroSumGame, oracle: ExpertOracle, n_trajectories: int, rng: np.random.Generator
) -> Dataset:
    """Roll the expert pair ``n_trajectories`` times; each recorded joint step costs 2 queries."""
    trajectories = [sample_trajectory(game, oracle.expert, rng) for _ in range(n_trajectories)]
    oracle.charge(2 * sum(len(t) for t in trajectories))
    return Dataset.from_trajectories(trajectories, game.n_states, game.n_actions_max, game.n_actions_min)


def _empirical_rows(counts: np.ndarray, visits: np.ndarray) -> np.ndarray:
    n_actions = counts.shape[1]
    rows = np.full(counts.shape, 1.0 / n_actions)
    seen = visits > 0
    rows[seen] = counts[seen] / visits[seen, None]
    return rows


def behavior_cloning(dataset: Dataset, n_actions_max: int, n_actions_min: int) -> PolicyPair:
    """Empirical action frequencies per state, uniform where the state was never visited."""
    if dataset.max_action_counts.shape[1] != n_actions_max or dataset.min_action_counts.shape[1] != n_actions_min:
        raise ValueError("dataset action dimensions disagree with the requested policy shapes")
    if not dataset.counts_consistent():
        raise ValueError("inconsistent counts: per-action totals differ from state visits")
    N = dataset.state_counts
    return PolicyPair(
        TabularPolicy(_empirical_rows(dataset.max_action_counts, N)),
        TabularPolicy(_empirical_rows(dataset.min_action_counts, N)),
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    lines = []
    for k, traj in enumerate(dataset.trajectories):
        for t, (s, a, b) in enumerate(traj.steps.tolist()):
            lines.append(f"{k},{t},{s},{a},{b}\n")
    Path(path).write_text("".join(lines))


def load_dataset(
    path: str | Path,
    n_states: int,
    n_actions_max: int,
    n_actions_min: int,
    n_trajectories: int | None = None,
) -> Dataset:
    """Read ``traj_id,t,s,a,b`` records. Counts are always recomputed.

    Empty trajectories leave no records; pass ``n_trajectories`` to keep them.
    """
    rows: dict[int, list[tuple[int, int, int]]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != 5 or not all(f.strip().isdigit() for f in fields):
            raise ValueError(f"line {lineno}: expected five unsigned integers, got {line!r}")
        k, t, s, a, b = map(int, fields)
        if s >= n_states or a >= n_actions_max or b >= n_actions_min:
            raise ValueError(f"line {lineno}: index out of range")
        steps = rows.setdefault(k, [])
        if t != len(steps):
            raise ValueError(f"line {lineno}: trajectory {k} step {t} out of order")
        steps.append((s, a, b))
    count = max(rows, default=-1) + 1
    if n_trajectories is not None:
        if n_trajectories < count:
            raise ValueError(f"file holds trajectory ids up to {count - 1}")
        count = n_trajectories
    trajectories = [Trajectory(np.array(rows.get(k, []), dtype=np.int64)) for k in range(count)]
    return Dataset.from_trajectories(trajectories, n_states, n_actions_max, n_actions_min)
