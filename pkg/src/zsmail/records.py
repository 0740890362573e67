"""Checkpoint records shared by the learners and the experiment harness."""

from __future__ import annotations

from dataclasses import dataclass

CSV_HEADER = ("algo", "seed", "queries", "nash_gap", "wall_ms", "config_hash")


@dataclass(frozen=True)
class RunRecord:
    algo: str
    seed: int
    queries: int
    nash_gap: float
    wall_ms: int = 0
    config_hash: str = ""

    def __post_init__(self):
        if self.nash_gap < -1e-9:
            raise ValueError(f"negative Nash gap {self.nash_gap}")

    def csv_row(self) -> str:
        # repr keeps all 17 significant digits of the gap
        return f"{self.algo},{self.seed},{self.queries},{self.nash_gap!r},{self.wall_ms},{self.config_hash}"

    @classmethod
    def from_csv_row(cls, line: str) -> "RunRecord":
        algo, seed, queries, gap, wall, h = line.strip().split(",")
        return cls(algo, int(seed), int(queries), float(gap), int(wall), h)


class Checkpoints:
    """Walks a strictly increasing list of query budgets."""

    def __init__(self, schedule):
        schedule = [int(c) for c in schedule]
        if any(b <= a for a, b in zip(schedule, schedule[1:])):
            raise ValueError("eval schedule must be strictly increasing")
        self._pending = schedule
        self._next = 0

    def due(self, queries: int) -> bool:
        """True once per crossing: consumes every checkpoint at or below ``queries``."""
        hit = False
        while self._next < len(self._pending) and self._pending[self._next] <= queries:
            self._next += 1
            hit = True
        return hit
