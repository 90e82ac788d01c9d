"""Uniform time grids and the leader/follower coordinate partition."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

LEADER = "leader"
FOLLOWER = "follower"
AGENTS = (LEADER, FOLLOWER)


def check_agent(agent: str) -> str:
    if agent not in AGENTS:
        raise ValueError(f"agent must be 'leader' or 'follower', got {agent!r}")
    return agent


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k*T/N`` on ``[0, T]``."""

    T: float
    N: int

    def __post_init__(self):
        if not (math.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def delta(self) -> float:
        return self.T / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        # k*T/N rather than a running sum; last node pinned to T
        t = np.arange(self.N + 1) * self.T / self.N
        t[-1] = self.T
        t.setflags(write=False)
        return t

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.N * int(factor))


@dataclass(frozen=True)
class ControlPartition:
    """Disjoint coordinate sets owned by the leader and the follower.

    The characteristic functions of the two control subspaces are realized as
    coordinate masks: the leader acts on ``leader_idx``, the follower on
    ``follower_idx``, and together they cover ``0..p-1`` exactly once.
    """

    leader_idx: tuple[int, ...]
    follower_idx: tuple[int, ...]

    def __post_init__(self):
        lead = tuple(sorted(int(i) for i in self.leader_idx))
        foll = tuple(sorted(int(i) for i in self.follower_idx))
        # a scalar parameter can only belong to one agent
        if (not lead or not foll) and len(lead) + len(foll) > 1:
            raise ValueError("both agents need at least one coordinate")
        if set(lead) & set(foll):
            raise ValueError("leader and follower index sets overlap")
        if len(set(lead)) != len(lead) or len(set(foll)) != len(foll):
            raise ValueError("duplicate coordinate in partition")
        object.__setattr__(self, "leader_idx", lead)
        object.__setattr__(self, "follower_idx", foll)

    @classmethod
    def default(cls, p: int) -> "ControlPartition":
        """First ``ceil(p/2)`` coordinates to the leader, the rest to the follower."""
        if p < 1:
            raise ValueError("p must be positive")
        n_lead = (p + 1) // 2
        return cls(tuple(range(n_lead)), tuple(range(n_lead, p)))

    @property
    def p(self) -> int:
        return len(self.leader_idx) + len(self.follower_idx)

    def covers(self, p: int) -> bool:
        return sorted(self.leader_idx + self.follower_idx) == list(range(p))

    def indices(self, agent: str) -> tuple[int, ...]:
        return self.leader_idx if check_agent(agent) == LEADER else self.follower_idx

    def mask(self, agent: str, p: int | None = None) -> np.ndarray:
        p = self.p if p is None else p
        m = np.zeros(p, dtype=bool)
        m[list(self.indices(agent))] = True
        return m
