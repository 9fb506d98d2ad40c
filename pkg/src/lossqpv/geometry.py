"""Positions on a line and light-cone feasibility of a response schedule.

Light speed is 1, so travel time equals distance. Round ``i`` starts at
``t_i``; each verifier emits so that its pulse would reach the claimed
position at ``t_i + tau``, and expects the answer back by the time a
signal from the claimed position could reach it.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

_EPS = 1e-12


@dataclass(frozen=True)
class Geometry:
    pos_v1: float = -1.0
    pos_v2: float = 1.0
    pos_claimed: float = 0.0

    def __post_init__(self):
        lo, hi = sorted((self.pos_v1, self.pos_v2))
        if not lo < self.pos_claimed < hi:
            raise ValueError("claimed position must lie strictly between the verifiers")

    @property
    def tau(self) -> float:
        return abs(self.pos_claimed - self.pos_v1)

    @property
    def round_spacing(self) -> float:
        return 2.0 * self.tau

    def verifier(self, j: int) -> float:
        return self.pos_v1 if j == 1 else self.pos_v2

    def emit_time(self, j: int) -> float:
        return self.tau - abs(self.pos_claimed - self.verifier(j))

    def deadline(self, j: int) -> float:
        return self.tau + abs(self.pos_claimed - self.verifier(j))

    def round_start(self, i: int) -> float:
        return i * self.round_spacing

    def contains(self, p: float) -> bool:
        lo, hi = sorted((self.pos_v1, self.pos_v2))
        return lo - _EPS <= p <= hi + _EPS


class Agent(NamedTuple):
    """One party of a responder: where it sits, which pulses it measures
    (1 for V1's, 2 for V2's) and which verifiers it answers."""
    position: float
    measures: frozenset
    reports_to: frozenset


def check_layout(agents: Sequence[Agent], geometry: Geometry) -> None:
    for a in agents:
        if not geometry.contains(a.position):
            raise ValueError(f"agent at {a.position} lies outside the verifier segment")
    for k in (1, 2):
        n = sum(k in a.measures for a in agents)
        if n != 1:
            raise ValueError(f"pulse {k} must be measured by exactly one agent, got {n}")
    for j in (1, 2):
        n = sum(j in a.reports_to for a in agents)
        if n != 1:
            raise ValueError(f"verifier V{j} must receive exactly one report, got {n}")


def answer_times(agents: Sequence[Agent], geometry: Geometry) -> dict[int, float]:
    """Earliest arrival time (relative to the round start) of the answer at each verifier.

    Each agent measures its pulses on arrival; results travel once to the
    reporting agent, which forwards its answer to the verifier.
    """
    check_layout(agents, geometry)
    measured_at = {}
    for a in agents:
        if a.measures:
            t = max(geometry.emit_time(k) + abs(a.position - geometry.verifier(k)) for k in a.measures)
            for k in a.measures:
                measured_at[k] = (a.position, t)
    out = {}
    for a in agents:
        for j in a.reports_to:
            info = max(t + abs(p - a.position) for p, t in measured_at.values())
            out[j] = info + abs(a.position - geometry.verifier(j))
    return out


def schedule_feasible(agents: Sequence[Agent], geometry: Geometry) -> bool:
    times = answer_times(agents, geometry)
    return all(times[j] <= geometry.deadline(j) + _EPS for j in (1, 2))
