"""Protocol engines: rounds, timing, quota and error-rate checks, verdicts.

Responders follow one interface: ``layout(geometry)`` lists the agents that
make up the responder, and ``respond(rho1, rho2, rng)`` maps the two states
(batched over leading axes) to the outcomes announced to V1 and V2. The
basis bit never reaches a responder except through the states.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence, TextIO

import numpy as np

from .bounds import INCONCLUSIVE
from .decoy import CountTable, IntensityConfig, estimate
from .geometry import Agent, Geometry, check_layout, schedule_feasible
from .qcore import bb84_state, bell_projectors

# STATES[b, k] is the 2x2 projector the verifiers send for basis b and bit k
STATES = np.array([[bb84_state(b, k) for k in (0, 1)] for b in (0, 1)])


class Responder(Protocol):
    def layout(self, geometry: Geometry) -> list[Agent]: ...

    def respond(self, rho1, rho2, rng: np.random.Generator): ...


@dataclass
class HonestProver:
    """Ideal prover at the claimed position performing the half-efficient BSM."""
    honest: bool = field(default=True, init=False)

    def layout(self, geometry: Geometry) -> list[Agent]:
        return [Agent(geometry.pos_claimed, frozenset({1, 2}), frozenset({1, 2}))]

    def outcome_probabilities(self, rho1, rho2) -> np.ndarray:
        """(..., 3) array of P[psi+], P[psi-], P[inconclusive]."""
        proj = bell_projectors()
        joint = np.einsum("...ab,...cd->...acbd", rho1, rho2).reshape(np.shape(rho1)[:-2] + (4, 4))
        p0 = np.einsum("...ij,ji->...", joint, proj["psi_plus"]).real
        p1 = np.einsum("...ij,ji->...", joint, proj["psi_minus"]).real
        return np.stack([p0, p1, 1.0 - p0 - p1], axis=-1)

    def respond(self, rho1, rho2, rng: np.random.Generator):
        probs = self.outcome_probabilities(np.asarray(rho1, dtype=complex), np.asarray(rho2, dtype=complex))
        u = rng.random(probs.shape[:-1])
        z = (u[..., None] >= np.cumsum(probs, axis=-1)[..., :2]).sum(axis=-1)
        if z.ndim == 0:
            z = int(z)
            return z, z
        return z, z.copy()


class Reason(str, enum.Enum):
    TIMING = "timing-abort"
    INCONSISTENT = "inconsistent-outcomes"
    QUOTA = "quota-fail"
    ERROR_RATE = "error-rate-fail"
    ACCEPT = "accept"


@dataclass
class Verdict:
    value: str
    reason: Reason
    statistics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value not in ("Y", "N"):
            raise ValueError("verdict value must be 'Y' or 'N'")
        if (self.value == "Y") != (self.reason is Reason.ACCEPT):
            raise ValueError("value is Y exactly when the reason is accept")

    @property
    def accepted(self) -> bool:
        return self.value == "Y"

    @classmethod
    def reject(cls, reason: Reason, **stats) -> "Verdict":
        return cls("N", reason, stats)


@dataclass(frozen=True)
class ProtocolParams:
    m: int
    n_th: int
    delta_th: float
    mode: str = "qubit"
    decoy_cfg: IntensityConfig | None = None

    def __post_init__(self):
        if self.m < 1 or self.n_th < 1:
            raise ValueError("m and n_th must be positive")
        if self.n_th > self.m:
            raise ValueError("n_th cannot exceed m")
        if not 0.0 <= self.delta_th < 0.25:
            raise ValueError("delta_th must lie in [0, 1/4)")
        if self.mode not in ("qubit", "decoy"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "decoy" and self.decoy_cfg is None:
            object.__setattr__(self, "decoy_cfg", IntensityConfig())


@dataclass
class RoundRecord:
    index: int
    basis: int
    x: int
    y: int
    z: int
    arrived_in_time: bool = True
    outcomes_consistent: bool = True
    g: float | None = None
    h: float | None = None

    @property
    def conclusive(self) -> bool:
        return self.z != INCONCLUSIVE

    @property
    def error(self) -> bool:
        return self.conclusive and self.z != (self.x ^ self.y)


# -- timing --------------------------------------------------------------------------------

def validate_responder(responder: Responder, geometry: Geometry) -> list[Agent]:
    """Check positions; a dishonest responder may not occupy the claimed position."""
    agents = responder.layout(geometry)
    check_layout(agents, geometry)
    if not getattr(responder, "honest", False):
        for a in agents:
            if abs(a.position - geometry.pos_claimed) <= 1e-12:
                raise ValueError("an adversary cannot sit at the claimed position")
    return agents


def timing_check(responder: Responder, geometry: Geometry) -> bool:
    """Whether the responder's agents can answer both verifiers by the deadline.

    Positions are fixed for a whole run, so the check depends only on the layout.
    """
    return schedule_feasible(validate_responder(responder, geometry), geometry)


# -- rounds ---------------------------------------------------------------------------------

@dataclass
class RoundBatch:
    """Column-wise records for rounds ``start .. start + len - 1``."""
    basis: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z_v1: np.ndarray
    z_v2: np.ndarray
    in_time: bool
    start: int = 0

    def __len__(self) -> int:
        return len(self.basis)

    def records(self) -> list[RoundRecord]:
        return [
            RoundRecord(self.start + i, int(self.basis[i]), int(self.x[i]), int(self.y[i]), int(self.z_v1[i]),
                        self.in_time, bool(self.z_v1[i] == self.z_v2[i]))
            for i in range(len(self))
        ]


def draw_challenges(m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    bits = rng.integers(0, 2, size=(3, m))
    return bits[0], bits[1], bits[2]


def run_rounds(m: int, responder: Responder, geometry: Geometry, rng: np.random.Generator,
               responder_rng: np.random.Generator | None = None, start: int = 0) -> RoundBatch:
    """Play ``m`` rounds. Challenges come from ``rng``; the responder draws from its own stream.

    Responders are stateless, so handing them a batch of independent rounds is
    equivalent to playing the rounds one by one at spacing 2 tau.
    """
    in_time = timing_check(responder, geometry)
    b, x, y = draw_challenges(m, rng)
    z1, z2 = responder.respond(STATES[b, x], STATES[b, y], responder_rng if responder_rng is not None else rng)
    return RoundBatch(b, x, y, np.asarray(z1), np.asarray(z2), in_time, start)


def run_round(i: int, responder: Responder, geometry: Geometry, rng: np.random.Generator,
              responder_rng: np.random.Generator | None = None) -> RoundRecord:
    return run_rounds(1, responder, geometry, rng, responder_rng, start=i).records()[0]


# -- checks and verdicts ---------------------------------------------------------------------------

def quota_check(z: Sequence[int] | np.ndarray, n_th: int, rng: np.random.Generator) -> np.ndarray | Verdict:
    """Indices Z' of ``n_th`` conclusive rounds drawn uniformly without replacement, or a quota-fail verdict."""
    z = np.asarray(z)
    conclusive = np.flatnonzero(z != INCONCLUSIVE)
    if len(conclusive) < n_th:
        return Verdict.reject(Reason.QUOTA, s11=int(len(conclusive)), n_th=n_th)
    if len(conclusive) == n_th:
        return conclusive
    return np.sort(rng.choice(conclusive, size=n_th, replace=False))


def verdict_qubit(batch: RoundBatch, params: ProtocolParams, rng: np.random.Generator) -> Verdict:
    """Verdict for a completed qubit-protocol run.

    The error ratio is the number of errors on Z' divided by n_th.
    """
    if not batch.in_time:
        return Verdict.reject(Reason.TIMING)
    bad = np.flatnonzero(batch.z_v1 != batch.z_v2)
    if len(bad):
        return Verdict.reject(Reason.INCONSISTENT, first_round=int(batch.start + bad[0]))
    z = batch.z_v1
    sel = quota_check(z, params.n_th, rng)
    if isinstance(sel, Verdict):
        return sel
    errors = int(np.count_nonzero(z[sel] != (batch.x[sel] ^ batch.y[sel])))
    ratio = errors / params.n_th
    stats = {"s11": int(np.count_nonzero(z != INCONCLUSIVE)), "errors": errors, "ratio": ratio}
    if ratio <= params.delta_th:
        return Verdict("Y", Reason.ACCEPT, stats)
    return Verdict("N", Reason.ERROR_RATE, stats)


def run_qubit_protocol(params: ProtocolParams, responder: Responder, geometry: Geometry,
                       rng: np.random.Generator, responder_rng: np.random.Generator | None = None,
                       ) -> tuple[Verdict, RoundBatch]:
    batch = run_rounds(params.m, responder, geometry, rng, responder_rng)
    return verdict_qubit(batch, params, rng), batch


def verdict_decoy(counts: CountTable, params: ProtocolParams, nu: float, **estimator_kw) -> Verdict:
    cfg = params.decoy_cfg or IntensityConfig()
    est = estimate(counts, cfg, nu, **estimator_kw)
    stats = {"s_lb": est.s_lb, "r_ub": est.r_ub, "gamma1": est.gamma1, "gamma2": est.gamma2, "gamma3": est.gamma3}
    if est.s_lb < params.n_th:
        return Verdict("N", Reason.QUOTA, stats)
    stats["ratio"] = est.ratio
    if est.ratio <= params.delta_th:
        return Verdict("Y", Reason.ACCEPT, stats)
    return Verdict("N", Reason.ERROR_RATE, stats)


# -- transcripts -------------------------------------------------------------------------------

TRANSCRIPT_HEADER = "# i b x y g h z in_time consistent"


def _opt(v) -> str:
    return "-" if v is None else repr(float(v))


def write_transcript(records: Iterable[RoundRecord], fh: TextIO) -> None:
    fh.write(TRANSCRIPT_HEADER + "\n")
    for r in records:
        z = "none" if r.z == INCONCLUSIVE else str(r.z)
        fh.write(f"{r.index} {r.basis} {r.x} {r.y} {_opt(r.g)} {_opt(r.h)} {z} "
                 f"{int(r.arrived_in_time)} {int(r.outcomes_consistent)}\n")


def read_transcript(fh: TextIO) -> list[RoundRecord]:
    out = []
    for lineno, line in enumerate(fh, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 9:
            raise ValueError(f"line {lineno}: expected 9 fields, got {len(parts)}")
        i, b, x, y, g, h, z, t, c = parts
        out.append(RoundRecord(
            int(i), int(b), int(x), int(y),
            INCONCLUSIVE if z == "none" else int(z),
            bool(int(t)), bool(int(c)),
            None if g == "-" else float(g),
            None if h == "-" else float(h),
        ))
    return out


def binomial_tail_ge(n: int, p: float, k: int) -> float:
    """P[Bin(n, p) >= k], summed in log space."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    logs = [math.lgamma(n + 1) - math.lgamma(j + 1) - math.lgamma(n - j + 1)
            + j * math.log(p) + (n - j) * math.log1p(-p) for j in range(k, n + 1)]
    top = max(logs)
    return math.exp(top) * sum(math.exp(v - top) for v in logs)
