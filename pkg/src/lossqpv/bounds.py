"""Guessing-probability bounds, PPT certificates, LOCC attacks and soundness errors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import Agent, Geometry
from .qcore import (
    I2,
    I4,
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    TOL,
    check_state,
    is_psd,
    parity_mixtures,
    partial_transpose,
    trace_norm,
)

INCONCLUSIVE = 2  # outcome code for "no detection"


def helstrom_guess(rho0, rho1) -> float:
    rho0 = check_state(rho0)
    rho1 = check_state(rho1)
    if rho0.shape != rho1.shape:
        raise ValueError(f"dimension mismatch: {rho0.shape} vs {rho1.shape}")
    return 0.5 + trace_norm(rho0 - rho1) / 4.0


# -- PPT certificates ----------------------------------------------------------

@dataclass
class CertificateReport:
    eta: float
    primal_value: float
    dual_value: float
    duality_gap: float
    primal_feasible: bool
    dual_feasible: bool
    violations: list[tuple[str, float]] = field(default_factory=list)
    residuals: dict[str, float] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "eta": self.eta,
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "duality_gap": self.duality_gap,
            "primal_feasible": self.primal_feasible,
            "dual_feasible": self.dual_feasible,
            "violations": [list(v) for v in self.violations],
            "residuals": dict(self.residuals),
        }


def ppt_primal_solution(eta: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feasible PPT measurement (Pi_0, Pi_1, Pi_empty) achieving 3*eta/4."""
    swap_block = np.zeros((4, 4), dtype=complex)
    swap_block[1, 2] = swap_block[2, 1] = 1.0
    pi0 = 0.5 * eta * (I4 + swap_block)
    pi1 = 0.5 * eta * (I4 - swap_block)
    pi_empty = (1.0 - eta) * I4
    return pi0, pi1, pi_empty


def ppt_dual_solution() -> tuple[np.ndarray, float, tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Dual point (Y, gamma, (Q_0, Q_1, Q_2)) certifying the 3*eta/4 upper bound."""
    Y = (3.0 / 16.0) * I4
    gamma = 0.75
    corner = np.zeros((4, 4), dtype=complex)
    corner[0, 3] = corner[3, 0] = 1.0
    diag = np.diag([1.0, 0.0, 0.0, 1.0]).astype(complex)
    Q0 = (diag - corner) / 16.0
    Q1 = (diag + corner) / 16.0
    Q2 = np.zeros((4, 4), dtype=complex)
    return Y, gamma, (Q0, Q1, Q2)


def verify_ppt_certificates(eta: float, tol: float = TOL.psd) -> CertificateReport:
    """Check the explicit primal and dual PPT solutions numerically at conclusive rate ``eta``."""
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    rho0, rho1 = parity_mixtures()
    pi0, pi1, pi_e = ppt_primal_solution(eta)
    Y, gamma, (Q0, Q1, Q2) = ppt_dual_solution()
    res: dict[str, float] = {}

    res["primal.completeness"] = float(np.max(np.abs(pi0 + pi1 + pi_e - I4)))
    for i, rho in enumerate((rho0, rho1)):
        res[f"primal.inconclusive_rate[{i}]"] = abs(np.trace(rho @ pi_e).real - (1.0 - eta))
    for name, P in (("0", pi0), ("1", pi1), ("empty", pi_e)):
        res[f"primal.psd[{name}]"] = -is_psd(P)[1]
        res[f"primal.ppt[{name}]"] = -is_psd(partial_transpose(P))[1]

    for i, (rho, Q) in enumerate(((rho0, Q0), (rho1, Q1))):
        res[f"dual.guess_constraint[{i}]"] = -is_psd(2.0 * (Y - partial_transpose(Q)) - rho)[1]
    res["dual.inconclusive_constraint"] = -is_psd(4.0 * (Y - partial_transpose(Q2)) - gamma * I4)[1]
    for i, Q in enumerate((Q0, Q1, Q2)):
        res[f"dual.q_psd[{i}]"] = -is_psd(Q)[1]

    # a residual > 0 measures by how much a constraint is broken
    violations = []
    for key, r in res.items():
        limit = tol
        if key.startswith("primal.completeness") or key.startswith("primal.inconclusive"):
            limit = TOL.completeness
        if r > limit:
            violations.append((key, r))
    primal_ok = not any(k.startswith("primal.") for k, _ in violations)
    dual_ok = not any(k.startswith("dual.") for k, _ in violations)

    primal = 0.5 * np.trace(rho0 @ pi0 + rho1 @ pi1).real
    dual = np.trace(Y).real - (1.0 - eta) * gamma
    return CertificateReport(
        eta=eta,
        primal_value=float(primal),
        dual_value=float(dual),
        duality_gap=float(dual - primal),
        primal_feasible=primal_ok,
        dual_feasible=dual_ok,
        violations=violations,
        residuals=res,
    )


# -- LOCC attacks ----------------------------------------------------------------

_BASIS_OBSERVABLE = {"X": PAULI_X, "Y": PAULI_Y, "Z": PAULI_Z}


def _plus_probability(rho: np.ndarray, observable: np.ndarray) -> np.ndarray:
    """Born probability of the +1 outcome of a Pauli measurement, batched over leading axes."""
    proj = 0.5 * (I2 + observable)
    return np.einsum("...ij,ji->...", rho, proj).real


@dataclass
class AttackStrategy:
    """Two adversaries, one beside each verifier, with pre-shared randomness.

    With probability ``eta`` (shared draw lambda = 1) both measure their own
    qubit locally in a common Pauli basis, swap results in a single classical
    exchange and announce the XOR to their nearest verifier; otherwise both
    announce no detection. ``basis_weights`` mixes the X and Y bases using an
    extra shared draw. Each adversary only ever touches its own qubit, which
    is what makes the strategy LOCC with one round of communication.
    """
    name: str
    eta: float
    basis_weights: dict = field(default_factory=lambda: {"X": 1.0})
    offset: float = 0.5  # fraction of the way from each verifier to the claimed position

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if not 0.0 <= self.offset < 1.0:
            raise ValueError("offset must lie in [0, 1)")
        total = sum(self.basis_weights.values())
        if total <= 0 or any(w < 0 for w in self.basis_weights.values()):
            raise ValueError("basis weights must be non-negative with a positive sum")
        self.basis_weights = {k: w / total for k, w in self.basis_weights.items()}

    def layout(self, geometry: Geometry) -> list[Agent]:
        p1 = geometry.pos_v1 + self.offset * (geometry.pos_claimed - geometry.pos_v1)
        p2 = geometry.pos_v2 + self.offset * (geometry.pos_claimed - geometry.pos_v2)
        return [
            Agent(p1, frozenset({1}), frozenset({1})),
            Agent(p2, frozenset({2}), frozenset({2})),
        ]

    def respond(self, rho1, rho2, rng: np.random.Generator):
        """Outcomes announced to (V1, V2); batched over leading axes of the states."""
        rho1 = np.asarray(rho1, dtype=complex)
        rho2 = np.asarray(rho2, dtype=complex)
        shape = rho1.shape[:-2]
        lam = rng.random(shape) < self.eta
        names = list(self.basis_weights)
        pick = rng.choice(len(names), size=shape, p=[self.basis_weights[n] for n in names])
        p1 = np.zeros(shape)
        p2 = np.zeros(shape)
        for idx, n in enumerate(names):
            obs = _BASIS_OBSERVABLE[n]
            sel = pick == idx
            p1 = np.where(sel, _plus_probability(rho1, obs), p1)
            p2 = np.where(sel, _plus_probability(rho2, obs), p2)
        o1 = (rng.random(shape) >= p1).astype(np.int64)
        o2 = (rng.random(shape) >= p2).astype(np.int64)
        z = np.where(lam, o1 ^ o2, INCONCLUSIVE)
        if z.ndim == 0:
            z = int(z)
            return z, z
        return z, z.copy()

    def outcome_distribution(self, rho1, rho2) -> np.ndarray:
        """Exact (P[z=0], P[z=1], P[empty]) for a single pair of states."""
        p_parity1 = 0.0
        for n, w in self.basis_weights.items():
            a = _plus_probability(np.asarray(rho1, dtype=complex), _BASIS_OBSERVABLE[n])
            b = _plus_probability(np.asarray(rho2, dtype=complex), _BASIS_OBSERVABLE[n])
            p_parity1 += w * (a * (1 - b) + (1 - a) * b)
        return np.array([self.eta * (1 - p_parity1), self.eta * p_parity1, 1.0 - self.eta])


def locc_xbasis_strategy(eta: float) -> AttackStrategy:
    return AttackStrategy("locc-x", eta, {"X": 1.0})


def locc_ybasis_strategy(eta: float) -> AttackStrategy:
    return AttackStrategy("locc-y", eta, {"Y": 1.0})


def locc_mixed_strategy(eta: float, x_weight: float = 0.5) -> AttackStrategy:
    return AttackStrategy("locc-mixed", eta, {"X": x_weight, "Y": 1.0 - x_weight})


def exact_attack_guess(strategy: AttackStrategy) -> tuple[float, float]:
    """(conditional guessing probability, detection rate) averaged over uniform (b, x, y)."""
    from .qcore import bb84_state

    correct = detected = 0.0
    for b in (0, 1):
        for x in (0, 1):
            for y in (0, 1):
                dist = strategy.outcome_distribution(bb84_state(b, x), bb84_state(b, y))
                correct += dist[x ^ y] / 8.0
                detected += (dist[0] + dist[1]) / 8.0
    return (correct / detected if detected > 0 else float("nan")), detected


def product_measurement_search(n_polar: int = 13, n_azimuth: int = 24, keep: int = 5):
    """Exhaustive grid over local projective measurements with any classical post-processing.

    Both adversaries measure along a Bloch direction from the grid, swap
    outcomes, and output the best function of the two bits. Returns the best
    exact guessing probability found and the ``keep`` best direction pairs.
    Near-optimal pairs are recorded, not interpreted.
    """
    rho0, rho1 = parity_mixtures()
    th = np.linspace(0.0, np.pi, n_polar)
    ph = np.linspace(0.0, 2 * np.pi, n_azimuth, endpoint=False)
    dirs = np.array([[np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)] for t in th for p in ph])
    sig = np.stack([PAULI_X, PAULI_Y, PAULI_Z])
    obs = np.einsum("nk,kij->nij", dirs, sig)
    proj = np.stack([0.5 * (I2 + obs), 0.5 * (I2 - obs)], axis=1)  # (n, outcome, 2, 2)
    # joint outcome probabilities for every direction pair: (n1, n2, o1, o2)
    r0 = rho0.reshape(2, 2, 2, 2)
    r1 = rho1.reshape(2, 2, 2, 2)
    # Tr[rho (P (x) Q)] = sum rho[(a,b),(c,d)] P[c,a] Q[d,b]
    p0 = np.einsum("abcd,moca,npdb->mnop", r0, proj, proj, optimize=True).real
    p1 = np.einsum("abcd,moca,npdb->mnop", r1, proj, proj, optimize=True).real
    guess = 0.5 * np.maximum(p0, p1).sum(axis=(2, 3))
    flat = np.argsort(guess, axis=None)[::-1][:keep]
    best = []
    for f in flat:
        i, j = np.unravel_index(f, guess.shape)
        best.append((float(guess[i, j]), tuple(dirs[i]), tuple(dirs[j])))
    return float(guess.max()), best


# -- soundness -------------------------------------------------------------------

@dataclass(frozen=True)
class SoundnessInput:
    n_th: int
    delta_th: float
    nu: float = 10.0

    def __post_init__(self):
        if self.n_th < 1:
            raise ValueError("n_th must be a positive integer")
        if not 0.0 <= self.delta_th < 0.25:
            raise ValueError(f"delta_th must lie in [0, 1/4), got {self.delta_th}")
        if self.nu <= 0:
            raise ValueError("nu must be positive")


def soundness_qubit(inp: SoundnessInput) -> float:
    return math.exp(-2.0 * inp.n_th * (0.25 - inp.delta_th) ** 2)


def decoy_failure(nu: float, n_estimators: int) -> float:
    """1 - (1 - e^{-2 nu})^n, evaluated without cancellation."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    return -math.expm1(n_estimators * math.log1p(-math.exp(-2.0 * nu)))


def soundness_decoy(inp: SoundnessInput) -> tuple[float, float, float]:
    """Return ``(eps_decoy, eps1, eps2)``."""
    eps1 = decoy_failure(inp.nu, 7)
    eps2 = decoy_failure(inp.nu, 4)
    return soundness_qubit(inp) + 2.0 * eps1 + eps2, eps1, eps2
