"""Linear-optics Bell-state measurement and the lossy, noisy channel feeding it.

Detector order is (D1H, D1V, D2H, D2V); a click pattern is a 4-bit integer
with bit ``i`` set when detector ``i`` fired. The network is a 50:50
beamsplitter (port 1 gets (a + b)/sqrt(2), port 2 gets (a - b)/sqrt(2))
followed by a polarizing beamsplitter on each port.

Three backends share that network:

* ``ideal_bsm_single_photon``: exact single-photon Bell projections, no loss.
* ``coherent_bsm``: phase-randomized coherent pulses, threshold detectors.
* ``fock_bsm``: definite photon numbers, exact multimode evolution.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .bounds import INCONCLUSIVE
from .qcore import bb84_vector, bell_projectors

DETECTORS = ("D1H", "D1V", "D2H", "D2V")
PSI_PLUS_PATTERNS = (0b0011, 0b1100)   # {D1H, D1V}, {D2H, D2V}
PSI_MINUS_PATTERNS = (0b1001, 0b0110)  # {D1H, D2V}, {D1V, D2H}
DEFAULT_FOCK_CUTOFF = 10


def classify_pattern(pattern: int) -> int:
    """Map a click pattern to 0 (psi+), 1 (psi-) or INCONCLUSIVE."""
    if pattern in PSI_PLUS_PATTERNS:
        return 0
    if pattern in PSI_MINUS_PATTERNS:
        return 1
    return INCONCLUSIVE


PATTERN_OUTCOME = np.array([classify_pattern(p) for p in range(16)])


def pattern_flags(pattern: int) -> tuple[bool, bool, bool, bool]:
    return tuple(bool(pattern >> i & 1) for i in range(4))


@dataclass(frozen=True)
class ChannelModel:
    transmittance_per_arm: float = 1.0
    misalignment_error: float = 1e-3
    detector_efficiency: float = 0.64
    dark_count_prob: float = 2.5e-6

    def __post_init__(self):
        if not 0.0 < self.transmittance_per_arm <= 1.0:
            raise ValueError("transmittance_per_arm must lie in (0, 1]")
        for name in ("misalignment_error", "detector_efficiency", "dark_count_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def arm_efficiency(self) -> float:
        """Probability that a photon from one verifier survives channel and detector."""
        return self.transmittance_per_arm * self.detector_efficiency

    @property
    def misalignment_angle(self) -> float:
        return math.asin(math.sqrt(self.misalignment_error))

    @property
    def bsm_loss_db(self) -> float:
        """Loss of the measurement itself: 1/2 intrinsic efficiency and two detectors."""
        return bsm_loss_db(self.detector_efficiency)

    @property
    def channel_loss_db(self) -> float:
        return -20.0 * math.log10(self.transmittance_per_arm)

    @property
    def overall_loss_db(self) -> float:
        return self.channel_loss_db + self.bsm_loss_db

    @classmethod
    def from_overall_loss(cls, loss_db: float, **kw) -> "ChannelModel":
        """Channel whose total V1-to-V2 loss, BSM included, is ``loss_db``.

        The channel part is split evenly between the two arms.
        """
        eff = kw.get("detector_efficiency", cls.detector_efficiency)
        channel_db = loss_db - bsm_loss_db(eff)
        if channel_db < -1e-9:
            raise ValueError(f"overall loss {loss_db} dB is below the BSM loss {bsm_loss_db(eff):.3f} dB")
        return cls(transmittance_per_arm=10 ** (-max(channel_db, 0.0) / 20.0), **kw)

    @classmethod
    def from_mapping(cls, cfg: dict) -> "ChannelModel":
        """Build from the flat config keys transmittance_db, misalignment, det_eff, dark_count.

        ``transmittance_db`` is the total channel loss between the verifiers
        (BSM excluded), split evenly between the arms.
        """
        known = {"transmittance_db", "misalignment", "det_eff", "dark_count"}
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown channel keys: {sorted(unknown)}")
        kw = {}
        if "misalignment" in cfg:
            kw["misalignment_error"] = float(cfg["misalignment"])
        if "det_eff" in cfg:
            kw["detector_efficiency"] = float(cfg["det_eff"])
        if "dark_count" in cfg:
            kw["dark_count_prob"] = float(cfg["dark_count"])
        if "transmittance_db" in cfg:
            kw["transmittance_per_arm"] = 10 ** (-float(cfg["transmittance_db"]) / 20.0)
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "ChannelModel":
        return cls.from_mapping(json.loads(Path(path).read_text()))

    def to_mapping(self) -> dict:
        return {
            "transmittance_db": self.channel_loss_db,
            "misalignment": self.misalignment_error,
            "det_eff": self.detector_efficiency,
            "dark_count": self.dark_count_prob,
        }


def bsm_loss_db(detector_efficiency: float) -> float:
    return -10.0 * math.log10(0.5 * detector_efficiency ** 2)


@dataclass
class PulsePair:
    basis: int
    bit_v1: int
    bit_v2: int
    intensity_v1: float = 0.0
    intensity_v2: float = 0.0
    phase_v1: float | None = None
    phase_v2: float | None = None
    photons_v1: int | None = None
    photons_v2: int | None = None

    def __post_init__(self):
        has_phase = self.phase_v1 is not None and self.phase_v2 is not None
        has_photons = self.photons_v1 is not None and self.photons_v2 is not None
        if has_phase == has_photons:
            raise ValueError("set either both phases (coherent) or both photon numbers (Fock)")


@dataclass
class BsmOutcome:
    value: int
    click_pattern: tuple = field(default=(False, False, False, False))

    @classmethod
    def from_pattern(cls, pattern: int) -> "BsmOutcome":
        return cls(classify_pattern(pattern), pattern_flags(pattern))


# -- polarization ------------------------------------------------------------------

def arm_polarizations(basis, bit_v1, bit_v2, misalignment_error: float = 0.0):
    """Polarization vectors arriving at the beamsplitter, shape (..., 2) each.

    Misalignment is an equatorial rotation: V1's V component picks up phase
    -theta and V2's +theta with sin^2(theta) = misalignment_error, so matched
    single photons give a psi-/psi+ error rate of exactly misalignment_error.
    """
    theta = math.asin(math.sqrt(misalignment_error))
    basis = np.asarray(basis)
    ph1 = (1j) ** basis * (-1.0) ** np.asarray(bit_v1) * np.exp(-1j * theta)
    ph2 = (1j) ** basis * (-1.0) ** np.asarray(bit_v2) * np.exp(1j * theta)
    s = 1.0 / math.sqrt(2.0)
    pa = np.stack(np.broadcast_arrays(np.full(np.shape(ph1), s, dtype=complex), s * ph1), axis=-1)
    pb = np.stack(np.broadcast_arrays(np.full(np.shape(ph2), s, dtype=complex), s * ph2), axis=-1)
    return pa, pb


# -- ideal single photons ----------------------------------------------------------------

def ideal_outcome_probabilities(basis: int, bit_v1: int, bit_v2: int) -> np.ndarray:
    """(P[psi+], P[psi-], P[inconclusive]) for two ideal single photons."""
    state = np.kron(bb84_vector(basis, bit_v1), bb84_vector(basis, bit_v2))
    proj = bell_projectors()
    p0 = float(np.vdot(state, proj["psi_plus"] @ state).real)
    p1 = float(np.vdot(state, proj["psi_minus"] @ state).real)
    return np.array([p0, p1, 1.0 - p0 - p1])


def ideal_bsm_single_photon(basis: int, bit_v1: int, bit_v2: int, rng: np.random.Generator) -> BsmOutcome:
    """Sample the half-efficient linear-optics BSM on ideal single photons.

    Conclusive outcomes pick one of their two click patterns at random; the
    phi-type (inconclusive) events put both photons in one detector.
    """
    p = ideal_outcome_probabilities(basis, bit_v1, bit_v2)
    z = int(rng.choice(3, p=p))
    if z == 0:
        pattern = PSI_PLUS_PATTERNS[rng.integers(2)]
    elif z == 1:
        pattern = PSI_MINUS_PATTERNS[rng.integers(2)]
    else:
        pattern = 1 << int(rng.integers(4))
    return BsmOutcome(z, pattern_flags(pattern))


# -- coherent backend ------------------------------------------------------------------------

def detector_intensities(pa, pb, u, v, rel_phase, arm_efficiency: float) -> np.ndarray:
    """Mean photon number reaching each detector, shape (..., 4).

    ``rel_phase`` is the phase of V2's pulse relative to V1's; only the
    relative phase enters the click statistics.
    """
    amp_a = np.sqrt(np.asarray(u) * arm_efficiency)[..., None] * pa
    amp_b = (np.sqrt(np.asarray(v) * arm_efficiency) * np.exp(1j * np.asarray(rel_phase)))[..., None] * pb
    port1 = (amp_a + amp_b) / math.sqrt(2.0)
    port2 = (amp_a - amp_b) / math.sqrt(2.0)
    out = np.concatenate([port1, port2], axis=-1)  # (1H, 1V, 2H, 2V)
    return np.abs(out) ** 2


def click_probabilities(intensities, dark_count_prob: float) -> np.ndarray:
    return 1.0 - (1.0 - dark_count_prob) * np.exp(-intensities)


def pattern_probabilities(click_p) -> np.ndarray:
    """Distribution over the 16 patterns for independent detectors, shape (..., 16)."""
    click_p = np.asarray(click_p)
    out = np.ones(click_p.shape[:-1] + (16,))
    for pattern in range(16):
        for i in range(4):
            out[..., pattern] *= np.where(pattern >> i & 1, click_p[..., i], 1.0 - click_p[..., i])
    return out


def outcome_probabilities_from_patterns(pattern_p) -> np.ndarray:
    """Collapse (..., 16) pattern probabilities to (..., 3) outcome probabilities."""
    pattern_p = np.asarray(pattern_p)
    out = np.zeros(pattern_p.shape[:-1] + (3,))
    for z in range(3):
        out[..., z] = pattern_p[..., PATTERN_OUTCOME == z].sum(axis=-1)
    return out


def _sample_patterns(click_p, rng) -> np.ndarray:
    fired = rng.random(np.shape(click_p)) < click_p
    weights = 1 << np.arange(4)
    return (fired * weights).sum(axis=-1)


def coherent_bsm(pulse: PulsePair, channel: ChannelModel, rng: np.random.Generator) -> BsmOutcome:
    if pulse.phase_v1 is None:
        raise ValueError("coherent backend needs phases")
    pa, pb = arm_polarizations(pulse.basis, pulse.bit_v1, pulse.bit_v2, channel.misalignment_error)
    inten = detector_intensities(pa, pb, pulse.intensity_v1, pulse.intensity_v2,
                                 pulse.phase_v2 - pulse.phase_v1, channel.arm_efficiency)
    pattern = int(_sample_patterns(click_probabilities(inten, channel.dark_count_prob), rng))
    return BsmOutcome.from_pattern(pattern)


def sample_coherent(basis, bit_v1, bit_v2, u, v, channel: ChannelModel, rng: np.random.Generator):
    """Vectorized coherent backend: draws both phases uniformly, returns (patterns, outcomes)."""
    basis = np.asarray(basis)
    theta1 = rng.uniform(0.0, 2 * np.pi, basis.shape)
    theta2 = rng.uniform(0.0, 2 * np.pi, basis.shape)
    pa, pb = arm_polarizations(basis, bit_v1, bit_v2, channel.misalignment_error)
    inten = detector_intensities(pa, pb, u, v, theta2 - theta1, channel.arm_efficiency)
    patterns = _sample_patterns(click_probabilities(inten, channel.dark_count_prob), rng)
    return patterns, PATTERN_OUTCOME[patterns]


def _phase_averaged_outcomes(u: float, v: float, channel: ChannelModel, n: int) -> np.ndarray:
    """Outcome probabilities (b, x, y, 3) averaged over an n-point relative-phase grid."""
    b, x, y = np.meshgrid([0, 1], [0, 1], [0, 1], indexing="ij")
    pa, pb = arm_polarizations(b, x, y, channel.misalignment_error)
    phi = 2 * np.pi * np.arange(n) / n
    inten = detector_intensities(pa[..., None, :], pb[..., None, :], u, v, phi, channel.arm_efficiency)
    probs = outcome_probabilities_from_patterns(
        pattern_probabilities(click_probabilities(inten, channel.dark_count_prob)))
    return probs.mean(axis=-2)


def _gain_error_from_outcomes(probs) -> tuple[float, float]:
    """probs: (b, x, y, 3) with uniform weights over (b, x, y)."""
    parity = np.array([[0, 1], [1, 0]])
    gain = float(probs[..., :2].sum(axis=-1).mean())
    wrong = np.take_along_axis(probs[..., :2], (1 - parity)[None, :, :, None], axis=-1)[..., 0]
    err = float(wrong.mean())
    return gain, (err / gain if gain > 0 else 0.5)


def expected_gain_error(u: float, v: float, channel: ChannelModel,
                        n_start: int = 64, tol: float = 1e-10, max_points: int = 1 << 14) -> tuple[float, float]:
    """Gain Q and conditional error rate E for intensity pair (u, v), by phase quadrature.

    The uniform grid over the relative phase is doubled until Q and Q*E
    each move by less than ``tol``.
    """
    n = n_start
    prev = _gain_error_from_outcomes(_phase_averaged_outcomes(u, v, channel, n))
    while n < max_points:
        n *= 2
        cur = _gain_error_from_outcomes(_phase_averaged_outcomes(u, v, channel, n))
        if abs(cur[0] - prev[0]) < tol and abs(cur[0] * cur[1] - prev[0] * prev[1]) < tol:
            return cur
        prev = cur
    return prev


def gain_error_table(intensities, channel: ChannelModel) -> tuple[np.ndarray, np.ndarray]:
    """(Q, E) as 3x3 arrays indexed by the intensity pair."""
    k = len(intensities)
    Q = np.zeros((k, k))
    E = np.zeros((k, k))
    for i, u in enumerate(intensities):
        for j, v in enumerate(intensities):
            Q[i, j], E[i, j] = expected_gain_error(u, v, channel)
    return Q, E


# -- Fock backend --------------------------------------------------------------------------------

def _lossless_pattern_probs(j: int, jp: int, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """Pattern distribution for j photons in V1's mode and jp in V2's, no loss, ideal detectors."""
    s = 1.0 / math.sqrt(2.0)
    ca = np.array([pa[0] * s, pa[1] * s, pa[0] * s, pa[1] * s])
    cb = np.array([pb[0] * s, pb[1] * s, -pb[0] * s, -pb[1] * s])
    poly: dict[tuple, complex] = {(0, 0, 0, 0): 1.0 + 0j}
    for coeffs in [ca] * j + [cb] * jp:
        nxt: dict[tuple, complex] = {}
        for occ, c in poly.items():
            for mode in range(4):
                if coeffs[mode] == 0:
                    continue
                key = occ[:mode] + (occ[mode] + 1,) + occ[mode + 1:]
                nxt[key] = nxt.get(key, 0j) + c * coeffs[mode]
        poly = nxt
    norm = math.factorial(j) * math.factorial(jp)
    out = np.zeros(16)
    for occ, c in poly.items():
        weight = math.prod(math.factorial(n) for n in occ) / norm
        pattern = sum(1 << i for i, n in enumerate(occ) if n > 0)
        out[pattern] += abs(c) ** 2 * weight
    return out


def _dark_count_matrix(d: float) -> np.ndarray:
    """D[S, F]: probability that signal pattern S becomes final pattern F once dark clicks are OR-ed in."""
    D = np.zeros((16, 16))
    for S in range(16):
        for F in range(16):
            if S & ~F:
                continue
            extra = bin(F & ~S).count("1")
            idle = bin(~F & 0xF).count("1")
            D[S, F] = d ** extra * (1 - d) ** idle
    return D


@lru_cache(maxsize=16)
def _lossless_table(misalignment_error: float, cutoff: int) -> np.ndarray:
    table = np.zeros((cutoff + 1, cutoff + 1, 2, 2, 2, 16))
    for b in (0, 1):
        for x in (0, 1):
            for y in (0, 1):
                pa, pb = arm_polarizations(b, x, y, misalignment_error)
                for j in range(cutoff + 1):
                    for jp in range(cutoff + 1 - j):
                        table[j, jp, b, x, y] = _lossless_pattern_probs(j, jp, pa, pb)
    return table


def _binomial_matrix(n_max: int, p: float) -> np.ndarray:
    """B[k, j] = P[j of k photons survive]."""
    B = np.zeros((n_max + 1, n_max + 1))
    for k in range(n_max + 1):
        for j in range(k + 1):
            B[k, j] = math.comb(k, j) * p ** j * (1 - p) ** (k - j)
    return B


def fock_pattern_table(channel: ChannelModel, cutoff: int = DEFAULT_FOCK_CUTOFF) -> np.ndarray:
    """P[k, l, b, x, y, pattern] for k photons from V1 and l from V2.

    Pairs with k + l above the cutoff are not simulated; their mass sits on
    the no-click pattern, i.e. they count as inconclusive.
    """
    lossless = _lossless_table(channel.misalignment_error, cutoff)
    B = _binomial_matrix(cutoff, channel.arm_efficiency)
    lossy = np.einsum("kj,lm,jmbxyp->klbxyp", B, B, lossless)
    kk, ll = np.meshgrid(np.arange(cutoff + 1), np.arange(cutoff + 1), indexing="ij")
    over = kk + ll > cutoff
    lossy[over] = 0.0
    lossy[over, ..., 0] = 1.0
    table = lossy @ _dark_count_matrix(channel.dark_count_prob)
    table[over] = 0.0
    table[over, ..., 0] = 1.0
    return table


def fock_outcome_table(channel: ChannelModel, cutoff: int = DEFAULT_FOCK_CUTOFF) -> np.ndarray:
    """P[k, l, b, x, y, z] with z in (0, 1, INCONCLUSIVE)."""
    return outcome_probabilities_from_patterns(fock_pattern_table(channel, cutoff))


def fock_bsm(pulse: PulsePair, channel: ChannelModel, rng: np.random.Generator,
             cutoff: int = DEFAULT_FOCK_CUTOFF) -> BsmOutcome:
    if pulse.photons_v1 is None:
        raise ValueError("Fock backend needs photon numbers")
    k, l = pulse.photons_v1, pulse.photons_v2
    if k < 0 or l < 0:
        raise ValueError("photon numbers must be non-negative")
    if k + l > cutoff:
        raise ValueError(f"photon total {k + l} exceeds cutoff {cutoff}")
    probs = fock_pattern_table(channel, cutoff)[k, l, pulse.basis, pulse.bit_v1, pulse.bit_v2]
    pattern = int(rng.choice(16, p=probs / probs.sum()))
    return BsmOutcome.from_pattern(pattern)


def sample_fock_photons(basis, bit_v1, bit_v2, k, l, channel: ChannelModel, rng: np.random.Generator,
                        cutoff: int = DEFAULT_FOCK_CUTOFF):
    """Click patterns and outcomes for given photon numbers; pairs above the cutoff are inconclusive."""
    basis = np.asarray(basis)
    k, l = np.broadcast_to(k, basis.shape), np.broadcast_to(l, basis.shape)
    table = fock_pattern_table(channel, cutoff)
    kept = k + l <= cutoff
    cum = np.cumsum(table[np.where(kept, k, 0), np.where(kept, l, 0), basis, bit_v1, bit_v2], axis=-1)
    patterns = (rng.random(basis.shape)[..., None] >= cum[..., :-1]).sum(axis=-1)
    patterns = np.where(kept, patterns, 0)
    return patterns, PATTERN_OUTCOME[patterns]


def sample_fock(basis, bit_v1, bit_v2, u: float, v: float, channel: ChannelModel, rng: np.random.Generator,
                cutoff: int = DEFAULT_FOCK_CUTOFF):
    """Vectorized Fock backend at intensities (u, v): Poisson photon numbers, then exact outcomes.

    Returns (k, l, patterns, outcomes).
    """
    basis = np.asarray(basis)
    k = rng.poisson(u, basis.shape)
    l = rng.poisson(v, basis.shape)
    patterns, outcomes = sample_fock_photons(basis, bit_v1, bit_v2, k, l, channel, rng, cutoff)
    return k, l, patterns, outcomes


def poisson_tail(mu: float, n_max: int) -> float:
    """P[N > n_max] for N ~ Poisson(mu)."""
    return max(0.0, 1.0 - sum(math.exp(-mu) * mu ** n / math.factorial(n) for n in range(n_max + 1)))


def fock_gain_error(u: float, v: float, channel: ChannelModel,
                    cutoff: int = DEFAULT_FOCK_CUTOFF) -> tuple[float, float]:
    """Gain and error rate for intensity pair (u, v) from the Poisson mixture of Fock outcomes."""
    table = fock_outcome_table(channel, cutoff)
    n = np.arange(cutoff + 1)
    fact = np.array([math.factorial(int(i)) for i in n], dtype=float)
    pk = np.exp(-u) * u ** n / fact
    pl = np.exp(-v) * v ** n / fact
    mix = np.einsum("k,l,klbxyz->bxyz", pk, pl, table)
    return _gain_error_from_outcomes(mix)
