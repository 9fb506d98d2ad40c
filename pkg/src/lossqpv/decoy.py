"""Three-intensity decoy-state estimators for the single-photon sector.

Each verifier picks an intensity from (mu1, mu2, mu3) independently, so a
round carries the pair (u, v) and, hidden from everyone, photon numbers
(k, l) drawn from Poisson(u) and Poisson(v). The estimators turn the 3x3
table of observed conclusive counts ``n_obs`` and error counts ``m_obs`` into
a lower bound on s11 (conclusive rounds with one photon from each side) and
an upper bound on r11 (errors among those).

The Gaussian-elimination combination of the xi-weighted counts bounds
s11 / tau11, the per-pulse yield, rather than s11 itself; by default both
bounds are multiplied by tau11 to turn them back into counts. Pass
``tau_correction=False`` for the uncorrected form.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bounds import decoy_failure

TAIL_MASS = 1e-12


@dataclass(frozen=True)
class IntensityConfig:
    mu1: float = 0.3
    mu2: float = 0.1
    mu3: float = 0.001
    p_mu1: float = 0.5
    p_mu2: float = 0.25
    p_mu3: float = 0.25

    def __post_init__(self):
        if not self.mu2 > self.mu3 >= 0.0:
            raise ValueError("need mu2 > mu3 >= 0")
        if not self.mu1 > self.mu2 + self.mu3:
            raise ValueError("need mu1 > mu2 + mu3")
        probs = self.probabilities
        if np.any(probs <= 0.0):
            raise ValueError("intensity probabilities must be positive")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"intensity probabilities sum to {probs.sum()!r}, expected 1")

    @property
    def intensities(self) -> np.ndarray:
        return np.array([self.mu1, self.mu2, self.mu3])

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([self.p_mu1, self.p_mu2, self.p_mu3])

    def photon_cutoff(self, tail: float = TAIL_MASS) -> int:
        """Smallest K with P[k + l > K] < tail when both sides send the largest intensity."""
        lam = 2.0 * self.mu1
        term = math.exp(-lam)
        cdf, k = term, 0
        while 1.0 - cdf >= tail:
            k += 1
            term *= lam / k
            cdf += term
            if k > 200:
                break
        return k


def poisson_pmf(mu, k) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    k = np.asarray(k)
    fact = np.vectorize(math.factorial, otypes=[float])(k)
    return np.exp(-mu) * np.power(mu, k) / fact


def _joint_weights(k, l, cfg: IntensityConfig) -> np.ndarray:
    """w[..., u, v] = p_u p_v Pois(k; u) Pois(l; v)."""
    mus, ps = cfg.intensities, cfg.probabilities
    pk = ps * poisson_pmf(mus, np.asarray(k)[..., None])
    pl = ps * poisson_pmf(mus, np.asarray(l)[..., None])
    return pk[..., :, None] * pl[..., None, :]


def tau_kl(k, l, cfg: IntensityConfig):
    """Probability that V1 sends k photons and V2 sends l, averaged over intensity choices."""
    out = _joint_weights(k, l, cfg).sum(axis=(-1, -2))
    return float(out) if np.ndim(out) == 0 else out


def p_uv_given_kl(u: int, v: int, k, l, cfg: IntensityConfig):
    """Posterior probability of intensity indices (u, v) given photon numbers (k, l)."""
    w = _joint_weights(k, l, cfg)
    tau = w.sum(axis=(-1, -2))
    if np.any(tau == 0.0):
        raise ValueError("tau_kl vanishes; all intensities are zero")
    out = w[..., u, v] / tau
    return float(out) if np.ndim(out) == 0 else out


def hoeffding_delta(n, eps: float) -> float:
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if np.any(np.asarray(n) < 0):
        raise ValueError("n must be non-negative")
    return np.sqrt(0.5 * np.asarray(n, dtype=float) * math.log(1.0 / eps))


# -- data ----------------------------------------------------------------------------------

@dataclass
class CountTable:
    """Conclusive counts ``n_obs`` and error counts ``m_obs`` per intensity pair.

    Entries may be floats for expected-value tables.
    """
    n_obs: np.ndarray
    m_obs: np.ndarray

    def __post_init__(self):
        self.n_obs = np.asarray(self.n_obs)
        self.m_obs = np.asarray(self.m_obs)
        if self.n_obs.shape != (3, 3) or self.m_obs.shape != (3, 3):
            raise ValueError("count tables must be 3x3")
        if np.any(self.m_obs < 0) or np.any(self.n_obs < 0):
            raise ValueError("counts must be non-negative")
        slack = 1e-9 * np.maximum(self.n_obs, 1.0) if self.n_obs.dtype.kind == "f" else 0
        if np.any(self.m_obs > self.n_obs + slack):
            raise ValueError("error count exceeds detection count")

    @classmethod
    def zeros(cls) -> "CountTable":
        return cls(np.zeros((3, 3), dtype=np.int64), np.zeros((3, 3), dtype=np.int64))

    @property
    def n_obs_sum(self):
        return self.n_obs.sum()

    @property
    def m_obs_sum(self):
        return self.m_obs.sum()

    def n_cell(self, u: int, v: int):
        return self.n_obs[u, v]

    def m_cell(self, u: int, v: int):
        return self.m_obs[u, v]

    def __add__(self, other: "CountTable") -> "CountTable":
        return CountTable(self.n_obs + other.n_obs, self.m_obs + other.m_obs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        labels = ["mu1", "mu2", "mu3"]
        for name, table in (("n_obs", self.n_obs), ("m_obs", self.m_obs)):
            w.writerow([name] + labels)
            for lab, row in zip(labels, table):
                w.writerow([lab] + [_fmt(x) for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CountTable":
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        blocks = {}
        for start in range(0, len(rows), 4):
            head = rows[start]
            blocks[head[0]] = np.array([[_parse(x) for x in r[1:]] for r in rows[start + 1:start + 4]])
        return cls(blocks["n_obs"], blocks["m_obs"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "CountTable":
        return cls.from_csv(Path(path).read_text())


def _fmt(x) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def _parse(s: str):
    return int(s) if s.lstrip("-").isdigit() else float(s)


@dataclass
class PhotonTruth:
    """Ground truth by emitted photon numbers: conclusive counts s[k, l] and errors r[k, l]."""
    s: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s)
        self.r = np.asarray(self.r)
        if self.s.shape != self.r.shape or self.s.ndim != 2:
            raise ValueError("s and r must be 2-D arrays of equal shape")
        if np.any(self.r < 0) or np.any(self.r > self.s):
            raise ValueError("need 0 <= r <= s cellwise")

    @property
    def cutoff(self) -> int:
        return self.s.shape[0] - 1

    @property
    def total(self):
        return self.s.sum()

    @property
    def s11(self):
        return self.s[1, 1]

    @property
    def r11(self):
        return self.r[1, 1]


@dataclass
class DecoyEstimate:
    s_lb: int
    r_ub: int
    ratio: float
    eps1: float
    eps2: float
    gamma1: float
    gamma2: float
    gamma3: float


# -- estimators ------------------------------------------------------------------------------

def xi_matrix(cfg: IntensityConfig) -> np.ndarray:
    mus, ps = cfg.intensities, cfg.probabilities
    return np.exp(mus[:, None] + mus[None, :]) / (ps[:, None] * ps[None, :])


def _fluct(counts: CountTable, pairs, xi, nu: float, kind: str, fluctuation: str) -> float:
    """Hoeffding slack sqrt(nu n) carried through the xi-weighted combination."""
    if fluctuation == "total":
        total = counts.n_obs_sum if kind == "n" else counts.m_obs_sum
        return math.sqrt(nu * float(total)) * sum(xi[p] for p in pairs)
    if fluctuation == "cell":
        cell = counts.n_cell if kind == "n" else counts.m_cell
        return sum(xi[p] * math.sqrt(nu * float(cell(*p))) for p in pairs)
    raise ValueError(f"fluctuation must be 'total' or 'cell', got {fluctuation!r}")


def _combo(counts: CountTable, xi, a: int, kind: str) -> float:
    """xi-weighted (a,a) + (3,3) - (a,3) - (3,a) combination of one count table."""
    cell = counts.n_cell if kind == "n" else counts.m_cell
    z = 2
    return float(xi[a, a] * cell(a, a) + xi[z, z] * cell(z, z)
                 - xi[a, z] * cell(a, z) - xi[z, a] * cell(z, a))


def _s_from_gammas(g1: float, g2: float, cfg: IntensityConfig) -> float:
    m1, m2, m3 = cfg.intensities
    num = (m1 ** 2 - m3 ** 2) * (m1 - m3) * g2 - (m2 ** 2 - m3 ** 2) * (m2 - m3) * g1
    den = (m1 - m3) ** 2 * (m2 - m3) ** 2 * (m1 - m2)
    return num / den


_CELLS_1 = ((0, 0), (2, 2), (0, 2), (2, 0))
_CELLS_2 = ((1, 1), (2, 2), (1, 2), (2, 1))


def gamma1(counts: CountTable, cfg: IntensityConfig, nu: float, fluctuation: str = "total") -> float:
    xi = xi_matrix(cfg)
    return float(_combo(counts, xi, 0, "n") + _fluct(counts, _CELLS_1, xi, nu, "n", fluctuation))


def gamma2(counts: CountTable, cfg: IntensityConfig, nu: float, fluctuation: str = "total") -> float:
    xi = xi_matrix(cfg)
    return float(_combo(counts, xi, 1, "n") - _fluct(counts, _CELLS_2, xi, nu, "n", fluctuation))


def gamma3(counts: CountTable, cfg: IntensityConfig, nu: float, fluctuation: str = "total") -> float:
    xi = xi_matrix(cfg)
    return float(_combo(counts, xi, 1, "m") + _fluct(counts, _CELLS_2, xi, nu, "m", fluctuation))


def estimate_s11_lb(counts: CountTable, cfg: IntensityConfig, nu: float, *,
                    fluctuation: str = "total", tau_correction: bool = True) -> tuple[int, float, float]:
    """Lower bound on s11 as (s_lb, gamma1, gamma2); negative bounds are clamped to 0."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    g1 = gamma1(counts, cfg, nu, fluctuation)
    g2 = gamma2(counts, cfg, nu, fluctuation)
    raw = _s_from_gammas(g1, g2, cfg)
    if tau_correction:
        raw *= tau_kl(1, 1, cfg)
    return max(0, math.floor(raw)), g1, g2


def estimate_r11_ub(counts: CountTable, s_lb: int, cfg: IntensityConfig, nu: float, *,
                    fluctuation: str = "total", tau_correction: bool = True) -> tuple[int, float]:
    """Upper bound on r11 as (r_ub, gamma3), capped at ceil(s_lb / 2)."""
    if nu <= 0:
        raise ValueError("nu must be positive")
    g3 = gamma3(counts, cfg, nu, fluctuation)
    _, m2, m3 = cfg.intensities
    raw = g3 / (m2 - m3) ** 2
    if tau_correction:
        raw *= tau_kl(1, 1, cfg)
    return min(math.ceil(raw), math.ceil(s_lb / 2)), g3


def decoy_failure_probs(nu: float) -> tuple[float, float]:
    """(eps1, eps2): chance that any of the 7 or 4 Hoeffding intervals fails."""
    return decoy_failure(nu, 7), decoy_failure(nu, 4)


def estimate(counts: CountTable, cfg: IntensityConfig, nu: float, *,
             fluctuation: str = "total", tau_correction: bool = True) -> DecoyEstimate:
    s_lb, g1, g2 = estimate_s11_lb(counts, cfg, nu, fluctuation=fluctuation, tau_correction=tau_correction)
    r_ub, g3 = estimate_r11_ub(counts, s_lb, cfg, nu, fluctuation=fluctuation, tau_correction=tau_correction)
    eps1, eps2 = decoy_failure_probs(nu)
    ratio = r_ub / s_lb if s_lb > 0 else math.inf
    return DecoyEstimate(s_lb, r_ub, ratio, eps1, eps2, g1, g2, g3)


# -- expected-value forms ----------------------------------------------------------------------

def expected_s11_lb(counts: CountTable, cfg: IntensityConfig, *, tau_correction: bool = True) -> float:
    """Fluctuation-free lower bound on s11 from expected counts (no rounding, no clamp)."""
    xi = xi_matrix(cfg)
    raw = _s_from_gammas(_combo(counts, xi, 0, "n"), _combo(counts, xi, 1, "n"), cfg)
    return raw * tau_kl(1, 1, cfg) if tau_correction else raw


def expected_r11_ub(counts: CountTable, cfg: IntensityConfig, *, tau_correction: bool = True) -> float:
    """Fluctuation-free upper bound on r11 from expected error counts."""
    xi = xi_matrix(cfg)
    _, m2, m3 = cfg.intensities
    raw = _combo(counts, xi, 1, "m") / (m2 - m3) ** 2
    return raw * tau_kl(1, 1, cfg) if tau_correction else raw


def posterior_table(cfg: IntensityConfig, cutoff: int) -> np.ndarray:
    """P[u, v, k, l] = p_{u,v|k,l} for k, l <= cutoff."""
    k = np.arange(cutoff + 1)
    w = _joint_weights(k[:, None], k[None, :], cfg)  # (k, l, u, v)
    return np.moveaxis(w / w.sum(axis=(-1, -2), keepdims=True), (2, 3), (0, 1))


def expected_counts(truth: PhotonTruth, cfg: IntensityConfig) -> CountTable:
    """Expected n_obs and m_obs given photon-number ground truth."""
    post = posterior_table(cfg, truth.cutoff)
    n = np.einsum("uvkl,kl->uv", post, truth.s.astype(float))
    m = np.einsum("uvkl,kl->uv", post, truth.r.astype(float))
    return CountTable(n, np.minimum(m, n))
