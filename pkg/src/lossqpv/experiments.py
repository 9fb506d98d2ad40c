"""Monte Carlo protocol runs, the expected-statistics loss curves, cutoff search
and attack benchmarking.

Every random stream is derived from one master seed through
``derive_rng(seed, module, index)``, so results do not depend on how tasks
are split across workers.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .bounds import (
    INCONCLUSIVE,
    AttackStrategy,
    SoundnessInput,
    locc_mixed_strategy,
    locc_xbasis_strategy,
    locc_ybasis_strategy,
    soundness_decoy,
    soundness_qubit,
)
from .decoy import CountTable, IntensityConfig, PhotonTruth, estimate, poisson_pmf
from .geometry import Geometry
from .optics import ChannelModel, fock_outcome_table, gain_error_table
from .protocol import ProtocolParams, Responder, STATES, run_qubit_protocol, verdict_decoy

THRESHOLD = 0.25


# -- seeding and parallel map -------------------------------------------------------------

def derive_rng(seed: int, module: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(module.encode()), index]))


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- reports ---------------------------------------------------------------------------------

@dataclass
class Estimate:
    value: float
    n: int
    stderr: float

    @classmethod
    def proportion(cls, hits: int, n: int) -> "Estimate":
        p = hits / n if n else math.nan
        return cls(p, n, math.sqrt(p * (1 - p) / n) if n else math.nan)


@dataclass
class ExperimentReport:
    config: dict
    verdicts: dict
    aggregates: dict
    soundness: dict
    outputs: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=_json_default))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "value"):
        return o.value
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _tally(verdicts) -> dict:
    out: dict = {}
    for v in verdicts:
        out[v.reason.value] = out.get(v.reason.value, 0) + 1
    return out


# -- qubit protocol ------------------------------------------------------------------------------

def _qubit_trial(args):
    params, responder, geometry, seed, i = args
    verdict, batch = run_qubit_protocol(params, responder, geometry,
                                        derive_rng(seed, "qubit-verifier", i),
                                        derive_rng(seed, "qubit-responder", i))
    z = batch.z_v1
    conclusive = z != INCONCLUSIVE
    errors = conclusive & (z != (batch.x ^ batch.y))
    return verdict, int(conclusive.sum()), int(errors.sum())


def run_qubit_mc(params: ProtocolParams, responder: Responder, trials: int, seed: int,
                 geometry: Geometry = Geometry(), workers: int = 1) -> ExperimentReport:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    results = _pmap(_qubit_trial, [(params, responder, geometry, seed, i) for i in range(trials)], workers)
    verdicts = [r[0] for r in results]
    detected = sum(r[1] for r in results)
    errors = sum(r[2] for r in results)
    accepted = sum(v.accepted for v in verdicts)
    error_rate = Estimate.proportion(errors, detected)
    return ExperimentReport(
        config={"mode": "qubit", "m": params.m, "n_th": params.n_th, "delta_th": params.delta_th,
                "responder": getattr(responder, "name", type(responder).__name__), "trials": trials, "seed": seed},
        verdicts=_tally(verdicts),
        aggregates={
            "acceptance": Estimate.proportion(accepted, trials),
            "detection_rate": Estimate.proportion(detected, trials * params.m),
            "error_rate": error_rate,
            "guessing_probability": Estimate(1 - error_rate.value, error_rate.n, error_rate.stderr),
        },
        soundness={"eps_qubit": soundness_qubit(SoundnessInput(params.n_th, params.delta_th))},
    )


# -- decoy protocol ------------------------------------------------------------------------------

def decoy_cell_probabilities(channel: ChannelModel, cfg: IntensityConfig, cutoff: int) -> np.ndarray:
    """P[u, v, k, l, c] for one round, c = (correct, error, inconclusive).

    Photon numbers run to ``cutoff``; pairs with k + l above it, and the
    Poisson mass beyond ``cutoff`` on either side, are inconclusive.
    """
    table = fock_outcome_table(channel, cutoff)  # (k, l, b, x, y, z)
    parity = np.array([[0, 1], [1, 0]])
    correct = np.zeros(table.shape[:2])
    wrong = np.zeros(table.shape[:2])
    for x in (0, 1):
        for y in (0, 1):
            p = parity[x, y]
            correct += table[:, :, :, x, y, p].sum(axis=2) / 8.0
            wrong += table[:, :, :, x, y, 1 - p].sum(axis=2) / 8.0
    mus, ps = cfg.intensities, cfg.probabilities
    n = np.arange(cutoff + 1)
    pk = poisson_pmf(mus[:, None], n[None, :])  # (u, k)
    weight = np.einsum("u,v,uk,vl->uvkl", ps, ps, pk, pk)
    cells = np.zeros(weight.shape + (3,))
    cells[..., 0] = weight * correct
    cells[..., 1] = weight * wrong
    cells[..., 2] = weight * (1.0 - correct - wrong)
    overflow = (ps[:, None] * ps[None, :]) - weight.sum(axis=(2, 3))
    cells[:, :, 0, 0, 2] += np.clip(overflow, 0.0, None)
    return cells


def _tables_from_cells(counts: np.ndarray) -> tuple[CountTable, PhotonTruth]:
    """counts[u, v, k, l, c] -> observed table and photon-number truth."""
    n_obs = counts[..., 0].sum(axis=(2, 3)) + counts[..., 1].sum(axis=(2, 3))
    m_obs = counts[..., 1].sum(axis=(2, 3))
    s = counts[..., 0].sum(axis=(0, 1)) + counts[..., 1].sum(axis=(0, 1))
    r = counts[..., 1].sum(axis=(0, 1))
    return CountTable(n_obs, m_obs), PhotonTruth(s, r)


def sample_decoy_aggregate(m: int, cells: np.ndarray, rng: np.random.Generator):
    """Draw the tallies of ``m`` independent rounds in one multinomial step.

    Rounds are i.i.d., so the joint tally over (u, v, k, l, outcome class) is
    exactly multinomial; this matches per-round sampling in distribution.
    """
    p = cells.ravel()
    counts = rng.multinomial(m, p / p.sum()).reshape(cells.shape)
    return _tables_from_cells(counts)


def sample_decoy_rounds(m: int, channel: ChannelModel, cfg: IntensityConfig, rng: np.random.Generator,
                        cutoff: int | None = None, chunk: int = 1 << 20):
    """Round-by-round sampler: intensities, photon numbers, bits and BSM outcomes."""
    cutoff = cfg.photon_cutoff() if cutoff is None else cutoff
    # flatten (k, l, b, x, y) so one fancy index fetches each round's outcome distribution
    cum = np.cumsum(fock_outcome_table(channel, cutoff), axis=-1).reshape(-1, 3)
    mus, cum_p = cfg.intensities, np.cumsum(cfg.probabilities)
    side = cutoff + 1
    shape = (3, 3, side, side, 3)
    counts = np.zeros(int(np.prod(shape)), dtype=np.int64)
    done = 0
    while done < m:
        size = min(chunk, m - done)
        u = np.minimum(np.searchsorted(cum_p, rng.random(size), side="right"), 2)
        v = np.minimum(np.searchsorted(cum_p, rng.random(size), side="right"), 2)
        k = rng.poisson(mus[u])
        l = rng.poisson(mus[v])
        bxy = rng.integers(0, 8, size=size)  # b, x, y packed as 4b + 2x + y
        x, y = (bxy >> 1) & 1, bxy & 1
        kept = k + l <= cutoff
        # overflow rounds are inconclusive and tallied under (0, 0)
        k = np.where(kept, k, 0)
        l = np.where(kept, l, 0)
        row = cum[(k * side + l) * 8 + bxy]
        draw = rng.random(size)
        z = (draw >= row[:, 0]).astype(np.int64) + (draw >= row[:, 1])
        z = np.where(kept, z, INCONCLUSIVE)
        cls = np.where(z == INCONCLUSIVE, 2, np.where(z == (x ^ y), 0, 1))
        flat = (((u * 3 + v) * side + k) * side + l) * 3 + cls
        counts += np.bincount(flat, minlength=counts.size)
        done += size
    return _tables_from_cells(counts.reshape(shape))


def _decoy_trial(args):
    params, channel, cfg, nu, seed, i, cells, cutoff, estimator_kw = args
    rng = derive_rng(seed, "decoy", i)
    if cells is not None:
        counts, truth = sample_decoy_aggregate(params.m, cells, rng)
    else:
        counts, truth = sample_decoy_rounds(params.m, channel, cfg, rng, cutoff)
    est = estimate(counts, cfg, nu, **estimator_kw)
    verdict = verdict_decoy(counts, replace(params, decoy_cfg=cfg), nu, **estimator_kw)
    return verdict, est.s_lb, est.r_ub, int(truth.s11), int(truth.r11)


def run_decoy_mc(params: ProtocolParams, channel: ChannelModel, cfg: IntensityConfig, nu: float,
                 trials: int, seed: int, sampler: str = "aggregate", workers: int = 1,
                 **estimator_kw) -> ExperimentReport:
    """Repeated decoy-protocol runs with photon-number ground truth.

    Reports how often s_lb <= s11 and r11 <= r_ub alongside the verdicts.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if sampler not in ("aggregate", "rounds"):
        raise ValueError(f"unknown sampler {sampler!r}")
    cutoff = cfg.photon_cutoff()
    cells = decoy_cell_probabilities(channel, cfg, cutoff) if sampler == "aggregate" else None
    tasks = [(params, channel, cfg, nu, seed, i, cells, cutoff, estimator_kw) for i in range(trials)]
    rows = _pmap(_decoy_trial, tasks, workers)
    verdicts = [r[0] for r in rows]
    s_lb = np.array([r[1] for r in rows])
    r_ub = np.array([r[2] for r in rows])
    s11 = np.array([r[3] for r in rows])
    r11 = np.array([r[4] for r in rows])
    eps_decoy, eps1, eps2 = soundness_decoy(SoundnessInput(params.n_th, params.delta_th, nu))
    return ExperimentReport(
        config={"mode": "decoy", "m": params.m, "n_th": params.n_th, "delta_th": params.delta_th, "nu": nu,
                "channel": asdict(channel), "intensities": asdict(cfg), "photon_cutoff": cutoff,
                "sampler": sampler, "trials": trials, "seed": seed, **estimator_kw},
        verdicts=_tally(verdicts),
        aggregates={
            "acceptance": Estimate.proportion(sum(v.accepted for v in verdicts), trials),
            "s_coverage": Estimate.proportion(int(np.sum(s_lb <= s11)), trials),
            "r_coverage": Estimate.proportion(int(np.sum(r11 <= r_ub)), trials),
            "mean_s_lb": Estimate(float(s_lb.mean()), trials, float(s_lb.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan),
            "mean_s11": Estimate(float(s11.mean()), trials, float(s11.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan),
        },
        soundness={"eps_decoy": eps_decoy, "eps1": eps1, "eps2": eps2},
        details={"s_lb": s_lb.tolist(), "r_ub": r_ub.tolist(), "s11": s11.tolist(), "r11": r11.tolist()},
    )


# -- expected-statistics curves ---------------------------------------------------------------------

@dataclass(frozen=True)
class Figure3Point:
    """One point of an error-ratio-versus-loss curve; ratio is inf when s_lb = 0."""
    loss_db: float
    ratio: float
    s_lb: int
    r_ub: int
    N: float

    @property
    def defined(self) -> bool:
        return self.s_lb > 0


def channel_at_loss(template: ChannelModel, loss_db: float) -> ChannelModel:
    return ChannelModel.from_overall_loss(
        loss_db,
        misalignment_error=template.misalignment_error,
        detector_efficiency=template.detector_efficiency,
        dark_count_prob=template.dark_count_prob,
    )


def expected_count_table(N: float, channel: ChannelModel, cfg: IntensityConfig, rounded: bool = True) -> CountTable:
    """Expected n_obs = N p_u p_v Q and m_obs = N p_u p_v Q E, rounded half to even."""
    Q, E = gain_error_table(cfg.intensities, channel)
    weight = N * np.outer(cfg.probabilities, cfg.probabilities)
    n = weight * Q
    m = weight * Q * E
    if rounded:
        n, m = np.rint(n), np.rint(m)
    return CountTable(n, np.minimum(m, n))


def figure3_point(N: float, loss_db: float, channel: ChannelModel, cfg: IntensityConfig, nu: float,
                  **estimator_kw) -> Figure3Point:
    counts = expected_count_table(N, channel_at_loss(channel, loss_db), cfg)
    est = estimate(counts, cfg, nu, **estimator_kw)
    return Figure3Point(float(loss_db), est.ratio, est.s_lb, est.r_ub, N)


def _point_task(args):
    return figure3_point(*args[:5], **args[5])


def figure3_curve(N: float, channel: ChannelModel, cfg: IntensityConfig, nu: float,
                  loss_grid_db: Iterable[float], workers: int = 1, **estimator_kw) -> list[Figure3Point]:
    """Deterministic ratio-versus-loss curve; losses below the BSM's own loss are skipped."""
    floor = channel.bsm_loss_db
    grid = [float(x) for x in loss_grid_db if x >= floor - 1e-12]
    return _pmap(_point_task, [(N, L, channel, cfg, nu, estimator_kw) for L in grid], workers)


def default_loss_grid(channel: ChannelModel, stop: float = 70.0, step: float = 0.5) -> np.ndarray:
    start = channel.bsm_loss_db
    return np.concatenate([[start], np.arange(math.ceil(start / step) * step, stop + 1e-9, step)])


def _ratio_for_crossing(p: Figure3Point) -> float:
    # an undefined ratio means the quota has collapsed; r_ub <= ceil(s_lb / 2) keeps
    # defined ratios near or below 1/2, so 1/2 stands in for it when interpolating
    return p.ratio if math.isfinite(p.ratio) else 0.5


def upward_crossings(points: Sequence[Figure3Point], threshold: float = THRESHOLD) -> list[float]:
    out = []
    for a, b in zip(points, points[1:]):
        ra, rb = _ratio_for_crossing(a), _ratio_for_crossing(b)
        if ra <= threshold < rb:
            out.append(a.loss_db + (threshold - ra) * (b.loss_db - a.loss_db) / (rb - ra))
    return out


def find_cutoff(points: Sequence[Figure3Point], threshold: float = THRESHOLD) -> float | None:
    """Loss at the first upward crossing of ``threshold``, linearly interpolated."""
    crossings = upward_crossings(points, threshold)
    if not crossings:
        return None
    if len(crossings) > 1:
        warnings.warn(f"ratio crosses {threshold} upward {len(crossings)} times at {crossings}", stacklevel=2)
    return crossings[0]


def cutoff_loss(N: float, channel: ChannelModel, cfg: IntensityConfig, nu: float,
                hi: float = 90.0, tol: float = 1e-3, **estimator_kw) -> float | None:
    """Bisect for the loss where the ratio first exceeds 1/4, assuming one crossing."""
    def above(L):
        return _ratio_for_crossing(figure3_point(N, L, channel, cfg, nu, **estimator_kw)) > THRESHOLD

    lo = channel.bsm_loss_db
    if above(lo):
        return lo
    if not above(hi):
        return None
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if above(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class IntensitySearch:
    best: IntensityConfig
    cutoff_db: float
    table: list  # (mu1, mu2, mu3, cutoff) for every feasible grid point


def _search_task(args):
    N, channel, nu, mus, probs = args
    cfg = IntensityConfig(*mus, *probs)
    c = cutoff_loss(N, channel, cfg, nu, tol=0.01)
    return (*mus, -math.inf if c is None else c)


def search_intensities(N: float, channel: ChannelModel, nu: float,
                       mu1_grid=np.arange(0.1, 0.6001, 0.05), mu2_grid=np.arange(0.01, 0.2001, 0.01),
                       mu3_grid=(0.0, 0.001, 0.002), probs=(0.5, 0.25, 0.25),
                       workers: int = 1) -> IntensitySearch:
    """Grid search of (mu1, mu2, mu3) for the largest cutoff, selection probabilities fixed."""
    grid = [(a, b, c) for a, b, c in (
        (round(float(a), 6), round(float(b), 6), round(float(c), 6))
        for a in mu1_grid for b in mu2_grid for c in mu3_grid) if a > b + c and b > c]
    rows = _pmap(_search_task, [(N, channel, nu, g, tuple(probs)) for g in grid], workers)
    best = max(rows, key=lambda r: (r[3], -r[0], -r[1], -r[2]))
    return IntensitySearch(IntensityConfig(*best[:3], *probs), best[3], rows)


# -- attack benchmark ------------------------------------------------------------------------------

@dataclass
class AttackBenchRow:
    strategy: str
    eta: float
    rounds: int
    conclusive: int
    correct: int

    @property
    def detection(self) -> Estimate:
        return Estimate.proportion(self.conclusive, self.rounds)

    @property
    def guess(self) -> Estimate:
        return Estimate.proportion(self.correct, self.conclusive)


STRATEGIES = {
    "x": locc_xbasis_strategy,
    "y": locc_ybasis_strategy,
    "mixed": locc_mixed_strategy,
}


def attack_rounds(strategy: AttackStrategy, rounds: int, rng: np.random.Generator,
                  responder_rng: np.random.Generator) -> AttackBenchRow:
    b, x, y = rng.integers(0, 2, size=(3, rounds))
    z, _ = strategy.respond(STATES[b, x], STATES[b, y], responder_rng)
    conclusive = z != INCONCLUSIVE
    correct = conclusive & (z == (x ^ y))
    return AttackBenchRow(strategy.name, strategy.eta, rounds, int(conclusive.sum()), int(correct.sum()))


def attack_bench(etas=(0.05, 0.5, 1.0), rounds: int = 10**6, seed: int = 0,
                 strategies: Sequence[str] = ("x", "y", "mixed")) -> list[AttackBenchRow]:
    rows = []
    for si, name in enumerate(strategies):
        for ei, eta in enumerate(etas):
            idx = si * len(etas) + ei
            rows.append(attack_rounds(STRATEGIES[name](eta), rounds,
                                      derive_rng(seed, "attack-verifier", idx),
                                      derive_rng(seed, "attack-responder", idx)))
    return rows


# -- output files ---------------------------------------------------------------------------------

def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _config_lines(config: dict) -> str:
    return f"# config: {canonical_json(config)}\n"


def curve_csv(points: Sequence[Figure3Point], config: dict) -> str:
    buf = io.StringIO()
    buf.write(_config_lines(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["loss_db", "ratio", "s_lb", "r_ub", "N"])
    for p in points:
        w.writerow([repr(p.loss_db), repr(p.ratio), p.s_lb, p.r_ub, repr(float(p.N))])
    return buf.getvalue()


def rows_csv(header: Sequence[str], rows: Iterable[Sequence], config: dict) -> str:
    buf = io.StringIO()
    buf.write(_config_lines(config))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(x) if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def read_curve_csv(text: str) -> list[Figure3Point]:
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    reader = csv.DictReader(lines)
    return [Figure3Point(float(r["loss_db"]), float(r["ratio"]), int(r["s_lb"]), int(r["r_ub"]), float(r["N"]))
            for r in reader]


def write_manifest(path, command: str, config: dict, outputs: Sequence) -> dict:
    manifest = {
        "command": command,
        "config": config,
        "config_hash": sha256_text(canonical_json(config)),
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return manifest
