"""Command-line entry point.

Settings come from built-in defaults, then an optional flat JSON file
(``--config``), then command-line flags; later sources win. Every command
writes its data files plus ``manifest.json`` into ``--out``; ``replay``
re-runs a manifest and checks that the outputs hash identically.

Exit status: 0 success, 1 replay mismatch, 2 configuration error,
3 runtime or I/O failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .bounds import (
    SoundnessInput,
    helstrom_guess,
    soundness_decoy,
    soundness_qubit,
    verify_ppt_certificates,
)
from .decoy import IntensityConfig
from .experiments import (
    STRATEGIES,
    attack_bench,
    channel_at_loss,
    curve_csv,
    default_loss_grid,
    figure3_curve,
    find_cutoff,
    rows_csv,
    run_decoy_mc,
    run_qubit_mc,
    search_intensities,
    sha256_file,
    write_manifest,
)
from .geometry import Geometry
from .optics import ChannelModel
from .protocol import HonestProver, ProtocolParams
from .qcore import parity_mixtures

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
COMMANDS = ("bounds", "simulate-qubit", "simulate-decoy", "figure3", "attack-bench")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"config field '{key}': {message}")
        self.key = key


@dataclass
class RunConfig:
    mode: str = "bounds"
    seed: int = 0
    out: str = "out"
    workers: int = 1
    # geometry
    pos_v1: float = -1.0
    pos_v2: float = 1.0
    pos_claimed: float = 0.0
    # channel
    misalignment: float = 1e-3
    det_eff: float = 0.64
    dark_count: float = 2.5e-6
    loss_db: float = 10.0
    # intensities
    mu1: float = 0.3
    mu2: float = 0.1
    mu3: float = 0.001
    p_mu1: float = 0.5
    p_mu2: float = 0.25
    p_mu3: float = 0.25
    search_intensities: bool = False
    # protocol
    m: int = 10_000
    n_th: int = 4_000
    delta_th: float = 0.01
    nu: float = 10.0
    trials: int = 100
    responder: str = "honest"
    eta: float = 1.0
    sampler: str = "aggregate"
    tau_correction: bool = True
    fluctuation: str = "total"
    # curves and benchmarks
    N: list = field(default_factory=lambda: [1e10, 1e11, 1e12, 1e13])
    loss_max: float = 70.0
    loss_step: float = 0.5
    rounds: int = 1_000_000
    etas: list = field(default_factory=lambda: [0.05, 0.5, 1.0])

    @classmethod
    def build(cls, mode: str, file_values: dict | None = None, overrides: dict | None = None) -> "RunConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        for source in (file_values or {}, overrides or {}):
            for key, raw in source.items():
                if key not in known:
                    raise ConfigError(key, "unknown field")
                values[key] = _coerce(key, raw, getattr(cls(), key))
        values["mode"] = mode
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.mode not in COMMANDS:
            raise ConfigError("mode", f"must be one of {COMMANDS}")
        for key in ("workers", "trials", "m", "n_th", "rounds"):
            if getattr(self, key) < 1:
                raise ConfigError(key, "must be at least 1")
        if self.n_th > self.m:
            raise ConfigError("n_th", "must not exceed m")
        if not 0 <= self.delta_th < 0.25:
            raise ConfigError("delta_th", "must lie in [0, 1/4)")
        if not self.nu > 0:
            raise ConfigError("nu", "must be positive")
        if not 0 <= self.eta <= 1 or (self.mode == "bounds" and self.eta == 0):
            raise ConfigError("eta", "must lie in [0, 1], and be positive for bounds")
        if self.responder not in ("honest", *STRATEGIES):
            raise ConfigError("responder", f"must be 'honest' or one of {sorted(STRATEGIES)}")
        if self.sampler not in ("aggregate", "rounds"):
            raise ConfigError("sampler", "must be 'aggregate' or 'rounds'")
        if self.fluctuation not in ("total", "cell"):
            raise ConfigError("fluctuation", "must be 'total' or 'cell'")
        if not self.N or any(n <= 0 for n in self.N):
            raise ConfigError("N", "must be a non-empty list of positive numbers")
        if self.loss_step <= 0:
            raise ConfigError("loss_step", "must be positive")
        if any(not 0 <= e <= 1 for e in self.etas):
            raise ConfigError("etas", "entries must lie in [0, 1]")
        # delegate the physics invariants to the owning types
        for key, build in (("geometry", self.geometry), ("channel", self.channel),
                           ("intensities", self.intensities)):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(key, str(exc)) from None

    def geometry(self) -> Geometry:
        return Geometry(self.pos_v1, self.pos_v2, self.pos_claimed)

    def channel(self) -> ChannelModel:
        return ChannelModel(misalignment_error=self.misalignment, detector_efficiency=self.det_eff,
                            dark_count_prob=self.dark_count)

    def intensities(self) -> IntensityConfig:
        return IntensityConfig(self.mu1, self.mu2, self.mu3, self.p_mu1, self.p_mu2, self.p_mu3)

    def params(self) -> ProtocolParams:
        return ProtocolParams(self.m, self.n_th, self.delta_th)

    def echo(self) -> dict:
        """Settings that determine the results; output location and worker count do not."""
        d = dataclasses.asdict(self)
        del d["out"], d["workers"]
        return d


def _coerce(key: str, raw, default):
    try:
        if isinstance(default, bool):
            if isinstance(raw, str):
                if raw.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(raw)
                return raw.lower() in ("true", "1")
            return bool(raw)
        if isinstance(default, int):
            value = float(raw)
            if not value.is_integer():
                raise ValueError(raw)
            return int(value)
        if isinstance(default, float):
            value = float(raw)
            if not math.isfinite(value):
                raise ValueError(raw)
            return value
        if isinstance(default, list):
            items = raw.split(",") if isinstance(raw, str) else (raw if isinstance(raw, list) else [raw])
            return [float(x) for x in items]
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(key, f"cannot interpret {raw!r} as {type(default).__name__}") from None


# -- commands ----------------------------------------------------------------------------------

def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    return path


def cmd_bounds(cfg: RunConfig, out: Path) -> list[Path]:
    rho0, rho1 = parity_mixtures()
    report = verify_ppt_certificates(cfg.eta).as_dict()
    eps_decoy, eps1, eps2 = soundness_decoy(SoundnessInput(cfg.n_th, cfg.delta_th, cfg.nu))
    payload = {
        "config": cfg.echo(),
        "certificate": report,
        "helstrom": helstrom_guess(rho0, rho1),
        "eps_qubit": soundness_qubit(SoundnessInput(cfg.n_th, cfg.delta_th, cfg.nu)),
        "eps_decoy": eps_decoy, "eps1": eps1, "eps2": eps2,
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    print(text, end="")
    return [_write(out, "bounds.json", text)]


def _responder(cfg: RunConfig):
    if cfg.responder == "honest":
        return HonestProver()
    return STRATEGIES[cfg.responder](cfg.eta)


def cmd_simulate_qubit(cfg: RunConfig, out: Path) -> list[Path]:
    report = run_qubit_mc(cfg.params(), _responder(cfg), cfg.trials, cfg.seed, cfg.geometry(), cfg.workers)
    report.config = cfg.echo()
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    agg = report.aggregates
    print(f"acceptance {agg['acceptance'].value:.6g} +/- {agg['acceptance'].stderr:.2g} over {cfg.trials} runs; "
          f"eps_qubit {report.soundness['eps_qubit']:.3e}")
    return [_write(out, "qubit_report.json", text)]


def cmd_simulate_decoy(cfg: RunConfig, out: Path) -> list[Path]:
    channel = channel_at_loss(cfg.channel(), cfg.loss_db)
    report = run_decoy_mc(cfg.params(), channel, cfg.intensities(), cfg.nu, cfg.trials, cfg.seed,
                          sampler=cfg.sampler, workers=cfg.workers,
                          tau_correction=cfg.tau_correction, fluctuation=cfg.fluctuation)
    d = report.details
    rows = zip(range(cfg.trials), d["s_lb"], d["s11"], d["r_ub"], d["r11"])
    csv_path = _write(out, "decoy_trials.csv", rows_csv(["trial", "s_lb", "s11", "r_ub", "r11"], rows, cfg.echo()))
    report.config = cfg.echo()
    json_path = _write(out, "decoy_report.json", json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n")
    agg = report.aggregates
    print(f"s coverage {agg['s_coverage'].value:.4f}, r coverage {agg['r_coverage'].value:.4f}, "
          f"acceptance {agg['acceptance'].value:.4f} over {cfg.trials} runs")
    return [csv_path, json_path]


def cmd_figure3(cfg: RunConfig, out: Path) -> list[Path]:
    channel = cfg.channel()
    intensities = cfg.intensities()
    summary = {"config": cfg.echo()}
    if cfg.search_intensities:
        found = search_intensities(max(cfg.N), channel, cfg.nu, workers=cfg.workers)
        intensities = found.best
        summary["searched_intensities"] = dataclasses.asdict(found.best)
    grid = default_loss_grid(channel, cfg.loss_max, cfg.loss_step)
    points, cutoffs = [], {}
    for N in cfg.N:
        curve = figure3_curve(N, channel, intensities, cfg.nu, grid, workers=cfg.workers,
                              tau_correction=cfg.tau_correction, fluctuation=cfg.fluctuation)
        points.extend(curve)
        cutoffs[f"{N:g}"] = find_cutoff(curve)
        start = curve[0].loss_db if curve else None
        print(f"N={N:g}: curve starts at {start:.3f} dB, cutoff "
              + ("none" if cutoffs[f'{N:g}'] is None else f"{cutoffs[f'{N:g}']:.2f} dB"))
    summary["cutoffs_db"] = cutoffs
    csv_path = _write(out, "figure3.csv", curve_csv(points, cfg.echo()))
    json_path = _write(out, "figure3_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return [csv_path, json_path]


def cmd_attack_bench(cfg: RunConfig, out: Path) -> list[Path]:
    rows = attack_bench(tuple(cfg.etas), cfg.rounds, cfg.seed)
    table = []
    for r in rows:
        g, d = r.guess, r.detection
        table.append([r.strategy, r.eta, r.rounds, r.conclusive, d.value, g.value, g.stderr, (g.value - 0.75) / g.stderr])
        print(f"{r.strategy:>8} eta={r.eta:<5g} detection {d.value:.4f} guess {g.value:.5f} +/- {g.stderr:.5f}")
    header = ["strategy", "eta", "rounds", "conclusive", "detection_rate", "guess", "guess_stderr", "z_vs_3/4"]
    return [_write(out, "attack_bench.csv", rows_csv(header, table, cfg.echo()))]


HANDLERS = {
    "bounds": cmd_bounds,
    "simulate-qubit": cmd_simulate_qubit,
    "simulate-decoy": cmd_simulate_decoy,
    "figure3": cmd_figure3,
    "attack-bench": cmd_attack_bench,
}


def execute(cfg: RunConfig) -> list[Path]:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    outputs = HANDLERS[cfg.mode](cfg, out)
    write_manifest(out / "manifest.json", cfg.mode, cfg.echo(), outputs)
    return outputs


def replay(manifest_path: Path, out: str | None) -> int:
    manifest = json.loads(Path(manifest_path).read_text())
    config = dict(manifest["config"])
    mode = config.pop("mode")
    with tempfile.TemporaryDirectory() as tmp:
        config["out"] = out or tmp
        cfg = RunConfig.build(mode, config)
        outputs = execute(cfg)
        fresh = {p.name: sha256_file(p) for p in outputs}
    ok = True
    for name, digest in manifest["outputs"].items():
        same = fresh.get(name) == digest
        ok &= same
        print(f"{'match' if same else 'MISMATCH'} {name}")
    return EXIT_OK if ok else EXIT_MISMATCH


# -- argument parsing --------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lossqpv", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat JSON file of settings")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--N", help="pulse count, or a comma-separated list")
        p.add_argument("--loss-db", dest="loss_db", type=float)
        p.add_argument("--nu", type=float)
        p.add_argument("--trials", type=int)
        p.add_argument("--eta", type=float)
        p.add_argument("--workers", type=int)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config field")
    rp = sub.add_parser("replay")
    rp.add_argument("manifest", type=Path)
    rp.add_argument("--out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out)
        file_values = {}
        if args.config is not None:
            try:
                file_values = json.loads(args.config.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError("--config", f"not valid JSON ({exc})") from None
            if not isinstance(file_values, dict):
                raise ConfigError("--config", "must hold a JSON object")
        overrides = {k: v for k, v in vars(args).items()
                     if k in ("seed", "out", "N", "loss_db", "nu", "trials", "eta", "workers") and v is not None}
        for item in args.set:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(item, "expected KEY=VALUE")
            overrides[key] = value
        cfg = RunConfig.build(args.command, file_values, overrides)
        execute(cfg)
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
