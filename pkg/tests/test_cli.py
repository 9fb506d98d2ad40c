import json
import subprocess
import sys

import pytest

from lossqpv.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, EXIT_RUNTIME, RunConfig, main

FAST_CURVE = ["--N", "1e11,1e12", "--set", "loss_step=5", "--set", "loss_max=60"]


def run(args):
    return main([str(a) for a in args])


class TestCommands:
    def test_bounds(self, tmp_path, capsys):
        assert run(["bounds", "--eta", "1.0", "--out", tmp_path]) == EXIT_OK
        payload = json.loads((tmp_path / "bounds.json").read_text())
        cert = payload["certificate"]
        assert cert["primal_feasible"] and cert["dual_feasible"] and cert["violations"] == []
        assert cert["primal_value"] == pytest.approx(0.75, abs=1e-12)
        assert payload["helstrom"] == pytest.approx(0.75)
        assert json.loads(capsys.readouterr().out) == payload
        assert (tmp_path / "manifest.json").exists()

    def test_simulate_qubit(self, tmp_path):
        assert run(["simulate-qubit", "--trials", 5, "--out", tmp_path, "--set", "m=2000", "--set", "n_th=800"]) == EXIT_OK
        rep = json.loads((tmp_path / "qubit_report.json").read_text())
        assert rep["verdicts"] == {"accept": 5}

    def test_simulate_decoy(self, tmp_path):
        assert run(["simulate-decoy", "--trials", 4, "--nu", 2, "--loss-db", 10, "--out", tmp_path,
                    "--set", "m=1000000000", "--set", "n_th=10"]) == EXIT_OK
        lines = (tmp_path / "decoy_trials.csv").read_text().splitlines()
        assert lines[0].startswith("# config: ") and lines[1] == "trial,s_lb,s11,r_ub,r11"
        assert len(lines) == 6

    def test_attack_bench(self, tmp_path):
        assert run(["attack-bench", "--out", tmp_path, "--set", "rounds=20000"]) == EXIT_OK
        assert len((tmp_path / "attack_bench.csv").read_text().splitlines()) == 2 + 9

    def test_figure3_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["figure3", "--out", a, *FAST_CURVE]) == EXIT_OK
        assert run(["figure3", "--out", b, *FAST_CURVE, "--workers", 2]) == EXIT_OK
        assert (a / "figure3.csv").read_bytes() == (b / "figure3.csv").read_bytes()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "lossqpv", "bounds", "--out", str(tmp_path)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr


class TestErrors:
    def test_bad_field_value(self, tmp_path, capsys):
        assert run(["simulate-qubit", "--out", tmp_path, "--set", "delta_th=0.3"]) == EXIT_CONFIG
        assert "delta_th" in capsys.readouterr().err

    def test_unknown_field(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"mu4": 0.1}))
        assert run(["figure3", "--config", cfg, "--out", tmp_path]) == EXIT_CONFIG
        assert "mu4" in capsys.readouterr().err

    def test_physics_invariant(self, tmp_path, capsys):
        assert run(["figure3", "--out", tmp_path, "--set", "mu2=0.5"]) == EXIT_CONFIG
        assert "intensities" in capsys.readouterr().err

    def test_zero_eta_bounds(self, tmp_path, capsys):
        assert run(["bounds", "--eta", 0, "--out", tmp_path]) == EXIT_CONFIG
        assert "eta" in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text("{not json")
        assert run(["bounds", "--config", cfg, "--out", tmp_path]) == EXIT_CONFIG

    def test_unwritable_output(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run(["bounds", "--out", blocker / "sub"]) == EXIT_RUNTIME


class TestConfig:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"seed": 5, "nu": 3, "trials": 2}))
        out = tmp_path / "o"
        assert run(["bounds", "--config", cfg, "--seed", 7, "--set", "trials=4", "--out", out]) == EXIT_OK
        echoed = json.loads((out / "bounds.json").read_text())["config"]
        assert (echoed["seed"], echoed["nu"], echoed["trials"]) == (7, 3.0, 4)

    def test_defaults(self):
        cfg = RunConfig.build("figure3")
        assert cfg.N == [1e10, 1e11, 1e12, 1e13]
        assert (cfg.det_eff, cfg.dark_count, cfg.misalignment) == (0.64, 2.5e-6, 1e-3)

    def test_echo_drops_location(self):
        assert "out" not in RunConfig.build("bounds", overrides={"out": "x"}).echo()


class TestReplay:
    def test_round_trip(self, tmp_path):
        out = tmp_path / "run"
        assert run(["figure3", "--out", out, *FAST_CURVE]) == EXIT_OK
        assert run(["replay", out / "manifest.json"]) == EXIT_OK

    def test_tampered(self, tmp_path):
        out = tmp_path / "run"
        assert run(["attack-bench", "--out", out, "--set", "rounds=1000"]) == EXIT_OK
        man = json.loads((out / "manifest.json").read_text())
        man["config"]["seed"] = 99
        (out / "manifest.json").write_text(json.dumps(man))
        assert run(["replay", out / "manifest.json"]) == EXIT_MISMATCH
