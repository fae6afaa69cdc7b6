"""Config schema, overrides, and the CLI contract (exit codes, goldens)."""
import json
from pathlib import Path

import pytest

from dosedesign.cli import main
from dosedesign.config import (
    ConfigError,
    apply_overrides,
    schema_help_text,
    validate_config,
    validate_session_config,
)

REPO = Path(__file__).parent.parent
CONFIGS = REPO / "configs"
DATA = Path(__file__).parent / "data"


def load(name):
    return json.loads((CONFIGS / name).read_text())


class TestValidation:
    def test_valid_configs_pass(self):
        for name in ("dsa_simulate.json", "crm_simulate.json"):
            validate_config(load(name))

    def test_osa_design_needs_biomarker_and_group(self):
        doc = {
            "design": {"kind": "virtual_observation", "b": 1.0, "t0": 3.2, "target_p": 0.2},
            "truth": {"kind": "tox_scenario", "probs": [0.1, 0.2, 0.3]},
            "trial": {"n_cohorts": 5, "m": 1},
        }
        with pytest.raises(ConfigError) as err:
            validate_config(doc)
        fields = [path for path, _ in err.value.errors]
        assert "trial.m" in fields
        assert "truth.kind" in fields

    def test_three_plus_three_m_enforced(self):
        doc = load("dsa_simulate.json")
        doc["design"] = {"kind": "three_plus_three"}
        with pytest.raises(ConfigError) as err:
            validate_config(doc)
        assert any(path == "trial.m" for path, _ in err.value.errors)

    def test_unknown_design_parameter_flagged(self):
        doc = load("dsa_simulate.json")
        doc["design"]["bogus"] = 1
        with pytest.raises(ConfigError) as err:
            validate_config(doc)
        assert any("bogus" in path or "bogus" in msg for path, msg in err.value.errors)

    def test_session_validation(self):
        doc = json.loads((CONFIGS / "session_dsa.json").read_text())
        validate_session_config(doc)
        doc["m"] = 1
        doc["design"]["kind"] = "virtual_observation"
        doc["design"]["t0"] = 3.0
        with pytest.raises(ConfigError):
            validate_session_config(doc)

    def test_overrides(self):
        doc = load("dsa_simulate.json")
        out = apply_overrides(doc, ["execution.reps=5", "design.b=0.4", "output.dir=elsewhere"])
        assert out["execution"]["reps"] == 5
        assert out["design"]["b"] == 0.4
        assert out["output"]["dir"] == "elsewhere"
        assert doc["execution"]["reps"] == 200  # original untouched

    def test_help_text_covers_every_config_key(self):
        text = schema_help_text()
        for key in ("design", "truth", "trial.n_cohorts", "trial.m", "trial.start_level",
                    "execution.reps", "execution.seed", "execution.threads",
                    "output.dir", "output.formats"):
            assert key in text
        for design_key in ("design.b", "design.target_p", "design.skeleton",
                           "design.prior_mean", "design.prior_sd", "design.t0"):
            assert design_key in text


class TestCliContract:
    def test_simulate_reproduces_golden_bit_exactly(self, tmp_path):
        code = main([
            "simulate", "--config", str(CONFIGS / "dsa_simulate.json"),
            "--out", str(tmp_path),
        ])
        assert code == 0
        got = (tmp_path / "report.json").read_bytes()
        want = (DATA / "golden_dsa_report.json").read_bytes()
        assert got == want
        assert (tmp_path / "report.csv").read_bytes() == (DATA / "golden_dsa_report.csv").read_bytes()

    def test_simulate_is_deterministic(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["simulate", "--config", str(CONFIGS / "dsa_simulate.json"),
                         "--out", str(out)]) == 0
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()

    def test_set_override_changes_result(self, tmp_path):
        code = main([
            "simulate", "--config", str(CONFIGS / "dsa_simulate.json"),
            "--out", str(tmp_path), "--set", "execution.reps=50",
        ])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["reps"] == 50

    def test_config_error_exit_and_diagnostics(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        doc = load("dsa_simulate.json")
        doc["design"] = {"kind": "virtual_observation", "b": 1.0, "t0": 3.0, "target_p": 0.2}
        doc["trial"]["m"] = 1
        bad.write_text(json.dumps(doc))
        code = main(["simulate", "--config", str(bad), "--out", str(tmp_path)])
        assert code == 2
        err = capsys.readouterr().err
        assert "trial.m" in err and "truth.kind" in err

    def test_missing_config_file_exits_2(self):
        assert main(["simulate", "--config", "/nonexistent.json"]) == 2

    def test_verify_coherence_passes(self, tmp_path):
        code = main([
            "verify", "coherence", "--config", str(CONFIGS / "verify_coherence_crm.json"),
            "--out", str(tmp_path),
        ])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["verdict"] == "pass" and report["property"] == "coherence"

    def test_verify_rigidity_dsa_fails_with_trap_witness(self, tmp_path):
        code = main([
            "verify", "rigidity", "--config", str(CONFIGS / "verify_rigidity_dsa.json"),
            "--out", str(tmp_path),
        ])
        assert code == 1
        witnesses = json.loads((tmp_path / "witnesses.json").read_text())
        assert witnesses["witnesses"][0]["label"] == "0,0 | 1,0"
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["statistics"]["freeze_index"] == 9

    def test_verify_unknown_property_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["verify", "nonsense", "--config", str(CONFIGS / "verify_coherence_crm.json")])
        assert exc.value.code == 2

    def test_asymptotics_curve(self, tmp_path):
        code = main([
            "asymptotics", "--config", str(CONFIGS / "asymptotics_m3.json"),
            "--out", str(tmp_path),
        ])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        m3 = report["curves"]["3"]
        assert m3["min_ratio"] == pytest.approx(1.238, abs=1e-3)
        assert min(abs(m3["argmin_p"] - 0.12), abs(m3["argmin_p"] - 0.88)) <= 0.005
        # symmetry of the emitted curve about p = 0.5
        ratio = m3["ratio"]
        assert ratio[(len(ratio) // 2) - 100] == pytest.approx(ratio[(len(ratio) // 2) + 100], rel=1e-9)
        assert (tmp_path / "report.csv").exists()

    def test_horizon_budget_exits_2(self, tmp_path, capsys):
        code = main([
            "verify", "coherence", "--config", str(CONFIGS / "verify_coherence_crm.json"),
            "--out", str(tmp_path), "--set", "check.n_cohorts=200",
        ])
        assert code == 2


class TestServeValidation:
    def test_state_dir_collision_exits_2(self, tmp_path, capsys):
        blocker = tmp_path / "not-a-dir"
        blocker.write_text("occupied")
        code = main(["serve", "--state-dir", str(blocker), "--port", "1"])
        assert code == 2
        assert "state-dir" in capsys.readouterr().err

    def test_missing_ui_dir_exits_2(self, tmp_path, capsys):
        code = main([
            "serve", "--state-dir", str(tmp_path / "state"),
            "--ui", str(tmp_path / "missing-ui"), "--port", "1",
        ])
        assert code == 2
        assert "ui" in capsys.readouterr().err


class TestVerifyMcProperties:
    def test_verify_unbiasedness_pass(self, tmp_path):
        doc = {
            "design": {"kind": "dsa", "b": 0.2, "target_p": 0.2},
            "truth": {"kind": "tox_scenario", "probs": [0.05, 0.12, 0.20, 0.35, 0.50]},
            "check": {"level": 3, "n_cohorts": 8, "m": 2, "reps": 150,
                      "perturbations": [{"level": 5, "prob": 0.7}]},
            "execution": {"seed": 5},
        }
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(doc))
        code = main(["verify", "unbiasedness", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["property"] == "unbiasedness"

    def test_verify_indifference_inconclusive_exits_4(self, tmp_path):
        doc = {
            "design": {"kind": "dsa", "b": 0.2, "target_p": 0.2},
            "check": {
                "scenarios": [[0.05, 0.50, 0.70, 0.80, 0.90]],
                "delta_grid": [0.01],
                "n_long": 8, "m": 2, "reps": 40,
            },
            "execution": {"seed": 5},
        }
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(doc))
        code = main(["verify", "indifference", "--config", str(cfg), "--out", str(tmp_path)])
        assert code == 4
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["verdict"] == "inconclusive"
