"""測試命令列介面。"""

import json
from pathlib import Path

import pandas as pd
import pytest

import der_feedback_simulator
from der_feedback_simulator.main import build_parser, hard_check_failures, main
from der_feedback_simulator.runlog import SUMMARY_COLUMNS, RunLog, StepRecord

PACKAGE = Path(der_feedback_simulator.__file__).parent
FEEDER4 = PACKAGE / "feeders" / "feeder_4node.json"


@pytest.fixture()
def scenario_file(tmp_path, monkeypatch):
    monkeypatch.delenv("DERSIM_PLANT", raising=False)
    raw = {
        "name": "cli",
        "grid": str(FEEDER4),
        "h": 1.0,
        "duration": 8.0,
        "devices": [
            {"id": "bat2", "node": 2, "connection": "a", "kind": "generic",
             "region": {"disk": [-200.0, 200.0, 200.0]}, "cost": {"c_p": 1.0, "c_q": 1.0}},
        ],
        "loads": [{"id": "load3", "node": 3, "connection": "a", "p_kw": 150.0, "q_kvar": 50.0}],
        "measurements": {"voltages": "all", "lines": [1]},
        "limits": {"i_max": {"1": 1.0}},
        "controller": {"alpha": 0.005, "r_p": 1.0, "r_d": 1.0},
    }
    path = tmp_path / "cli.json"
    path.write_text(json.dumps(raw), encoding="utf-8")
    return path


def make_record(k, z, residual=0.0):
    return StepRecord(
        k=k, t=float(k), p0=[0.0] * 3, q0=[0.0] * 3, p0_meas=[0.0] * 3, p0_set=[0.0] * 3, E=0.0, s=0.0,
        v_true=[1.0], v_meas=[1.0], iL_true=[], iL_meas=[], max_v=1.0, min_v=1.0, max_iL_ratio=0.0,
        outputs={}, commands={}, x_hat=[0.0, 0.0], pred_v=[1.0], pred_iL=[], pred_p0=[0.0] * 3,
        z=list(z), dual_norms={}, residual=residual,
    )


# ── 子命令 ───────────────────────────────────────────────────────


class TestRunCommand:

    def test_writes_outputs(self, scenario_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(scenario_file), "--out", str(out)]) == 0
        assert "cli" in capsys.readouterr().out

        log = RunLog.from_jsonl(out / "runlog.jsonl")
        assert len(log) == 8
        assert log.meta["name"] == "cli"
        summary = pd.read_csv(out / "summary.csv")
        assert list(summary.columns) == SUMMARY_COLUMNS
        assert len(summary) == 8
        # 150 kW 負載加上線路損失
        assert summary["p0_a"].iloc[0] > 150.0

    def test_plant_flag(self, scenario_file, tmp_path):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(scenario_file), "--out", str(out), "--plant", "linear"]) == 0
        assert RunLog.from_jsonl(out / "runlog.jsonl").meta["plant"] == "linear"

    def test_missing_scenario(self, tmp_path, capsys):
        assert main(["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
        assert "FileNotFoundError" in capsys.readouterr().err

    def test_invalid_scenario(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"name": "bad"}), encoding="utf-8")
        assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == 1
        assert "SchemaError" in capsys.readouterr().err


class TestCertifyCommand:

    def test_exit_code_follows_summary(self, scenario_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--scenario", str(scenario_file), "--out", str(out), "--oracle"]) == 0
        capsys.readouterr()

        code = main(["certify", "--log", str(out / "runlog.jsonl")])
        text = capsys.readouterr().out
        summary = json.loads(text[: text.rindex("}") + 1])
        assert (code == 0) == summary["passed"]
        assert summary["steps"] == 8
        table = pd.read_csv(out / "certify.csv")
        assert list(table.columns) == ["k", "realized_gap", "bound", "margin"]

    def test_log_without_oracle(self, scenario_file, tmp_path, capsys):
        out = tmp_path / "out"
        main(["run", "--scenario", str(scenario_file), "--out", str(out)])
        capsys.readouterr()
        assert main(["certify", "--log", str(out / "runlog.jsonl")]) == 1
        assert "LogFieldError" in capsys.readouterr().err


class TestInspectionCommands:

    def test_powerflow_grid(self, capsys):
        assert main(["powerflow", "--grid", str(FEEDER4)]) == 0
        text = capsys.readouterr().out
        assert "p0_a = " in text
        assert "迭代 0 次" in text

    def test_powerflow_scenario(self, scenario_file, capsys):
        assert main(["powerflow", "--scenario", str(scenario_file)]) == 0
        text = capsys.readouterr().out
        assert "v_mag" in text
        assert "殘差" in text

    def test_linearize(self, scenario_file, tmp_path):
        out = tmp_path / "model.json"
        assert main(["linearize", "--scenario", str(scenario_file), "--out", str(out)]) == 0
        model = json.loads(out.read_text(encoding="utf-8"))
        assert list(model["A"]) == ["bat2"]
        assert len(model["a"]) == 3

    def test_subcommand_required(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


# ── 硬性檢查 ─────────────────────────────────────────────────────


class TestHardChecks:

    def test_clean_log(self):
        log = RunLog(meta={"plant": "nonlinear", "n_primal": 2}, records=[make_record(0, [0.5, -0.5, 0.0, 1.0])])
        assert hard_check_failures(log) == []

    def test_violations(self):
        log = RunLog(
            meta={"plant": "nonlinear", "n_primal": 2},
            records=[make_record(0, [0.0, 0.0, -1e-3], residual=1.0)],
            aborted=True,
            abort_reason="k=1: 發散",
        )
        failures = hard_check_failures(log)
        assert len(failures) == 3
        assert "k=1: 發散" in failures[0]

    def test_linear_plant_skips_residual(self):
        log = RunLog(meta={"plant": "linear", "n_primal": 0}, records=[make_record(0, [], residual=1.0)])
        assert hard_check_failures(log) == []
