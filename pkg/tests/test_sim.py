"""測試閉迴路模擬：紀錄內容、雜訊、事件、中止與誤差界驗證。"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import pytest

import der_feedback_simulator
from der_feedback_simulator.analysis import (
    certify,
    contraction,
    max_stepsize,
    measure_run,
    steady_state_max_voltage,
    tracking_fraction,
)
from der_feedback_simulator.errors import DivergenceError
from der_feedback_simulator.scenario import load_scenario
from der_feedback_simulator.sim import NOISE_CLIP, SimulationEngine, _noisy, run

PACKAGE = Path(der_feedback_simulator.__file__).parent
SCENARIOS = PACKAGE / "scenarios"
FEEDER4 = PACKAGE / "feeders" / "feeder_4node.json"


@pytest.fixture(autouse=True)
def no_plant_override(monkeypatch):
    monkeypatch.delenv("DERSIM_PLANT", raising=False)


def small_scenario(**overrides) -> dict:
    """4 節點饋線上的短場景：一個通用電池區域與一個 PV。"""
    raw = {
        "name": "small",
        "grid": str(FEEDER4),
        "h": 1.0,
        "duration": 10.0,
        "devices": [
            {"id": "bat2", "node": 2, "connection": "a", "kind": "generic",
             "region": {"disk": [-200.0, 200.0, 200.0]}, "cost": {"c_p": 1.0, "c_q": 1.0}},
            {"id": "pv3", "node": 3, "connection": "a", "kind": "pv", "rating_kva": 300.0, "p_av_kw": 250.0,
             "cost": {"c_p": 1.0, "c_q": 1.0}},
        ],
        "loads": [
            {"id": "load2", "node": 2, "connection": "a", "p_kw": 200.0, "q_kvar": 60.0},
            {"id": "load3", "node": 3, "connection": "a", "p_kw": 150.0, "q_kvar": 50.0},
        ],
        "measurements": {"voltages": "all", "lines": [1]},
        "limits": {"i_max": {"1": 1.0}},
        "tracking": {"p0_set_kw": {"a": 200.0, "b": 0.0, "c": 0.0}, "E_kw": 10.0},
        "controller": {"alpha": 0.005, "r_p": 1.0, "r_d": 1.0},
    }
    raw.update(overrides)
    return raw


HOUSE = {
    "id": "house3", "node": 3, "connection": "a",
    "members": [
        {"id": "h_bat", "kind": "battery", "rating_kva": 20.0, "capacity_kwh": 40.0,
         "soc_kwh": 20.0, "cost": {"c_p": 1.0, "c_q": 1.0}},
        {"id": "h_pv", "kind": "pv", "rating_kva": 30.0, "p_av_kw": 25.0,
         "cost": {"c_p": 1.0, "c_q": 1.0}},
    ],
}


# ── 雜訊 ─────────────────────────────────────────────────────────


class TestNoise:

    def test_clipped(self):
        rng = np.random.default_rng(0)
        out = _noisy(rng, np.zeros(10_000), 0.01)
        assert np.max(np.abs(out)) <= NOISE_CLIP * 0.01
        assert np.std(out) == pytest.approx(0.01, rel=0.05)

    def test_zero_sigma_draws_nothing(self):
        rng = np.random.default_rng(3)
        values = np.array([1.0, 2.0])
        np.testing.assert_array_equal(_noisy(rng, values, 0.0), values)
        assert rng.normal() == np.random.default_rng(3).normal()


# ── 紀錄內容 ─────────────────────────────────────────────────────


class TestRunLog:

    def test_loads_only(self):
        """沒有設備時只有對偶變數，饋線頭輸入負載加損失。"""
        raw = small_scenario(devices=[])
        log = run(load_scenario(raw))
        assert len(log) == 10
        assert not log.aborted
        assert log.meta["n_primal"] == 0
        record = log.records[-1]
        assert record.p0[0] > 0.35
        assert record.p0[1] == pytest.approx(0.0, abs=1e-9)
        # γ, ν, λ, μ, ζ：3 + 3 + 3 + 3 + 1
        assert len(record.z) == 13
        assert 0.9 < record.min_v < record.max_v < 1.0
        assert record.max_iL_ratio == pytest.approx(np.max(record.iL_true))

    def test_meta_and_shapes(self):
        log = run(load_scenario(small_scenario()))
        meta = log.meta
        assert meta["plant"] == "nonlinear"
        assert meta["device_ids"] == ["bat2", "pv3"]
        assert meta["n_primal"] == 4
        assert meta["alpha"] == 0.005
        assert 0.0 < meta["c"] < 1.0
        assert len(meta["z_init"]) == 4 + 13
        record = log.records[0]
        assert record.k == 0 and record.t == 0.0
        assert set(record.outputs) == {"bat2", "pv3"}
        assert len(record.x_hat) == 4
        assert len(record.v_true) == 3
        assert record.p0_set == pytest.approx([0.2, 0.0, 0.0])
        assert record.s == 1.0
        assert record.z_star is None
        assert set(record.dual_norms) == {"mu", "gamma", "zeta", "lam", "nu"}

    def test_outputs_stay_in_regions(self):
        log = run(load_scenario(small_scenario(duration=30.0)))
        for record in log:
            p, q = record.outputs["pv3"]
            assert -1e-12 <= p <= 0.25 + 1e-12
            assert p * p + q * q <= 0.3**2 + 1e-12

    def test_noise_is_seeded(self):
        raw = small_scenario(noise={"seed": 11, "v": 0.001, "p0_kw": 1.0, "der_kw": 1.0})
        first = run(load_scenario(raw))
        second = run(load_scenario(raw))
        assert [r.p0_meas for r in first] == [r.p0_meas for r in second]
        assert [r.z for r in first] == [r.z for r in second]
        assert first.records[0].p0_meas != first.records[0].p0

    def test_without_noise_measurements_are_exact(self):
        log = run(load_scenario(small_scenario()))
        for record in log:
            assert record.p0_meas == record.p0
            assert record.v_meas == record.v_true

    def test_executor_matches_serial(self):
        scenario = load_scenario(small_scenario())
        serial = run(scenario)
        with ThreadPoolExecutor(max_workers=2) as pool:
            threaded = run(scenario, executor=pool)
        np.testing.assert_allclose([r.z for r in threaded], [r.z for r in serial], rtol=0, atol=1e-12)

    def test_aggregation_members(self):
        raw = small_scenario(aggregations=[HOUSE])
        log = run(load_scenario(raw))
        assert log.meta["aggregation_ids"] == ["house3"]
        assert log.meta["n_primal"] == 6
        for record in log:
            np.testing.assert_allclose(
                record.outputs["house3"],
                np.add(record.outputs["h_bat"], record.outputs["h_pv"]),
                atol=1e-12,
            )
            assert set(record.disaggregation["house3"]) >= {"xbar", "xi", "converged"}
            assert {"h_bat", "h_pv"} <= set(record.commands)


# ── 事件與模式 ───────────────────────────────────────────────────


class TestEventsAndModes:

    def test_locked_device_holds_setpoint(self):
        raw = small_scenario(events=[{"time": 3, "event_type": "lock_device", "data": {"id": "bat2", "p_kw": 50.0}}])
        log = run(load_scenario(raw))
        for record in log.records[3:]:
            assert record.outputs["bat2"] == pytest.approx([0.05, 0.0])
        assert log.records[2].outputs["bat2"] != pytest.approx([0.05, 0.0])

    def test_locked_aggregation_member(self):
        """鎖定一個帶無效功率的聚合成員後，模擬照常完成。"""
        raw = small_scenario(
            aggregations=[HOUSE],
            events=[{"time": 3, "event_type": "lock_device", "data": {"id": "h_bat", "p_kw": 5.0, "q_kvar": 8.0}}],
        )
        log = run(load_scenario(raw))
        assert not log.aborted
        assert len(log) == 10
        for record in log.records[3:]:
            assert record.outputs["h_bat"] == pytest.approx([0.005, 0.008])
            np.testing.assert_allclose(
                record.outputs["house3"],
                np.add(record.outputs["h_bat"], record.outputs["h_pv"]),
                atol=1e-12,
            )

    def test_relinearize_event(self, caplog):
        raw = small_scenario(events=[{"time": 4, "event_type": "relinearize"}])
        with caplog.at_level(logging.INFO, logger="der_feedback_simulator.sim"):
            run(load_scenario(raw))
        assert "[t=4.0] 重新線性化" in caplog.text

    def test_mode_from_environment(self, monkeypatch):
        monkeypatch.setenv("DERSIM_PLANT", "linear")
        engine = SimulationEngine(load_scenario(small_scenario()))
        assert engine.mode == "linear"
        assert engine.run().meta["plant"] == "linear"

    def test_argument_beats_scenario(self):
        scenario = load_scenario(small_scenario(plant="linear"))
        assert SimulationEngine(scenario).mode == "linear"
        assert SimulationEngine(scenario, plant_mode="NONLINEAR").mode == "nonlinear"

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            SimulationEngine(load_scenario(small_scenario()), plant_mode="hybrid")


class TestAbort:
    """潮流失敗時的中止行為。"""

    @staticmethod
    def failing_after(engine, t_fail):
        original = engine._evaluate

        def evaluate(t):
            if t >= t_fail:
                raise DivergenceError("模擬的發散", residual=1.0, iterations=50)
            return original(t)

        return evaluate

    def test_abort_keeps_earlier_steps(self, monkeypatch):
        engine = SimulationEngine(load_scenario(small_scenario()))
        monkeypatch.setattr(engine, "_evaluate", self.failing_after(engine, 4.0))
        log = engine.run()
        assert log.aborted
        assert len(log) == 4
        assert log.abort_reason.startswith("k=4")

    def test_failure_at_start_raises(self, monkeypatch):
        engine = SimulationEngine(load_scenario(small_scenario()))
        monkeypatch.setattr(engine, "_evaluate", self.failing_after(engine, 0.0))
        with pytest.raises(DivergenceError):
            engine.run()


# ── 誤差界 ───────────────────────────────────────────────────────


class TestTrackingBound:
    """以每步鞍點為參考，實際距離不超過誤差界。"""

    def test_static_linear_plant_converges(self):
        scenario = load_scenario(SCENARIOS / "feeder4_static.json")
        log = run(scenario, oracle=True)
        assert log.meta["plant"] == "linear"
        budget, frame = measure_run(log)
        assert frame["within"].all()
        assert budget.e_x < 1e-9
        z0_gap = np.linalg.norm(np.subtract(log.meta["z_init"], log.records[0].z_star))
        assert frame["realized"].iloc[-1] <= 0.01 * z0_gap

    @pytest.mark.slow
    def test_static_per_step_contraction(self):
        """步長低於上限時，每步與鞍點的距離至少縮小為 c(α) 倍，最終距離 <= 1e-8。"""
        raw = json.loads((SCENARIOS / "feeder4_static.json").read_text(encoding="utf-8"))
        raw["duration"] = 8000.0
        log = run(load_scenario(raw, base_dir=SCENARIOS), oracle=True)
        meta = log.meta
        assert meta["alpha"] < max_stepsize(meta["r_p"], meta["r_d"], meta["L"], meta["G"])
        c = contraction(meta["alpha"], meta["r_p"], meta["r_d"], meta["L"], meta["G"])
        assert c < 1.0

        z_star = np.asarray(log.records[-1].z_star)
        gaps = np.array(
            [np.linalg.norm(np.subtract(meta["z_init"], z_star))]
            + [np.linalg.norm(np.subtract(r.z, z_star)) for r in log.records]
        )
        # 鞍點參考解的精度約 1e-10，只在距離遠大於此時比較比值
        resolved = gaps[:-1] > 1e-5
        assert resolved.sum() > 100
        ratios = gaps[1:][resolved] / gaps[:-1][resolved]
        assert np.all(ratios <= c + 1e-6)
        assert gaps[-1] <= 1e-8

    def test_time_varying_noisy_scenario_certifies(self, tmp_path):
        log = run(load_scenario(SCENARIOS / "feeder4_tracking.json"), oracle=True)
        assert len(log) == 600
        table, summary = certify(log, out_csv=tmp_path / "certify.csv")
        assert summary["violations"] == 0
        assert summary["tail_ok"]
        assert summary["passed"]
        assert summary["sup_e_x"] > 0.0
        assert len(table) == 600


# ── 13 節點饋線 ──────────────────────────────────────────────────


@pytest.mark.slow
class TestFeeder13:
    """13 節點不平衡饋線上的追蹤與電壓調節。"""

    def test_head_power_tracking(self):
        log = run(load_scenario(SCENARIOS / "feeder13_tracking.json"))
        assert not log.aborted
        assert len(log) == 900
        assert tracking_fraction(log, transient_steps=100, settle_steps=30) >= 0.95

    def test_tightened_voltage_limit(self):
        log = run(load_scenario(SCENARIOS / "feeder13_voltage.json"))
        assert not log.aborted
        assert steady_state_max_voltage(log) <= 1.012
