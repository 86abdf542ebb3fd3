"""測試原始-對偶控制器的各個子步驟。"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from der_feedback_simulator.aggregation import MemberCost
from der_feedback_simulator.controller import (
    ControllerParams,
    ControllerState,
    DualState,
    FleetCosts,
    FleetRegions,
    aggregation_step,
    controller_step,
    device_step,
    dual_step,
)
from der_feedback_simulator.errors import MeasurementError, ParameterError, UnknownDeviceError
from der_feedback_simulator.plant import MeasurementFrame
from der_feedback_simulator.regions import Discrete, Disk, Interval, Singleton
from der_feedback_simulator.sensitivity import SensitivityModel

UNIT = MemberCost(c_p=1.0, c_q=1.0)
HVAC = Discrete(((0.0, 0.0), (-0.5, 0.0)))


def _mats(scale: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A = scale * np.array([[0.1, 0.2], [0.05, 0.1]])
    B = scale * np.array([[0.3, 0.0]])
    M = np.array([[-1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    return A, B, M


@pytest.fixture()
def model():
    devices = {"d1": _mats(1.0), "hv": _mats(0.5)}
    aggs = {"h1": _mats(2.0)}
    return SensitivityModel(
        A={k: m[0] for k, m in devices.items()},
        B={k: m[1] for k, m in devices.items()},
        M={k: m[2] for k, m in devices.items()},
        A_bar={k: m[0] for k, m in aggs.items()},
        B_bar={k: m[1] for k, m in aggs.items()},
        M_bar={k: m[2] for k, m in aggs.items()},
        a=np.array([1.0, 1.0]),
        b=np.array([0.2]),
        m=np.array([0.4, 0.0, 0.0]),
    )


@pytest.fixture()
def fleet():
    regions = FleetRegions(
        devices={"d1": Disk(-1.0, 1.0, 1.0), "hv": HVAC},
        members={"h1": {"m1": Interval(0.0, 1.0), "m2": Interval(0.0, 1.0)}},
    )
    costs = FleetCosts(
        devices={"d1": UNIT, "hv": MemberCost(c_p=0.1)},
        members={"h1": {"m1": UNIT, "m2": UNIT}},
    )
    return regions, costs


@pytest.fixture()
def params():
    return ControllerParams(alpha=0.2, r_p=1e-3, r_d=1e-4, i_max=np.array([0.5]))


def frame(v, i=(0.1,), p0=(0.0, 0.0, 0.0), outputs=None) -> MeasurementFrame:
    return MeasurementFrame(
        t=0.0, v_mag=np.array(v), iL_mag=np.array(i), p0=np.array(p0), der_outputs=outputs or {}
    )


# ── 參數與對偶狀態 ───────────────────────────────────────────────


class TestParams:

    def test_defaults_are_valid(self):
        ControllerParams().validate()

    @pytest.mark.parametrize(
        "changes",
        [{"alpha": 0.0}, {"r_p": -1.0}, {"r_d": 0.0}, {"v_min": 1.05}, {"E": -0.1}, {"h": 0.0}],
    )
    def test_invalid(self, changes):
        with pytest.raises(ParameterError):
            ControllerParams().with_updates(**changes).validate()


class TestDualState:

    def test_vector_order(self):
        duals = DualState(
            mu=np.array([4.0, 4.5]),
            gamma=np.array([1.0, 1.5]),
            zeta=np.array([5.0]),
            lam=np.array([3.0, 3.0, 3.0]),
            nu=np.array([2.0, 2.0, 2.0]),
        )
        np.testing.assert_array_equal(
            duals.as_vector(), [1.0, 1.5, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0, 4.5, 5.0]
        )
        restored = DualState.from_vector(duals.as_vector(), n_v=2, n_i=1)
        np.testing.assert_array_equal(restored.mu, duals.mu)
        np.testing.assert_array_equal(restored.zeta, duals.zeta)
        assert duals.min() == 1.0
        assert duals.norms()["zeta"] == pytest.approx(5.0)


# ── 對偶步 ───────────────────────────────────────────────────────


class TestDualStep:
    """對偶上升與非負投影。"""

    def test_undervoltage_raises_mu(self, params):
        duals = dual_step(DualState.zeros(2, 1), frame([0.90, 1.0]), params)
        assert duals.mu[0] == pytest.approx(0.01)
        assert duals.mu[1] == 0.0
        np.testing.assert_array_equal(duals.gamma, 0.0)

    def test_overvoltage_raises_gamma(self, params):
        duals = dual_step(DualState.zeros(2, 1), frame([1.10, 1.0]), params)
        assert duals.gamma[0] == pytest.approx(0.2 * 0.05)

    def test_overcurrent_raises_zeta(self, params):
        duals = dual_step(DualState.zeros(2, 1), frame([1.0, 1.0], i=(0.7,)), params)
        assert duals.zeta[0] == pytest.approx(0.2 * 0.2)

    def test_regularization_shrinks_inactive_duals(self, params):
        start = DualState(np.ones(2), np.zeros(2), np.zeros(1), np.zeros(3), np.zeros(3))
        duals = dual_step(start, frame([1.0, 1.0]), params)
        np.testing.assert_allclose(duals.mu, 1.0 + 0.2 * (0.95 - 1.0 - 1e-4))

    def test_tracking_band(self, params):
        tracking = params.with_updates(s=1.0, p0_set=np.array([0.1, 0.0, 0.0]), E=0.05)
        duals = dual_step(DualState.zeros(2, 1), frame([1.0, 1.0], p0=(0.3, 0.0, 0.0)), tracking)
        assert duals.lam[0] == pytest.approx(0.2 * 0.15)
        np.testing.assert_array_equal(duals.nu, 0.0)

        below = dual_step(DualState.zeros(2, 1), frame([1.0, 1.0], p0=(-0.1, 0.0, 0.0)), tracking)
        assert below.nu[0] == pytest.approx(0.2 * 0.15)

    def test_tracking_disabled(self, params):
        duals = dual_step(DualState.zeros(2, 1), frame([1.0, 1.0], p0=(5.0, 0.0, 0.0)), params)
        np.testing.assert_array_equal(duals.lam, 0.0)
        np.testing.assert_array_equal(duals.nu, 0.0)

    def test_dimension_mismatch(self, params):
        with pytest.raises(MeasurementError):
            dual_step(DualState.zeros(3, 1), frame([1.0, 1.0]), params)


# ── 原始步 ───────────────────────────────────────────────────────


class TestDeviceStep:

    def test_cost_gradient(self, model, params):
        cost = MemberCost(c_p=1.0, c_q=1.0, p_ref=0.5)
        x = device_step(np.zeros(2), DualState.zeros(2, 1), model, "d1", Disk(-1.0, 1.0, 1.0), cost, params)
        np.testing.assert_allclose(x, [0.2, 0.0])

    def test_undervoltage_dual_pushes_injection(self, model, params):
        duals = DualState(np.array([0.5, 0.5]), np.zeros(2), np.zeros(1), np.zeros(3), np.zeros(3))
        x = device_step(np.zeros(2), duals, model, "d1", Disk(-1.0, 1.0, 1.0), MemberCost(), params)
        np.testing.assert_allclose(x, 0.2 * model.A["d1"].T @ duals.mu)

    def test_result_is_projected(self, model, params):
        cost = MemberCost(c_p=100.0, p_ref=10.0)
        region = Disk(0.0, 0.3, 0.5)
        x = device_step(np.zeros(2), DualState.zeros(2, 1), model, "d1", region, cost, params)
        assert region.contains(x)
        assert x[0] == pytest.approx(0.3)

    def test_discrete_region_steps_on_hull(self, model, params):
        cost = MemberCost(c_p=1.0, p_ref=-0.3)
        x = device_step(np.zeros(2), DualState.zeros(2, 1), model, "hv", HVAC, cost, params)
        np.testing.assert_allclose(x, [-0.12, 0.0])

    def test_unknown_device(self, model, params):
        with pytest.raises(UnknownDeviceError):
            device_step(np.zeros(2), DualState.zeros(2, 1), model, "ghost", Disk(0.0, 1.0, 1.0), UNIT, params)


class TestAggregationStep:

    def test_step_and_split(self, model, params):
        members = {"m1": (Interval(0.0, 1.0), UNIT), "m2": (Interval(0.0, 1.0), UNIT)}
        xbar, result = aggregation_step(
            [1.0, 0.0], [0.0, 0.0], DualState.zeros(2, 1), model, "h1", Interval(0.0, 2.0), members, params
        )
        np.testing.assert_allclose(xbar, [1.0 - 0.2 * 1e-3, 0.0])
        assert result.converged
        np.testing.assert_allclose(result.xi, [-xbar[0], 0.0], atol=1e-9)
        assert not result.pulled

    def test_xi_acts_as_cost_gradient(self, model, params):
        """ξ 為負時聚合設定值被往回拉。"""
        members = {"m1": (Interval(0.0, 1.0), UNIT), "m2": (Interval(0.0, 1.0), UNIT)}
        xbar, _ = aggregation_step(
            [1.0, 0.0], [-1.0, 0.0], DualState.zeros(2, 1), model, "h1", Interval(0.0, 2.0), members, params
        )
        assert xbar[0] == pytest.approx(1.0 - 0.2 * (1.0 + 1e-3))


# ── 完整一步 ─────────────────────────────────────────────────────


class TestControllerStep:
    """controller_step() 的整合行為。"""

    def test_initial_state(self):
        regions = FleetRegions(
            devices={"d1": Disk(0.2, 1.0, 1.0), "hv": HVAC},
            members={"h1": {"m1": Interval(0.5, 1.0), "m2": Interval(0.0, 1.0)}},
        )
        state = ControllerState.initial(regions, n_v=2, n_i=1)
        np.testing.assert_allclose(state.x["d1"], [0.2, 0.0])
        np.testing.assert_allclose(state.xbar["h1"], [0.5, 0.0])
        np.testing.assert_allclose(state.members["h1"]["m1"], [0.5, 0.0])
        assert set(state.err_acc) == {"hv"}
        assert state.as_vector().shape == (2 * 2 + 2 + 11,)

    def test_commands_and_new_state(self, model, fleet, params):
        regions, costs = fleet
        state = ControllerState.initial(regions, n_v=2, n_i=1)
        commands, new_state = controller_step(state, frame([0.9, 0.92]), model, regions, costs, params)

        assert set(commands) == {"d1", "hv", "m1", "m2"}
        assert HVAC.contains(commands["hv"])
        assert new_state.k == 1
        assert state.k == 0
        assert new_state.duals.mu[0] > 0.0
        assert "hv" in new_state.err_acc
        assert new_state.diagnostics["h1"]["converged"]
        np.testing.assert_allclose(
            commands["m1"] + commands["m2"], new_state.xbar["h1"], atol=params.disagg_tol * 10
        )

    def test_measured_outputs_seed_continuous_devices(self, model, fleet, params):
        regions, costs = fleet
        state = ControllerState.initial(regions, n_v=2, n_i=1)
        outputs = {"d1": np.array([0.4, 0.1]), "hv": np.array([-0.5, 0.0])}
        _, seeded = controller_step(state, frame([1.0, 1.0], outputs=outputs), model, regions, costs, params)
        _, unseeded = controller_step(state, frame([1.0, 1.0]), model, regions, costs, params)
        assert not np.allclose(seeded.x["d1"], unseeded.x["d1"])
        # 離散設備一律從上一步的連續迭代值開始
        np.testing.assert_array_equal(seeded.x["hv"], unseeded.x["hv"])

    def test_executor_matches_serial(self, model, fleet, params):
        regions, costs = fleet
        state = ControllerState.initial(regions, n_v=2, n_i=1)
        f = frame([0.93, 1.06], i=(0.6,))
        serial, s1 = controller_step(state, f, model, regions, costs, params)
        with ThreadPoolExecutor(max_workers=3) as pool:
            parallel, s2 = controller_step(state, f, model, regions, costs, params, executor=pool)
        for key in serial:
            np.testing.assert_array_equal(serial[key], parallel[key])
        np.testing.assert_array_equal(s1.as_vector(), s2.as_vector())

    def test_locked_reactive_member(self, model, fleet, params):
        """鎖定成員帶 Q≠0 設定點時，聚合在平移後的區域上更新。"""
        _, costs = fleet
        free = Disk(0.0, 0.5, 1.0)
        regions = FleetRegions(
            devices={"d1": Disk(-1.0, 1.0, 1.0), "hv": HVAC},
            members={"h1": {"m1": free, "m2": Singleton(0.3, 0.2)}},
        )
        state = ControllerState.initial(regions, n_v=2, n_i=1)
        np.testing.assert_allclose(state.xbar["h1"], [0.3, 0.0], atol=1e-12)

        commands, new_state = controller_step(state, frame([0.9, 0.92]), model, regions, costs, params)
        np.testing.assert_array_equal(commands["m2"], [0.3, 0.2])
        assert free.contains(commands["m1"])
        np.testing.assert_allclose(commands["m1"] + commands["m2"], new_state.xbar["h1"], atol=1e-9)

    def test_fleet_helpers(self, fleet):
        regions, costs = fleet
        assert regions.is_discrete("hv")
        assert not regions.is_discrete("m1")
        assert regions.folded("h1") == Interval(0.0, 2.0)
        assert regions.member_region("m2") == Interval(0.0, 1.0)
        with pytest.raises(KeyError):
            regions.member_region("ghost")
        assert costs.lipschitz == pytest.approx(2.0)
