"""閉迴路模擬 - 受控廠、量測雜訊、控制器與設備動態的逐步交替執行。

每一步 k（t = k h）：
  1. 觸發到期的場景事件
  2. 由設備狀態與剖面建立本步區域與成本
  3. 取出到期指令並套用一階致動延遲
  4. 組合設備輸出與負載後求解潮流
  5. 產生含雜訊的量測
  6. 控制器更新並送出指令
  7. 推進設備狀態並寫入紀錄
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor, ThreadPoolExecutor
from typing import Mapping

import numpy as np

from .aggregation import MemberCost
from .analysis import check_stepsize, estimate_constants, solve_saddle_point
from .controller import ControllerParams, ControllerState, FleetCosts, FleetRegions, controller_step
from .devices import CommandLink, actuate
from .errors import CollapseError, DivergenceError
from .factory import PLANT_MODES, create_plant, resolve_mode
from .plant import MeasurementFrame, NonlinearPlant, PlantInterface, PlantReading
from .regions import OperatingRegion, Singleton, continuous_region
from .runlog import RunLog, StepRecord
from .scenario import DeviceSpec, Scenario, ScenarioEngine
from .sensitivity import SensitivityModel, linearize

__all__ = ["MeasurementFrame", "SimulationEngine", "actuate", "run"]

logger = logging.getLogger(__name__)

NOISE_CLIP = 4.0


def _noisy(rng: np.random.Generator, values: np.ndarray, sigma: float) -> np.ndarray:
    """加上截斷於 ±4σ 的零均值高斯雜訊；σ=0 時不消耗亂數。"""
    values = np.asarray(values, dtype=float)
    if sigma <= 0 or values.size == 0:
        return values.copy()
    noise = np.clip(rng.normal(0.0, sigma, size=values.shape), -NOISE_CLIP * sigma, NOISE_CLIP * sigma)
    return values + noise


def _stack(values: Mapping[str, np.ndarray], order: list[str]) -> np.ndarray:
    parts = [np.asarray(values[k], dtype=float) for k in order]
    return np.concatenate(parts) if parts else np.zeros(0)


class SimulationEngine:
    """單一場景的閉迴路模擬。

    一個實例只執行一次 run()；不同場景可以在不同實例上並行。

    用法::

        scenario = load_scenario("scenarios/feeder4_static.json")
        log = SimulationEngine(scenario, oracle=True).run()
        log.to_jsonl("out/runlog.jsonl")

    Args:
        scenario: 已載入的場景。
        plant_mode: "nonlinear" 或 "linear"；None 時依環境變數 DERSIM_PLANT，再依場景設定。
        oracle: 是否每步求解鞍點並記錄 z_star。
        executor: 選用的執行器；None 且場景設定 workers > 0 時自動建立執行緒池。
    """

    def __init__(
        self,
        scenario: Scenario,
        plant_mode: str | None = None,
        oracle: bool = False,
        executor: Executor | None = None,
    ) -> None:
        self.scenario = scenario
        self.mode = resolve_mode(plant_mode, default=scenario.plant)
        if self.mode not in PLANT_MODES:
            raise ValueError(f"未知的受控廠模式 '{self.mode}'，請使用 'nonlinear' 或 'linear'。")
        self.oracle = oracle
        self.executor = executor

        self.pu = 1.0 / scenario.grid.base.kva
        self.device_ids = sorted(d.id for d in scenario.devices)
        self.aggregation_ids = sorted(a.id for a in scenario.aggregations)
        self._specs: dict[str, DeviceSpec] = {d.id: d for d in scenario.devices}
        self._members: dict[str, dict[str, DeviceSpec]] = {
            a.id: {m.id: m for m in a.members} for a in scenario.aggregations
        }
        for members in self._members.values():
            self._specs.update(members)

        self.physical = NonlinearPlant(
            scenario.grid, scenario.injection_points(), scenario.measurements
        )
        self.plant: PlantInterface = self.physical
        self.model: SensitivityModel | None = None

        self.engine = ScenarioEngine(scenario.tracking, scenario.limits, pu=self.pu)
        self.engine.load(list(scenario.events))
        self.link = CommandLink(scenario.link_delay_steps)
        self.rng = np.random.default_rng(scenario.noise.seed)
        self.states = {key: spec.make_state() for key, spec in self._specs.items()}
        self.outputs: dict[str, np.ndarray] = {}
        self.commanded: dict[str, np.ndarray] = {}
        self._v_prev: np.ndarray | None = None

    # -- 每步的區域、成本與參數 --

    def _region(self, key: str, t: float) -> OperatingRegion:
        spec = self._specs[key]
        if key in self.engine.locked:
            setpoint = self.engine.locked[key]
            if setpoint is None:
                setpoint = self.outputs.get(key, np.zeros(2))
            return Singleton(float(setpoint[0]), float(setpoint[1]))
        return spec.region_at(t, self.scenario.h, self.states[key], self.scenario.timeseries)

    def _cost(self, key: str, t: float) -> MemberCost:
        spec = self._specs[key]
        table = self.scenario.timeseries
        return MemberCost(
            c_p=spec.cost.c_p,
            c_q=spec.cost.c_q,
            p_ref=spec.p_ref_at(t, table),
            q_ref=spec.cost.q_ref.value(t, table),
        )

    def fleet(self, t: float) -> tuple[FleetRegions, FleetCosts]:
        """t 秒時的區域與成本。"""
        regions = FleetRegions(
            devices={k: self._region(k, t) for k in self.device_ids},
            members={a: {m: self._region(m, t) for m in sorted(ms)} for a, ms in self._members.items()},
        )
        costs = FleetCosts(
            devices={k: self._cost(k, t) for k in self.device_ids},
            members={a: {m: self._cost(m, t) for m in sorted(ms)} for a, ms in self._members.items()},
        )
        return regions, costs

    def params(self, t: float) -> ControllerParams:
        settings = self.scenario.controller
        tracking = self.engine.tracking
        return ControllerParams(
            alpha=settings.alpha,
            r_p=settings.r_p,
            r_d=settings.r_d,
            v_min=self.engine.limits.v_min,
            v_max=self.engine.limits.v_max,
            i_max=self.scenario.i_max_vector(self.engine.limits),
            E=tracking.controller_E,
            s=tracking.s.value(t, self.scenario.timeseries),
            p0_set=tracking.setpoint(t, self.scenario.timeseries),
            h=self.scenario.h,
            disagg_tol=settings.disagg_tol,
            disagg_max_iter=settings.disagg_max_iter,
        )

    # -- 受控廠 --

    def setpoints(self) -> dict[str, np.ndarray]:
        """受控廠的設定點：設備輸出與聚合的成員輸出總和。"""
        points = {k: self.outputs[k] for k in self.device_ids}
        for agg, members in self._members.items():
            points[agg] = np.sum([self.outputs[m] for m in sorted(members)], axis=0)
        return points

    def _linearize(self, t: float, executor: Executor | None) -> None:
        setpoints = self.setpoints()
        self.model = linearize(
            self.physical,
            {k: setpoints[k] for k in self.device_ids},
            {k: setpoints[k] for k in self.aggregation_ids},
            self.scenario.loads_at(t),
            executor=executor,
        )
        logger.info("[t=%.1f] 重新線性化", t)

    def _evaluate(self, t: float) -> PlantReading:
        loads = self.scenario.loads_at(t)
        if self.mode == "nonlinear":
            reading = self.physical.evaluate(self.setpoints(), loads, v_start=self._v_prev)
            self._v_prev = reading.v
            return reading
        return self.plant.evaluate(self.setpoints(), loads)

    # -- 主迴圈 --

    def _initialize(self, executor: Executor | None) -> tuple[ControllerState, RunLog]:
        regions, costs = self.fleet(0.0)
        state = ControllerState.initial(regions, self.physical.n_v, self.physical.n_i)
        for key in self.device_ids:
            self.outputs[key] = regions.devices[key].project(state.x[key])
        for agg, members in state.members.items():
            for m, setpoint in members.items():
                self.outputs[m] = regions.members[agg][m].project(setpoint)
        self.commanded = {k: v.copy() for k, v in self.outputs.items()}

        self._linearize(0.0, executor)
        if self.mode == "linear":
            self.plant = create_plant("linear", model=self.model)

        params = self.params(0.0)
        params.validate()
        constants = estimate_constants(self.model, costs, params)
        check_stepsize(constants)

        meta = {
            "name": self.scenario.name,
            "h": self.scenario.h,
            "duration": self.scenario.duration,
            "base_kva": self.scenario.grid.base.kva,
            "plant": self.mode,
            "seed": self.scenario.noise.seed,
            "device_ids": self.device_ids,
            "aggregation_ids": self.aggregation_ids,
            "n_v": self.physical.n_v,
            "n_i": self.physical.n_i,
            "n_primal": 2 * (len(self.device_ids) + len(self.aggregation_ids)),
            "z_init": state.as_vector().tolist(),
            "oracle": self.oracle,
            **constants.to_dict(),
        }
        return state, RunLog(meta=meta)

    def run(self) -> RunLog:
        """執行整個場景。

        Returns:
            RunLog；潮流發散時 aborted=True，只包含發散前的步驟。

        Raises:
            DivergenceError: t=0 的潮流即未收斂。
            LinearizationError: 線性化失敗。
            ParameterError: 控制器參數無效。
        """
        executor = self.executor
        owned = None
        if executor is None and self.scenario.controller.workers > 0:
            owned = executor = ThreadPoolExecutor(max_workers=self.scenario.controller.workers)
        try:
            return self._run(executor)
        finally:
            if owned is not None:
                owned.shutdown()

    def _run(self, executor: Executor | None) -> RunLog:
        scenario = self.scenario
        self.engine.start()
        self.engine.advance_to(0.0)
        state, log = self._initialize(executor)
        z_star_prev: np.ndarray | None = None
        n_primal = log.meta["n_primal"]
        h = scenario.h

        for k in range(scenario.n_steps):
            t = k * h
            if k > 0:
                self.engine.advance_to(t)
            relinearize = self.engine.consume_relinearize() or (
                k > 0 and scenario.relinearize_every > 0 and k % scenario.relinearize_every == 0
            )
            regions, costs = self.fleet(t)
            params = self.params(t)
            params.validate()

            self.commanded.update(self.link.deliver(k))
            for key in self.outputs:
                region = regions.devices[key] if key in regions.devices else regions.member_region(key)
                lagged = actuate(self.commanded[key], self.outputs[key], scenario.tau, h)
                self.outputs[key] = continuous_region(region).project(lagged)

            if relinearize and k > 0:
                if self.mode == "linear":
                    logger.debug("線性受控廠不重新線性化")
                else:
                    self._linearize(t, executor)

            try:
                reading = self._evaluate(t)
            except (DivergenceError, CollapseError) as e:
                if k == 0:
                    raise
                logger.error("[t=%.1f] 潮流失敗，模擬中止: %s", t, e)
                log.aborted = True
                log.abort_reason = f"k={k}: {e}"
                break

            noise = scenario.noise
            setpoints = self.setpoints()
            measured = {key: _noisy(self.rng, value, noise.der) for key, value in sorted(setpoints.items())}
            frame = MeasurementFrame(
                t=t,
                v_mag=_noisy(self.rng, reading.v_mag, noise.v),
                iL_mag=_noisy(self.rng, reading.iL_mag, noise.iL),
                p0=_noisy(self.rng, reading.p0, noise.p0),
                der_outputs=measured,
            )

            x_true = {key: setpoints[key] for key in self.device_ids}
            xbar_true = {key: setpoints[key] for key in self.aggregation_ids}
            model_k = self.model.refresh_offsets(reading.v_mag, reading.iL_mag, reading.p0, x_true, xbar_true)
            pred_v, pred_iL, pred_p0 = model_k.predict(state.x, state.xbar)

            z_star = None
            if self.oracle:
                warm = None if z_star_prev is None else z_star_prev[:n_primal]
                z_star = solve_saddle_point(model_k, regions, costs, params, warm=warm).z
                z_star_prev = z_star

            commands, state = controller_step(state, frame, self.model, regions, costs, params, executor)
            self.link.send(k, commands)

            for key, spec in self._specs.items():
                device_state = self.states[key]
                p = float(self.outputs[key][0])
                if spec.kind in ("battery", "ev"):
                    device_state.advance(p, h)
                elif spec.kind == "hvac":
                    device_state.advance(p)

            i_max = params.i_max
            ratio = float(np.max(reading.iL_mag / i_max)) if len(i_max) else 0.0
            outputs = {key: value.tolist() for key, value in sorted(self.outputs.items())}
            outputs.update({key: setpoints[key].tolist() for key in self.aggregation_ids})
            log.append(
                StepRecord(
                    k=k,
                    t=t,
                    p0=reading.p0.tolist(),
                    q0=reading.q0.tolist(),
                    p0_meas=frame.p0.tolist(),
                    p0_set=params.p0_set.tolist(),
                    E=self.engine.tracking.E,
                    s=params.s,
                    v_true=reading.v_mag.tolist(),
                    v_meas=frame.v_mag.tolist(),
                    iL_true=reading.iL_mag.tolist(),
                    iL_meas=frame.iL_mag.tolist(),
                    max_v=reading.max_voltage,
                    min_v=reading.min_voltage,
                    max_iL_ratio=ratio,
                    outputs=outputs,
                    commands={key: np.asarray(v).tolist() for key, v in sorted(commands.items())},
                    x_hat=_stack(measured, self.device_ids + self.aggregation_ids).tolist(),
                    pred_v=pred_v.tolist(),
                    pred_iL=pred_iL.tolist(),
                    pred_p0=pred_p0.tolist(),
                    z=state.as_vector().tolist(),
                    dual_norms=state.duals.norms(),
                    disaggregation={key: dict(v) for key, v in state.diagnostics.items()},
                    iterations=reading.iterations,
                    residual=reading.residual,
                    z_star=None if z_star is None else z_star.tolist(),
                )
            )

        self.engine.stop()
        logger.info("場景 %s 執行完畢：%d 步%s", scenario.name, len(log), "（中止）" if log.aborted else "")
        return log


def run(
    scenario: Scenario,
    plant_mode: str | None = None,
    oracle: bool = False,
    executor: Executor | None = None,
) -> RunLog:
    """執行場景並回傳紀錄。參數同 SimulationEngine。"""
    return SimulationEngine(scenario, plant_mode, oracle, executor).run()
