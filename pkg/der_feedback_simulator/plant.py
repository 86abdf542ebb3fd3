"""受控廠介面 - 定義設定點到電網量測的統一抽象。

NonlinearPlant 以多相潮流求解器作為實體電網；LinearPlant 以線性靈敏度模型
取代電網，用於精確模型的收斂實驗。兩者都由 factory.create_plant() 建立。
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .errors import MeasurementError, UnknownDeviceError
from .network import (
    SLACK_ID,
    GridModel,
    InjectionPoint,
    build_admittance,
    build_delta_incidence,
    phase_index,
)
from .powerflow import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    PowerFlowSolver,
    assemble_injections,
    line_currents,
    monitored_entries,
)

if TYPE_CHECKING:
    from .sensitivity import SensitivityModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MeasurementSets:
    """量測集合。

    Attributes:
        voltages: 監測的 (節點, 相位)。
        lines: 監測的線路 id；每條線路的每一相各有一個電流量測。
    """

    voltages: tuple[tuple[int, str], ...] = ()
    lines: tuple[int, ...] = ()

    @classmethod
    def all_voltages(cls, grid: GridModel, lines: tuple[int, ...] = ()) -> MeasurementSets:
        return cls(voltages=tuple(phase_index(grid)), lines=tuple(lines))

    def validate(self, grid: GridModel) -> None:
        """確認量測點存在。

        Raises:
            MeasurementError: 節點相位不存在或為饋線頭。
            UnknownLineError: 線路 id 不存在。
        """
        index = phase_index(grid)
        for key in self.voltages:
            if key[0] == SLACK_ID or key not in index:
                raise MeasurementError(f"無法量測節點 {key[0]} 相位 {key[1]} 的電壓")
        for lid in self.lines:
            grid.line(lid)

    def line_entries(self, grid: GridModel) -> list[tuple[int, str]]:
        return monitored_entries(grid, self.lines)


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    """控制器每步收到的量測。

    Attributes:
        t: 模擬時間（秒）。
        v_mag: 監測電壓大小。
        iL_mag: 監測線路電流大小。
        p0: 饋線頭三相有功功率。
        der_outputs: 設備與聚合的實際輸出 (P, Q)。
    """

    t: float
    v_mag: np.ndarray
    iL_mag: np.ndarray
    p0: np.ndarray
    der_outputs: Mapping[str, np.ndarray] = field(default_factory=dict)

    def check(self, n_v: int, n_i: int) -> None:
        """確認維度與量測集合一致。

        Raises:
            MeasurementError: 維度不符。
        """
        if len(self.v_mag) != n_v or len(self.iL_mag) != n_i or len(self.p0) != 3:
            raise MeasurementError(
                f"量測維度不符：v={len(self.v_mag)}/{n_v}，"
                f"iL={len(self.iL_mag)}/{n_i}，p0={len(self.p0)}/3"
            )


@dataclass(frozen=True, eq=False)
class PlantReading:
    """一次受控廠求值的結果（無雜訊）。

    Attributes:
        v_mag: 監測電壓大小。
        iL_mag: 監測線路電流大小。
        p0: 饋線頭三相有功功率。
        q0: 饋線頭三相無功功率。
        v: 全部非饋線頭相位的複數電壓；線性受控廠為 None。
        iterations: 潮流迭代次數（線性受控廠為 0）。
        residual: 潮流殘差（線性受控廠為 0）。
    """

    v_mag: np.ndarray
    iL_mag: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    v: np.ndarray | None = None
    iterations: int = 0
    residual: float = 0.0

    @property
    def max_voltage(self) -> float:
        mags = np.abs(self.v) if self.v is not None else self.v_mag
        return float(np.max(mags)) if len(mags) else float("nan")

    @property
    def min_voltage(self) -> float:
        mags = np.abs(self.v) if self.v is not None else self.v_mag
        return float(np.min(mags)) if len(mags) else float("nan")


class PlantInterface(ABC):
    """受控廠的抽象介面。

    所有功率皆為 p.u.，以注入為正。設定點以設備或聚合 id 為鍵；
    負載以負載 id 為鍵，值為消耗的複功率 p + jq。
    """

    measurement_sets: MeasurementSets

    @property
    @abstractmethod
    def n_v(self) -> int: ...

    @property
    @abstractmethod
    def n_i(self) -> int: ...

    @abstractmethod
    def evaluate(
        self,
        setpoints: Mapping[str, np.ndarray],
        loads: Mapping[str, complex] | None = None,
        v_start: np.ndarray | None = None,
    ) -> PlantReading:
        """計算設定點下的電網狀態。

        Raises:
            DivergenceError: 非線性潮流未收斂。
            UnknownDeviceError: 設定點 id 未登錄。
        """


class NonlinearPlant(PlantInterface):
    """以固定點潮流求解器實作的受控廠。

    evaluate() 不修改內部狀態，可由多個執行緒同時呼叫。

    用法::

        plant = NonlinearPlant(grid, points, sets)
        reading = plant.evaluate({"pv1": np.array([0.01, 0.0])}, {"load2": 0.02 + 0.01j})
        print(reading.v_mag, reading.p0)
    """

    def __init__(
        self,
        grid: GridModel,
        points: Mapping[str, InjectionPoint],
        measurement_sets: MeasurementSets,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
    ) -> None:
        self.grid = grid
        self.points = dict(points)
        self.measurement_sets = measurement_sets
        self.tol = tol
        self.max_iter = max_iter

        measurement_sets.validate(grid)
        for point in self.points.values():
            point.validate(grid)

        self.blocks = build_admittance(grid)
        self.H = build_delta_incidence(
            grid, [(p.node, c) for p in self.points.values() for c in p.connections]
        )
        self.solver = PowerFlowSolver(self.blocks, self.H, grid.slack_voltage)
        self._v_rows = np.array(
            [self.blocks.phase_index[key] for key in measurement_sets.voltages], dtype=int
        )
        self._n_i = len(measurement_sets.line_entries(grid))
        logger.info(
            "非線性受控廠就緒：%d 個相位節點，%d 個注入點", self.blocks.n_phi, len(self.points)
        )

    @property
    def n_v(self) -> int:
        return len(self._v_rows)

    @property
    def n_i(self) -> int:
        return self._n_i

    def injections(
        self,
        setpoints: Mapping[str, np.ndarray],
        loads: Mapping[str, complex] | None = None,
    ):
        powers: dict[str, complex] = {}
        for key, x in setpoints.items():
            if key not in self.points:
                raise UnknownDeviceError(f"受控廠未登錄注入點: {key}")
            powers[key] = powers.get(key, 0.0) + complex(x[0], x[1])
        for key, s in (loads or {}).items():
            if key not in self.points:
                raise UnknownDeviceError(f"受控廠未登錄負載: {key}")
            powers[key] = powers.get(key, 0.0) - complex(s)
        return assemble_injections(self.blocks, self.H, self.points, powers)

    def evaluate(
        self,
        setpoints: Mapping[str, np.ndarray],
        loads: Mapping[str, complex] | None = None,
        v_start: np.ndarray | None = None,
    ) -> PlantReading:
        sol = self.solver.solve(
            self.injections(setpoints, loads), tol=self.tol, max_iter=self.max_iter, v_start=v_start
        )
        currents = line_currents(self.grid, sol.v, self.measurement_sets.lines)
        return PlantReading(
            v_mag=np.abs(sol.v[self._v_rows]),
            iL_mag=np.abs(currents),
            p0=sol.p0,
            q0=sol.q0,
            v=sol.v,
            iterations=sol.iterations,
            residual=sol.residual,
        )


class LinearPlant(PlantInterface):
    """以線性靈敏度模型取代電網的受控廠。

    負載不影響結果（已包含在模型的偏移量中）。
    """

    def __init__(self, model: SensitivityModel) -> None:
        self.model = model
        self.measurement_sets = model.measurement_sets

    @property
    def n_v(self) -> int:
        return len(self.model.a)

    @property
    def n_i(self) -> int:
        return len(self.model.b)

    def evaluate(
        self,
        setpoints: Mapping[str, np.ndarray],
        loads: Mapping[str, complex] | None = None,
        v_start: np.ndarray | None = None,
    ) -> PlantReading:
        x = {k: v for k, v in setpoints.items() if k in self.model.A}
        xbar = {k: v for k, v in setpoints.items() if k in self.model.A_bar}
        unknown = set(setpoints) - set(x) - set(xbar)
        if unknown:
            raise UnknownDeviceError(f"線性模型沒有這些 id 的靈敏度: {sorted(unknown)}")
        v_mag, iL_mag, p0 = self.model.predict(x, xbar)
        return PlantReading(v_mag=v_mag, iL_mag=iL_mag, p0=p0, q0=np.zeros(3))
