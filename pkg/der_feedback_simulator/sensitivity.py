"""線性靈敏度模型 - 設定點到電壓、線路電流與饋線頭功率的仿射近似。

預設以中央差分透過非線性受控廠求得每個設備的 2 行靈敏度，
偏移量使模型在線性化點上完全重現量測。
"""

from __future__ import annotations

import json
import logging
from abc import ABC, abstractmethod
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .errors import CollapseError, DivergenceError, LinearizationError, ParameterError, UnknownDeviceError
from .plant import MeasurementSets, PlantInterface

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4


def _as_vectors(values: Mapping[str, object] | None) -> dict[str, np.ndarray]:
    return {k: np.asarray(v, dtype=float).reshape(2) for k, v in (values or {}).items()}


@dataclass(frozen=True, eq=False)
class SensitivityModel:
    """仿射量測模型 |v| ≈ Σ A_j x_j + Σ Ā_j x̄_j + a（電流、饋線頭功率同理）。

    Attributes:
        A: 設備 id 到 |Mv|x2 電壓靈敏度。
        B: 設備 id 到 |Mi|x2 電流靈敏度。
        M: 設備 id 到 3x2 饋線頭有功功率靈敏度。
        A_bar: 聚合 id 到電壓靈敏度。
        B_bar: 聚合 id 到電流靈敏度。
        M_bar: 聚合 id 到饋線頭功率靈敏度。
        a: 電壓偏移量。
        b: 電流偏移量。
        m: 饋線頭功率偏移量。
        base_x: 線性化時的設備設定點。
        base_xbar: 線性化時的聚合設定點。
        base_loads: 線性化時的負載。
        measurement_sets: 量測集合。
    """

    A: Mapping[str, np.ndarray]
    B: Mapping[str, np.ndarray]
    M: Mapping[str, np.ndarray]
    A_bar: Mapping[str, np.ndarray]
    B_bar: Mapping[str, np.ndarray]
    M_bar: Mapping[str, np.ndarray]
    a: np.ndarray
    b: np.ndarray
    m: np.ndarray
    base_x: Mapping[str, np.ndarray] = field(default_factory=dict)
    base_xbar: Mapping[str, np.ndarray] = field(default_factory=dict)
    base_loads: Mapping[str, complex] = field(default_factory=dict)
    measurement_sets: MeasurementSets = field(default_factory=MeasurementSets)

    # -- 查詢 --

    @property
    def device_ids(self) -> list[str]:
        return sorted(self.A)

    @property
    def aggregation_ids(self) -> list[str]:
        return sorted(self.A_bar)

    def matrices(self, key: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """回傳 (A, B, M)，key 可為設備或聚合 id。

        Raises:
            UnknownDeviceError: 模型中沒有該 id。
        """
        if key in self.A:
            return self.A[key], self.B[key], self.M[key]
        if key in self.A_bar:
            return self.A_bar[key], self.B_bar[key], self.M_bar[key]
        raise UnknownDeviceError(f"靈敏度模型中沒有 {key}")

    # -- 求值 --

    def predict(
        self,
        x: Mapping[str, np.ndarray],
        xbar: Mapping[str, np.ndarray] | None = None,
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """仿射求值；未列出的 id 視為零設定點。"""
        return predict(self, x, xbar)

    def refresh_offsets(
        self,
        v_mag: np.ndarray,
        iL_mag: np.ndarray,
        p0: np.ndarray,
        x: Mapping[str, np.ndarray],
        xbar: Mapping[str, np.ndarray] | None = None,
    ) -> SensitivityModel:
        """保留斜率，重設偏移量使模型在 (x, x̄) 上等於給定量測。"""
        v0, i0, p00 = _linear_part(self, _as_vectors(x), _as_vectors(xbar))
        return replace(
            self,
            a=np.asarray(v_mag, dtype=float) - v0,
            b=np.asarray(iL_mag, dtype=float) - i0,
            m=np.asarray(p0, dtype=float) - p00,
        )

    def jacobians(self, order: list[str]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """依 order 堆疊成 (∇|v|, ∇|iL|, ∇p0) 三個矩陣，每個 id 佔兩行。"""
        n_v, n_i = len(self.a), len(self.b)
        if not order:
            return np.zeros((n_v, 0)), np.zeros((n_i, 0)), np.zeros((3, 0))
        mats = [self.matrices(key) for key in order]
        return (
            np.hstack([m[0] for m in mats]),
            np.hstack([m[1] for m in mats]),
            np.hstack([m[2] for m in mats]),
        )

    # -- 序列化 --

    def to_dict(self) -> dict:
        def mats(d: Mapping[str, np.ndarray]) -> dict:
            return {k: np.asarray(v).tolist() for k, v in sorted(d.items())}

        return {
            "A": mats(self.A),
            "B": mats(self.B),
            "M": mats(self.M),
            "A_bar": mats(self.A_bar),
            "B_bar": mats(self.B_bar),
            "M_bar": mats(self.M_bar),
            "a": self.a.tolist(),
            "b": self.b.tolist(),
            "m": self.m.tolist(),
            "base_x": mats(self.base_x),
            "base_xbar": mats(self.base_xbar),
            "base_loads": {k: [complex(s).real, complex(s).imag] for k, s in self.base_loads.items()},
            "measurement_sets": {
                "voltages": [list(key) for key in self.measurement_sets.voltages],
                "lines": list(self.measurement_sets.lines),
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SensitivityModel:
        n_v = len(data["a"])
        n_i = len(data["b"])

        def mats(key: str, rows: int) -> dict[str, np.ndarray]:
            return {k: np.array(v, dtype=float).reshape(rows, 2) for k, v in data.get(key, {}).items()}

        sets = data.get("measurement_sets", {})
        return cls(
            A=mats("A", n_v),
            B=mats("B", n_i),
            M=mats("M", 3),
            A_bar=mats("A_bar", n_v),
            B_bar=mats("B_bar", n_i),
            M_bar=mats("M_bar", 3),
            a=np.array(data["a"], dtype=float),
            b=np.array(data["b"], dtype=float),
            m=np.array(data["m"], dtype=float),
            base_x=_as_vectors(data.get("base_x")),
            base_xbar=_as_vectors(data.get("base_xbar")),
            base_loads={k: complex(v[0], v[1]) for k, v in data.get("base_loads", {}).items()},
            measurement_sets=MeasurementSets(
                voltages=tuple((int(n), str(p)) for n, p in sets.get("voltages", [])),
                lines=tuple(int(x) for x in sets.get("lines", [])),
            ),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> SensitivityModel:
        return cls.from_dict(json.loads(text))


def _linear_part(
    model: SensitivityModel,
    x: Mapping[str, np.ndarray],
    xbar: Mapping[str, np.ndarray],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v = np.zeros(len(model.a))
    i = np.zeros(len(model.b))
    p = np.zeros(3)
    for key, value in x.items():
        if key not in model.A:
            raise UnknownDeviceError(f"靈敏度模型中沒有設備 {key}")
        v += model.A[key] @ value
        i += model.B[key] @ value
        p += model.M[key] @ value
    for key, value in xbar.items():
        if key not in model.A_bar:
            raise UnknownDeviceError(f"靈敏度模型中沒有聚合 {key}")
        v += model.A_bar[key] @ value
        i += model.B_bar[key] @ value
        p += model.M_bar[key] @ value
    return v, i, p


def predict(
    model: SensitivityModel,
    x: Mapping[str, np.ndarray],
    xbar: Mapping[str, np.ndarray] | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """以線性模型預測 (|v|, |iL|, p0)。

    Raises:
        UnknownDeviceError: x 或 x̄ 含模型沒有的 id。
    """
    v, i, p = _linear_part(model, _as_vectors(x), _as_vectors(xbar))
    return v + model.a, i + model.b, p + model.m


def gain_bound(model: SensitivityModel) -> float:
    """堆疊靈敏度矩陣的最大譜範數 G = max(G_v, G_0, G_L)。"""
    order = model.device_ids + model.aggregation_ids
    norms = [
        float(np.linalg.norm(J, 2)) if J.size else 0.0
        for J in model.jacobians(order)
    ]
    return max(norms)


# ── 靈敏度提供者 ──────────────────────────────────────────────────


class SensitivityProvider(ABC):
    """由受控廠建立 SensitivityModel 的策略介面。"""

    @abstractmethod
    def build(
        self,
        plant: PlantInterface,
        base_x: Mapping[str, np.ndarray],
        base_xbar: Mapping[str, np.ndarray] | None = None,
        loads: Mapping[str, complex] | None = None,
    ) -> SensitivityModel:
        """在 (base_x, base_xbar, loads) 上線性化。"""


class FiniteDifferenceProvider(SensitivityProvider):
    """以 ±step 中央差分透過受控廠求靈敏度。

    每個 id 的 P、Q 兩行彼此獨立，可交給 executor 並行計算；
    結果依 id 排序組裝，與排程無關。

    Args:
        step: 擾動量（p.u. 功率）。
        executor: 選用的執行器；None 表示循序計算。
    """

    def __init__(self, step: float = DEFAULT_STEP, executor: Executor | None = None) -> None:
        if step <= 0:
            raise ParameterError(f"擾動量必須大於 0: {step}")
        self.step = step
        self.executor = executor

    def build(
        self,
        plant: PlantInterface,
        base_x: Mapping[str, np.ndarray],
        base_xbar: Mapping[str, np.ndarray] | None = None,
        loads: Mapping[str, complex] | None = None,
    ) -> SensitivityModel:
        x = _as_vectors(base_x)
        xbar = _as_vectors(base_xbar)
        loads = dict(loads or {})
        base_setpoints = {**x, **xbar}
        base = plant.evaluate(base_setpoints, loads)

        def column(job: tuple[str, int]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
            key, axis = job
            delta = np.zeros(2)
            delta[axis] = self.step
            readings = []
            for sign in (1.0, -1.0):
                perturbed = dict(base_setpoints)
                perturbed[key] = base_setpoints[key] + sign * delta
                try:
                    readings.append(plant.evaluate(perturbed, loads, v_start=base.v))
                except (DivergenceError, CollapseError) as e:
                    raise LinearizationError(f"設備 {key} 擾動後潮流失敗: {e}", device_id=key) from e
            hi, lo = readings
            scale = 2.0 * self.step
            return (
                (hi.v_mag - lo.v_mag) / scale,
                (hi.iL_mag - lo.iL_mag) / scale,
                (hi.p0 - lo.p0) / scale,
            )

        keys = sorted(x) + sorted(xbar)
        jobs = [(key, axis) for key in keys for axis in (0, 1)]
        if self.executor is None:
            cols = [column(job) for job in jobs]
        else:
            cols = list(self.executor.map(column, jobs))

        mats: dict[str, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
        for n, key in enumerate(keys):
            p_col, q_col = cols[2 * n], cols[2 * n + 1]
            mats[key] = tuple(np.column_stack([p_col[c], q_col[c]]) for c in range(3))

        model = SensitivityModel(
            A={k: mats[k][0] for k in sorted(x)},
            B={k: mats[k][1] for k in sorted(x)},
            M={k: mats[k][2] for k in sorted(x)},
            A_bar={k: mats[k][0] for k in sorted(xbar)},
            B_bar={k: mats[k][1] for k in sorted(xbar)},
            M_bar={k: mats[k][2] for k in sorted(xbar)},
            a=np.zeros(plant.n_v),
            b=np.zeros(plant.n_i),
            m=np.zeros(3),
            base_x=x,
            base_xbar=xbar,
            base_loads=loads,
            measurement_sets=plant.measurement_sets,
        )
        logger.info("線性化完成：%d 個設備、%d 個聚合", len(x), len(xbar))
        return model.refresh_offsets(base.v_mag, base.iL_mag, base.p0, x, xbar)


def linearize(
    plant: PlantInterface,
    base_x: Mapping[str, np.ndarray],
    base_xbar: Mapping[str, np.ndarray] | None = None,
    loads: Mapping[str, complex] | None = None,
    step: float = DEFAULT_STEP,
    executor: Executor | None = None,
) -> SensitivityModel:
    """以中央差分線性化受控廠。

    Args:
        plant: 受控廠（通常為 NonlinearPlant）。
        base_x: 設備線性化點。
        base_xbar: 聚合線性化點。
        loads: 負載。
        step: 擾動量，預設 1e-4 p.u.。
        executor: 選用的執行器。

    Returns:
        SensitivityModel。

    Raises:
        ParameterError: step <= 0。
        LinearizationError: 擾動點潮流發散。
    """
    return FiniteDifferenceProvider(step, executor).build(plant, base_x, base_xbar, loads)
