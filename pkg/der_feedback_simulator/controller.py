"""線上回授原始-對偶控制器。

每個取樣週期：先以新量測更新對偶變數，再以更新後的對偶做設備與聚合的
投影梯度步，最後對離散設備做誤差擴散。每步都建立新的狀態物件，
任何子步驟失敗時原狀態保持不變。
"""

from __future__ import annotations

import logging
from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .aggregation import DisaggregationResult, MemberCost, disaggregate, pull_interior
from .errors import ParameterError
from .plant import MeasurementFrame
from .regions import (
    Discrete,
    ErrorAccumulator,
    OperatingRegion,
    continuous_region,
    error_diffusion_step,
    fold_aggregate,
)
from .sensitivity import SensitivityModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControllerParams:
    """控制器參數（p.u.）。

    Attributes:
        alpha: 步長。
        r_p: 原始正則化係數。
        r_d: 對偶正則化係數。
        v_min: 電壓下限。
        v_max: 電壓上限。
        i_max: 每個監測線路電流量測的上限。
        E: 饋線頭追蹤帶寬（控制器使用的值，已扣除裕度）。
        s: 追蹤啟用旗標（0 或 1）。
        p0_set: 饋線頭三相有功設定值。
        h: 取樣週期（秒）。
        disagg_tol: 分解殘差容許值。
        disagg_max_iter: 分解迭代上限。
    """

    alpha: float = 0.2
    r_p: float = 1e-3
    r_d: float = 1e-4
    v_min: float = 0.95
    v_max: float = 1.05
    i_max: np.ndarray = field(default_factory=lambda: np.zeros(0))
    E: float = 0.0
    s: float = 0.0
    p0_set: np.ndarray = field(default_factory=lambda: np.zeros(3))
    h: float = 1.0
    disagg_tol: float = 1e-8
    disagg_max_iter: int = 1000

    def validate(self) -> None:
        """檢查參數。

        Raises:
            ParameterError: alpha、r_p、r_d 不為正，v_min >= v_max，或 E < 0。
        """
        if self.alpha <= 0 or self.r_p <= 0 or self.r_d <= 0:
            raise ParameterError(
                f"alpha、r_p、r_d 必須大於 0: alpha={self.alpha}, r_p={self.r_p}, r_d={self.r_d}"
            )
        if self.v_min >= self.v_max:
            raise ParameterError(f"v_min ({self.v_min}) 必須小於 v_max ({self.v_max})")
        if self.E < 0:
            raise ParameterError(f"追蹤帶寬 E 不可為負: {self.E}")
        if self.h <= 0:
            raise ParameterError(f"取樣週期 h 必須大於 0: {self.h}")

    def with_updates(self, **changes) -> ControllerParams:
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class DualState:
    """對偶變數，排列順序 d = (γ, ν, λ, μ, ζ)。"""

    mu: np.ndarray
    gamma: np.ndarray
    zeta: np.ndarray
    lam: np.ndarray
    nu: np.ndarray

    @classmethod
    def zeros(cls, n_v: int, n_i: int) -> DualState:
        return cls(np.zeros(n_v), np.zeros(n_v), np.zeros(n_i), np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.nu, self.lam, self.mu, self.zeta])

    @classmethod
    def from_vector(cls, d: np.ndarray, n_v: int, n_i: int) -> DualState:
        cuts = np.cumsum([n_v, 3, 3, n_v])
        gamma, nu, lam, mu, zeta = np.split(np.asarray(d, dtype=float), cuts)
        return cls(mu=mu, gamma=gamma, zeta=zeta, lam=lam, nu=nu)

    def min(self) -> float:
        d = self.as_vector()
        return float(d.min()) if d.size else 0.0

    def norms(self) -> dict[str, float]:
        return {
            name: float(np.linalg.norm(getattr(self, name)))
            for name in ("mu", "gamma", "zeta", "lam", "nu")
        }

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in ("mu", "gamma", "zeta", "lam", "nu")}


@dataclass(frozen=True, eq=False)
class FleetRegions:
    """目前步的可行區域。

    Attributes:
        devices: 設備 id 到區域（離散設備為 Discrete）。
        members: 聚合 id 到 {成員 id: 區域}。
    """

    devices: Mapping[str, OperatingRegion] = field(default_factory=dict)
    members: Mapping[str, Mapping[str, OperatingRegion]] = field(default_factory=dict)

    def continuous(self, device_id: str) -> OperatingRegion:
        return continuous_region(self.devices[device_id])

    def member_continuous(self, agg_id: str) -> dict[str, OperatingRegion]:
        return {k: continuous_region(r) for k, r in self.members[agg_id].items()}

    def folded(self, agg_id: str) -> OperatingRegion:
        members = self.member_continuous(agg_id)
        return fold_aggregate([members[k] for k in sorted(members)])

    def is_discrete(self, key: str) -> bool:
        if key in self.devices:
            return isinstance(self.devices[key], Discrete)
        return any(isinstance(m.get(key), Discrete) for m in self.members.values())

    def member_region(self, member_id: str) -> OperatingRegion:
        for members in self.members.values():
            if member_id in members:
                return members[member_id]
        raise KeyError(member_id)


@dataclass(frozen=True, eq=False)
class FleetCosts:
    """目前步的成本。

    Attributes:
        devices: 設備 id 到成本。
        members: 聚合 id 到 {成員 id: 成本}。
    """

    devices: Mapping[str, MemberCost] = field(default_factory=dict)
    members: Mapping[str, Mapping[str, MemberCost]] = field(default_factory=dict)

    @property
    def lipschitz(self) -> float:
        """所有成本梯度 Lipschitz 常數的最大值（聚合以成員最大值為上界）。"""
        values = [c.lipschitz for c in self.devices.values()]
        values += [c.lipschitz for m in self.members.values() for c in m.values()]
        return max(values, default=0.0)


@dataclass(frozen=True, eq=False)
class ControllerState:
    """控制器狀態。

    Attributes:
        duals: 對偶變數。
        x: 設備的連續設定點。
        xbar: 聚合設定點。
        xi: 聚合分解的對偶 ξ。
        err_acc: 離散設備與離散成員的誤差累積器。
        members: 聚合 id 到 {成員 id: 連續設定點}。
        k: 步數。
        diagnostics: 最近一步的分解資訊。
    """

    duals: DualState
    x: Mapping[str, np.ndarray]
    xbar: Mapping[str, np.ndarray]
    xi: Mapping[str, np.ndarray]
    err_acc: Mapping[str, ErrorAccumulator]
    members: Mapping[str, Mapping[str, np.ndarray]]
    k: int = 0
    diagnostics: Mapping[str, dict] = field(default_factory=dict)

    @classmethod
    def initial(cls, regions: FleetRegions, n_v: int, n_i: int) -> ControllerState:
        """全零初始化後投影到各區域。"""
        zero = np.zeros(2)
        x = {k: regions.continuous(k).project(zero) for k in sorted(regions.devices)}
        xbar = {k: regions.folded(k).project(zero) for k in sorted(regions.members)}
        members = {
            agg: {m: r.project(zero) for m, r in sorted(regions.member_continuous(agg).items())}
            for agg in sorted(regions.members)
        }
        err_acc = {k: ErrorAccumulator() for k in sorted(regions.devices) if regions.is_discrete(k)}
        for agg, ms in regions.members.items():
            for m, r in ms.items():
                if isinstance(r, Discrete):
                    err_acc[m] = ErrorAccumulator()
        return cls(
            duals=DualState.zeros(n_v, n_i),
            x=x,
            xbar=xbar,
            xi={k: np.zeros(2) for k in xbar},
            err_acc=err_acc,
            members=members,
        )

    def as_vector(self) -> np.ndarray:
        """z = [x, x̄, d]，設備與聚合各自依 id 排序。"""
        parts = [self.x[k] for k in sorted(self.x)] + [self.xbar[k] for k in sorted(self.xbar)]
        primal = np.concatenate(parts) if parts else np.zeros(0)
        return np.concatenate([primal, self.duals.as_vector()])


# ── 對偶步 ───────────────────────────────────────────────────────


def dual_step(duals: DualState, frame: MeasurementFrame, params: ControllerParams) -> DualState:
    """以量測更新對偶變數（投影到非負象限）。

    Raises:
        MeasurementError: 量測維度與對偶維度不符。
    """
    frame.check(len(duals.mu), len(duals.zeta))
    a, r_d, s = params.alpha, params.r_d, params.s
    v = np.asarray(frame.v_mag, dtype=float)
    i = np.asarray(frame.iL_mag, dtype=float)
    p0 = np.asarray(frame.p0, dtype=float)
    return DualState(
        mu=np.maximum(0.0, duals.mu + a * (params.v_min - v - r_d * duals.mu)),
        gamma=np.maximum(0.0, duals.gamma + a * (v - params.v_max - r_d * duals.gamma)),
        zeta=np.maximum(0.0, duals.zeta + a * (i - params.i_max - r_d * duals.zeta)),
        lam=np.maximum(0.0, duals.lam + a * (s * (p0 - params.p0_set - params.E) - r_d * duals.lam)),
        nu=np.maximum(0.0, duals.nu + a * (s * (params.p0_set - p0 - params.E) - r_d * duals.nu)),
    )


def _dual_pull(A: np.ndarray, B: np.ndarray, M: np.ndarray, duals: DualState, params: ControllerParams) -> np.ndarray:
    return (
        params.s * M.T @ (duals.lam - duals.nu)
        + A.T @ (duals.gamma - duals.mu)
        + B.T @ duals.zeta
    )


# ── 原始步 ───────────────────────────────────────────────────────


def device_step(
    x_hat,
    duals: DualState,
    model: SensitivityModel,
    device_id: str,
    region: OperatingRegion,
    cost: MemberCost,
    params: ControllerParams,
) -> np.ndarray:
    """設備的投影梯度步。

    x+ = proj(x̂ - α(∇f(x̂) + s M^T(λ-ν) + A^T(γ-μ) + B^T ζ + r_p x̂))

    Raises:
        UnknownDeviceError: 模型中沒有此設備的靈敏度。
    """
    x_hat = np.asarray(x_hat, dtype=float)
    A, B, M = model.matrices(device_id)
    direction = cost.gradient(x_hat) + _dual_pull(A, B, M, duals, params) + params.r_p * x_hat
    return continuous_region(region).project(x_hat - params.alpha * direction)


def aggregation_step(
    xbar_hat,
    xi_prev,
    duals: DualState,
    model: SensitivityModel,
    agg_id: str,
    folded: OperatingRegion,
    members: Mapping[str, tuple[OperatingRegion, MemberCost]],
    params: ControllerParams,
) -> tuple[np.ndarray, DisaggregationResult]:
    """聚合的投影梯度步與分解。

    x̄+ = proj(x̂̄ - α(-ξ + s M̄^T(λ-ν) + Ā^T(γ-μ) + B̄^T ζ + r_p x̂̄))，
    再把 x̄+ 拉離邊界後分解給成員，得到新的 ξ。

    Returns:
        (x̄+, 分解結果)。

    Raises:
        InfeasibleSetpointError: 分解不可行。
    """
    xbar_hat = np.asarray(xbar_hat, dtype=float)
    xi_prev = np.asarray(xi_prev, dtype=float)
    A, B, M = model.matrices(agg_id)
    direction = -xi_prev + _dual_pull(A, B, M, duals, params) + params.r_p * xbar_hat
    xbar = folded.project(xbar_hat - params.alpha * direction)
    xbar, pulled = pull_interior(folded, xbar)
    if pulled:
        logger.warning("聚合 %s 的設定值貼近邊界，已往內部移動", agg_id)
    result = disaggregate(
        members, xbar, xi_prev, tol=params.disagg_tol, max_iter=params.disagg_max_iter
    )
    return xbar, replace(result, pulled=pulled)


# ── 完整一步 ─────────────────────────────────────────────────────


def controller_step(
    state: ControllerState,
    frame: MeasurementFrame,
    model: SensitivityModel,
    regions: FleetRegions,
    costs: FleetCosts,
    params: ControllerParams,
    executor: Executor | None = None,
) -> tuple[dict[str, np.ndarray], ControllerState]:
    """執行一個取樣週期的控制器更新。

    連續設備以量測輸出 x̂ 為梯度起點；離散設備以上一步的連續迭代值為起點，
    連續步在凸包上進行，再以誤差擴散取得離散指令。
    聚合以量測總輸出為起點，含離散成員時改用上一步的 x̄。

    Args:
        state: 目前狀態（不會被修改）。
        frame: 本步量測。
        model: 靈敏度模型。
        regions: 本步可行區域。
        costs: 本步成本。
        params: 控制器參數。
        executor: 選用的執行器，用於並行的設備與聚合更新。

    Returns:
        (指令, 新狀態)。指令以設備 id 與成員 id 為鍵，值為可實作的 (P, Q)。
    """
    duals = dual_step(state.duals, frame, params)
    measured = frame.der_outputs

    def seed(key: str, fallback: np.ndarray, discrete: bool) -> np.ndarray:
        if discrete or key not in measured:
            return fallback
        return np.asarray(measured[key], dtype=float)

    def update_device(key: str) -> np.ndarray:
        x_hat = seed(key, state.x[key], regions.is_discrete(key))
        return device_step(x_hat, duals, model, key, regions.devices[key], costs.devices[key], params)

    def update_aggregation(key: str) -> tuple[np.ndarray, DisaggregationResult]:
        member_regions = regions.member_continuous(key)
        has_discrete = any(regions.is_discrete(m) for m in member_regions)
        xbar_hat = seed(key, state.xbar[key], has_discrete)
        members = {m: (member_regions[m], costs.members[key][m]) for m in sorted(member_regions)}
        return aggregation_step(
            xbar_hat, state.xi[key], duals, model, key, regions.folded(key), members, params
        )

    device_ids = sorted(regions.devices)
    agg_ids = sorted(regions.members)
    if executor is None:
        new_x = [update_device(k) for k in device_ids]
        agg_results = [update_aggregation(k) for k in agg_ids]
    else:
        new_x = list(executor.map(update_device, device_ids))
        agg_results = list(executor.map(update_aggregation, agg_ids))

    x = dict(zip(device_ids, new_x))
    xbar = {k: r[0] for k, r in zip(agg_ids, agg_results)}
    xi = {k: r[1].xi for k, r in zip(agg_ids, agg_results)}
    members = {k: dict(r[1].member_setpoints) for k, r in zip(agg_ids, agg_results)}

    commands: dict[str, np.ndarray] = {}
    err_acc = dict(state.err_acc)
    for key in device_ids:
        commands[key] = x[key]
        if regions.is_discrete(key):
            commands[key], err_acc[key] = error_diffusion_step(
                regions.devices[key], x[key], err_acc.get(key, ErrorAccumulator())
            )
    for agg in agg_ids:
        for m, setpoint in sorted(members[agg].items()):
            commands[m] = setpoint
            region = regions.members[agg][m]
            if isinstance(region, Discrete):
                commands[m], err_acc[m] = error_diffusion_step(
                    region, setpoint, err_acc.get(m, ErrorAccumulator())
                )

    diagnostics = {
        k: {
            "xbar": xbar[k].tolist(),
            "xi": xi[k].tolist(),
            "gap": r[1].gap,
            "iterations": r[1].iterations,
            "converged": r[1].converged,
            "pulled": r[1].pulled,
        }
        for k, r in zip(agg_ids, agg_results)
    }
    new_state = ControllerState(
        duals=duals,
        x=x,
        xbar=xbar,
        xi=xi,
        err_acc=err_acc,
        members=members,
        k=state.k + 1,
        diagnostics=diagnostics,
    )
    return commands, new_state
