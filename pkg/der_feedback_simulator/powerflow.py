"""多相交流潮流 - 固定點（Z-bus 式）迭代求解器。

注入功率以「注入為正」表示：發電為正，負載為負。
饋線頭功率 p0 為由上游流入饋線的功率，淨負載時 p0 > 0。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import CollapseError, DivergenceError, PhaseError
from .network import (
    PHASES,
    SLACK_ID,
    AdmittanceBlocks,
    DeltaIncidence,
    GridModel,
    InjectionPoint,
    phase_index,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 200
_COLLAPSE_LEVEL = 1e-6


@dataclass(frozen=True, eq=False)
class InjectionSpec:
    """淨注入複功率（p.u.）。

    Attributes:
        sY: Y 接注入，依 phase_index 排列。
        sDelta: 三角形接注入，只在 H 的有效列上非零。
    """

    sY: np.ndarray
    sDelta: np.ndarray

    @classmethod
    def zeros(cls, n_phi: int) -> InjectionSpec:
        return cls(np.zeros(n_phi, dtype=complex), np.zeros(n_phi, dtype=complex))

    def scaled(self, factor: float) -> InjectionSpec:
        return InjectionSpec(self.sY * factor, self.sDelta * factor)

    def __add__(self, other: InjectionSpec) -> InjectionSpec:
        return InjectionSpec(self.sY + other.sY, self.sDelta + other.sDelta)

    @property
    def total(self) -> complex:
        return complex(self.sY.sum() + self.sDelta.sum())


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    """收斂的潮流解。

    Attributes:
        v: 各相對地電壓。
        i: 淨相注入電流 YL0 v0 + YLL v。
        i_delta: 三角形接線的相間電流（非有效列為 0）。
        p0: 饋線頭三相有功功率。
        q0: 饋線頭三相無功功率。
        iterations: 迭代次數。
        residual: 潮流方程式殘差（無窮範數）。
    """

    v: np.ndarray
    i: np.ndarray
    i_delta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    iterations: int
    residual: float


def assemble_injections(
    blocks: AdmittanceBlocks,
    H: DeltaIncidence,
    points: Mapping[str, InjectionPoint],
    powers: Mapping[str, complex],
) -> InjectionSpec:
    """把各注入點的總複功率分配到 sY / sDelta。

    功率平均分配到注入點的每個接線：Y 接加到該相的 sY，
    三角形接加到 H 對應列的 sDelta。

    Args:
        blocks: 導納分塊（提供 phase_index）。
        H: 三角形接線關聯矩陣。
        points: id 到注入點的對應。
        powers: id 到總複功率（p.u.）的對應；未列出的 id 視為 0。

    Returns:
        InjectionSpec。

    Raises:
        PhaseError: 三角形接線未登錄在 H 中。
    """
    n = blocks.n_phi
    sY = np.zeros(n, dtype=complex)
    sDelta = np.zeros(n, dtype=complex)
    for key, s in powers.items():
        point = points[key]
        share = complex(s) / len(point.connections)
        for conn in point.connections:
            if conn.is_delta:
                row = H.delta_index.get((point.node, conn))
                if row is None:
                    raise PhaseError(f"節點 {point.node} 的 {conn.value} 接線未登錄於 H")
                sDelta[row] += share
            else:
                sY[blocks.phase_index[(point.node, conn.value)]] += share
    return InjectionSpec(sY, sDelta)


class PowerFlowSolver:
    """固定點潮流求解器，YLL 只分解一次。

    solve() 不修改求解器狀態，多個執行緒可共用同一個實例。

    用法::

        solver = PowerFlowSolver(blocks, H, grid.slack_voltage)
        sol = solver.solve(inj)
        print(sol.p0, sol.iterations)
    """

    def __init__(self, blocks: AdmittanceBlocks, H: DeltaIncidence, v0: np.ndarray) -> None:
        self.blocks = blocks
        self.H = H
        self.v0 = np.asarray(v0, dtype=complex)
        self._lu = lu_factor(blocks.YLL)
        self._i0 = blocks.YL0 @ self.v0
        self._rows = H.active_rows
        self._H_active = H.H[self._rows] if len(self._rows) else np.zeros((0, blocks.n_phi))
        self.no_load_voltage = -lu_solve(self._lu, self._i0)
        """零注入時的電壓 -YLL^-1 YL0 v0。"""

    # -- 內部方法 --

    def _delta_currents(self, v: np.ndarray, s_delta: np.ndarray) -> np.ndarray:
        i_delta = np.zeros_like(v)
        if len(self._rows):
            v_ll = self._H_active @ v
            if np.min(np.abs(v_ll)) < _COLLAPSE_LEVEL:
                raise CollapseError("三角形接線的線間電壓接近零")
            i_delta[self._rows] = np.conj(s_delta[self._rows] / v_ll)
        return i_delta

    def _mismatch(self, v: np.ndarray, inj: InjectionSpec) -> tuple[float, np.ndarray, np.ndarray]:
        i = self._i0 + self.blocks.YLL @ v
        i_delta = self._delta_currents(v, inj.sDelta)
        mismatch = v * (self.H.H.T @ np.conj(i_delta)) + inj.sY - v * np.conj(i)
        return float(np.max(np.abs(mismatch))), i, i_delta

    # -- 求解 --

    def solve(
        self,
        inj: InjectionSpec,
        tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER,
        v_start: np.ndarray | None = None,
    ) -> PowerFlowSolution:
        """以固定點迭代求解潮流。

        v <- YLL^-1 ( conj(sY / v) + H^T conj(sDelta / (H v)) - YL0 v0 )，
        預設由無載電壓開始。

        Args:
            inj: 淨注入功率。
            tol: 殘差容許值。
            max_iter: 迭代上限。
            v_start: 起始電壓，None 表示無載電壓。

        Returns:
            PowerFlowSolution。

        Raises:
            ValueError: tol <= 0。
            DivergenceError: 未在 max_iter 內收斂。
            CollapseError: 電壓接近零。
        """
        if tol <= 0:
            raise ValueError("tol 必須大於 0")
        v = (self.no_load_voltage if v_start is None else np.asarray(v_start, dtype=complex)).copy()
        residual, i, i_delta = self._mismatch(v, inj)
        iterations = 0
        while residual > tol:
            if iterations >= max_iter:
                raise DivergenceError(
                    f"潮流在 {max_iter} 次迭代內未收斂，殘差 {residual:.3e}",
                    residual=residual,
                    iterations=iterations,
                )
            if np.min(np.abs(v)) < _COLLAPSE_LEVEL:
                raise CollapseError("節點電壓接近零，潮流崩潰")
            rhs = np.conj(inj.sY / v) + self.H.H.T @ i_delta - self._i0
            v = lu_solve(self._lu, rhs)
            iterations += 1
            if not np.all(np.isfinite(v)):
                raise DivergenceError("潮流迭代出現非有限值", residual=float("inf"), iterations=iterations)
            residual, i, i_delta = self._mismatch(v, inj)

        p0, q0 = head_power(self.blocks, v, self.v0)
        logger.debug("潮流收斂：%d 次迭代，殘差 %.2e", iterations, residual)
        return PowerFlowSolution(
            v=v, i=i, i_delta=i_delta, p0=p0, q0=q0, iterations=iterations, residual=residual
        )


def solve(
    grid: AdmittanceBlocks,
    H: DeltaIncidence,
    inj: InjectionSpec,
    v0: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowSolution:
    """單次潮流求解（每次呼叫都重新分解 YLL）。"""
    return PowerFlowSolver(grid, H, v0).solve(inj, tol=tol, max_iter=max_iter)


def head_power(grid: AdmittanceBlocks, v: np.ndarray, v0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """饋線頭功率 s0 = diag(v0) conj(Y00 v0 + Y0L v)。

    Returns:
        (p0, q0) 三相向量。
    """
    v0 = np.asarray(v0, dtype=complex)
    if v.shape != (grid.n_phi,) or v0.shape != (3,):
        raise ValueError("電壓向量維度不符")
    s0 = v0 * np.conj(grid.Y00 @ v0 + grid.Y0L @ v)
    return s0.real.copy(), s0.imag.copy()


def monitored_entries(grid: GridModel, line_ids: Sequence[int]) -> list[tuple[int, str]]:
    """監測線路的 (線路 id, 相位) 列表，依輸入順序與相位 a<b<c。"""
    return [(lid, ph) for lid in line_ids for ph in grid.line(lid).phases]


def line_currents(
    grid: GridModel,
    v: np.ndarray,
    monitored: Sequence[int],
    v0: np.ndarray | None = None,
) -> np.ndarray:
    """監測線路送端的各相電流 (Yser + Ysh/2) v_from - Yser v_to。

    Args:
        grid: 網路模型。
        v: 非饋線頭節點電壓。
        monitored: 線路 id 列表。
        v0: 饋線頭電壓，預設為 grid.slack_voltage。

    Returns:
        依 monitored_entries 排列的複數電流。

    Raises:
        UnknownLineError: 線路 id 不存在。
    """
    v0 = grid.slack_voltage if v0 is None else np.asarray(v0, dtype=complex)
    index = phase_index(grid)

    def node_voltage(node_id: int, phases: str) -> np.ndarray:
        if node_id == SLACK_ID:
            return np.array([v0[PHASES.index(ph)] for ph in phases])
        return np.array([v[index[(node_id, ph)]] for ph in phases])

    currents: list[complex] = []
    for lid in monitored:
        ln = grid.line(lid)
        vf = node_voltage(ln.from_node, ln.phases)
        vt = node_voltage(ln.to_node, ln.phases)
        currents.extend((ln.y_series + ln.y_shunt / 2.0) @ vf - ln.y_series @ vt)
    return np.array(currents, dtype=complex)
