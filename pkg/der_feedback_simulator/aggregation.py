"""聚合設定值分解 - 以對偶上升解內層鞍點問題。

聚合器把設定值 x̄ 拆給同一注入點的成員設備，
min Σ f_i(x_i) s.t. Σ x_i = x̄，x_i 在各自區域內。
耦合約束的最佳對偶 ξ 的負值即為聚合成本的梯度。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import InfeasibleSetpointError, UnsupportedRegionError
from .regions import (
    Discrete,
    Disk,
    Interval,
    OperatingRegion,
    Polygon,
    Singleton,
    Translated,
    convex_hull,
)

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 1000
WEIGHT_FLOOR = 1e-6
_DIRECTIONS = 64


@dataclass(frozen=True)
class MemberCost:
    """二次成本 c_p (P - p_ref)^2 + c_q (Q - q_ref)^2。

    Attributes:
        c_p: 有功權重（>= 0）。
        c_q: 無功權重（>= 0）。
        p_ref: 有功參考值。
        q_ref: 無功參考值。
    """

    c_p: float = 0.0
    c_q: float = 0.0
    p_ref: float = 0.0
    q_ref: float = 0.0

    def __post_init__(self) -> None:
        if self.c_p < 0 or self.c_q < 0:
            raise ValueError(f"成本權重不可為負: c_p={self.c_p}, c_q={self.c_q}")

    @property
    def weights(self) -> np.ndarray:
        return np.array([self.c_p, self.c_q])

    @property
    def ref(self) -> np.ndarray:
        return np.array([self.p_ref, self.q_ref])

    @property
    def lipschitz(self) -> float:
        """梯度的 Lipschitz 常數。"""
        return 2.0 * max(self.c_p, self.c_q)

    def value(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.ref
        return float(self.weights @ (d * d))

    def gradient(self, x) -> np.ndarray:
        return 2.0 * self.weights * (np.asarray(x, dtype=float) - self.ref)


@dataclass(frozen=True, eq=False)
class DisaggregationResult:
    """分解結果。

    Attributes:
        member_setpoints: 成員 id 到 (P, Q)。
        xi: 和約束的對偶變數。
        gap: ||Σ x_i - x̄||。
        iterations: 對偶上升次數。
        converged: gap 是否達到容許值。
    """

    member_setpoints: Mapping[str, np.ndarray]
    xi: np.ndarray
    gap: float
    iterations: int
    converged: bool = True
    pulled: bool = False

    @property
    def total(self) -> np.ndarray:
        return np.sum(list(self.member_setpoints.values()), axis=0) if self.member_setpoints else np.zeros(2)


# ── 加權投影 ──────────────────────────────────────────────────────


def _scaled_projection(region: OperatingRegion, weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    s = np.sqrt(weights)
    scaled = Polygon(tuple(map(tuple, region.array * s)))
    return scaled.project(u * s) / s


def _disk_weighted(region: Disk, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    if region.contains(u, tol=0.0):
        return u.copy()
    d = region.normalized()
    if d.r == 0.0:
        return np.zeros(2)

    def objective(x: np.ndarray) -> float:
        return float(w @ ((x - u) ** 2))

    candidates = [
        np.array([p_star, min(max(u[1], -d.g(p_star)), d.g(p_star))]) for p_star in (d.p_lo, d.p_hi)
    ]
    norm_u = float(np.hypot(u[0], u[1]))
    if norm_u > d.r:

        def phi(eta: float) -> float:
            return float(np.linalg.norm(w * u / (w + eta))) - d.r

        upper = 2.0 * float(np.max(w)) * norm_u / d.r
        eta = brentq(phi, 0.0, upper, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        x = w * u / (w + eta)
        if d.p_lo <= x[0] <= d.p_hi:
            candidates.append(x)
    return min(candidates, key=objective)


def minimize_quadratic(region: OperatingRegion, weights, u) -> np.ndarray:
    """求 argmin_x Σ w_k (x_k - u_k)^2，x 在區域內。

    Args:
        region: 可行區域；離散集合以凸包處理。
        weights: 兩個正權重。
        u: 無約束最小點。

    Raises:
        UnsupportedRegionError: DiskIntervalSum 搭配不相等權重。
    """
    w = np.maximum(np.asarray(weights, dtype=float), WEIGHT_FLOOR)
    u = np.asarray(u, dtype=float)
    if isinstance(region, Discrete):
        region = convex_hull(region)
    if isinstance(region, Translated):
        return minimize_quadratic(region.base, w, u - region.offset) + region.offset
    if isinstance(region, (Interval, Singleton)):
        return region.project(u)
    if isinstance(region, Disk):
        return _disk_weighted(region, w, u)
    if isinstance(region, Polygon):
        return _scaled_projection(region, w, u)
    if math.isclose(w[0], w[1], rel_tol=1e-12):
        return region.project(u)
    raise UnsupportedRegionError(f"{type(region).__name__} 只支援相等權重的投影")


# ── 可行性與內點 ──────────────────────────────────────────────────


def feasible_by_support(
    regions: Sequence[OperatingRegion],
    xbar,
    tol: float = 1e-9,
    n_directions: int = _DIRECTIONS,
) -> bool:
    """以支撐函數檢查 x̄ 是否在 Minkowski 和內（外近似檢查）。"""
    xbar = np.asarray(xbar, dtype=float)
    angles = np.linspace(0.0, 2.0 * np.pi, n_directions, endpoint=False)
    for theta in angles:
        u = np.array([np.cos(theta), np.sin(theta)])
        if u @ xbar > sum(r.support(u) for r in regions) + tol:
            return False
    return True


def pull_interior(
    region: OperatingRegion,
    xbar,
    rel_margin: float = 1e-6,
) -> tuple[np.ndarray, bool]:
    """把貼近邊界的 x̄ 往區域中心拉，使邊界距離至少 rel_margin * 直徑。

    Returns:
        (調整後的 x̄, 是否有調整)。
    """
    xbar = np.asarray(xbar, dtype=float)
    target = rel_margin * region.diameter()
    if target <= 0.0 or region.margin(xbar) >= target:
        return xbar, False
    center = region.center()
    if region.margin(center) < target:
        return xbar, False
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = (lo + hi) / 2.0
        if region.margin(center + mid * (xbar - center)) >= target:
            lo = mid
        else:
            hi = mid
    return center + lo * (xbar - center), True


# ── 分解 ─────────────────────────────────────────────────────────


def _inner(members: Mapping[str, tuple[OperatingRegion, MemberCost]], xi: np.ndarray) -> dict[str, np.ndarray]:
    out = {}
    for key, (region, cost) in members.items():
        w = np.maximum(cost.weights, WEIGHT_FLOOR)
        out[key] = minimize_quadratic(region, w, cost.ref - xi / (2.0 * w))
    return out


def _dual_step_scale(members) -> np.ndarray:
    """每個座標的對偶步長 1 / Σ 1/(2 w_i)，只計入該座標可變動的成員。"""
    curvature = np.zeros(2)
    for region, cost in members:
        p_min, p_max, q_min, q_max = region.bounding_box()
        w = np.maximum(cost.weights, WEIGHT_FLOOR)
        extent = np.array([p_max - p_min, q_max - q_min])
        curvature += np.where(extent > 0.0, 1.0 / (2.0 * w), 0.0)
    return np.divide(1.0, curvature, out=np.zeros(2), where=curvature > 0.0)


def _dual_value(
    members: Mapping[str, tuple[OperatingRegion, MemberCost]],
    x: Mapping[str, np.ndarray],
    xi: np.ndarray,
    xbar: np.ndarray,
) -> float:
    total = 0.0
    for key, (_, cost) in members.items():
        total += cost.value(x[key]) + float(xi @ x[key])
    return total - float(xi @ xbar)


def disaggregate(
    members: Mapping[str, tuple[OperatingRegion, MemberCost]],
    xbar,
    xi_warm=None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> DisaggregationResult:
    """把聚合設定值分解給成員設備。

    對偶上升：內層對每個成員求 argmin f_i(x) + ξ^T x（加權投影），
    外層以逐座標預條件的 Barzilai-Borwein 步長加回溯更新 ξ，直到 ||Σ x_i - x̄|| <= tol。
    鎖定的成員（Singleton）先從 x̄ 中扣除。

    Args:
        members: 成員 id 到 (區域, 成本)。
        xbar: 聚合設定值。
        xi_warm: ξ 的初值，None 表示 0。
        tol: 和約束殘差容許值。
        max_iter: 迭代上限。

    Returns:
        DisaggregationResult；未收斂時回傳最佳迭代並標記 converged=False。

    Raises:
        InfeasibleSetpointError: x̄ 不在成員區域的 Minkowski 和內。
    """
    xbar = np.asarray(xbar, dtype=float)
    xi = np.zeros(2) if xi_warm is None else np.asarray(xi_warm, dtype=float).copy()

    regions = {
        k: convex_hull(r) if isinstance(r, Discrete) else r for k, (r, _) in members.items()
    }
    locked = {k: r.point for k, r in regions.items() if isinstance(r, Singleton)}
    free = {k: (regions[k], c) for k, (_, c) in members.items() if k not in locked}
    target = xbar - sum(locked.values(), np.zeros(2))

    if not feasible_by_support([r for r, _ in free.values()] or [Singleton(0.0, 0.0)], target):
        raise InfeasibleSetpointError(f"聚合設定值 {xbar.tolist()} 不在成員區域的 Minkowski 和內")

    if not free:
        gap = float(np.linalg.norm(target))
        return DisaggregationResult(dict(locked), xi, gap, 0, gap <= tol)

    if len(free) == 1:
        (key, (region, cost)), = free.items()
        x = region.project(target)
        setpoints = {**locked, key: x}
        gap = float(np.linalg.norm(x - target))
        return DisaggregationResult(setpoints, -cost.gradient(x), gap, 0, gap <= tol)

    scale = _dual_step_scale(free.values())

    x = _inner(free, xi)
    residual = sum(x.values(), np.zeros(2)) - target
    value = _dual_value(free, x, xi, target)
    best = (float(np.linalg.norm(residual)), x, xi)
    tau = 1.0
    prev_xi, prev_res = None, None
    iterations = 0

    while best[0] > tol and iterations < max_iter:
        iterations += 1
        if prev_xi is not None:
            s = xi - prev_xi
            y = residual - prev_res
            active = scale > 0
            sy = float(s[active] @ y[active])
            tau = float(np.sum(s[active] ** 2 / scale[active])) / -sy if sy < 0 else 1.0
            tau = min(max(tau, 1.0), 1e6)
        step = scale * residual
        while True:
            cand_xi = xi + tau * step
            cand_x = _inner(free, cand_xi)
            cand_value = _dual_value(free, cand_x, cand_xi, target)
            if tau <= 1.0 or cand_value >= value + 1e-4 * tau * float(residual @ step):
                break
            tau = max(tau / 2.0, 1.0)
        prev_xi, prev_res = xi, residual
        xi, x, value = cand_xi, cand_x, cand_value
        residual = sum(x.values(), np.zeros(2)) - target
        gap = float(np.linalg.norm(residual))
        if gap < best[0]:
            best = (gap, x, xi)

    gap, x, xi = best
    converged = gap <= tol
    if not converged:
        logger.warning("分解未收斂：%d 次迭代後殘差 %.3e", iterations, gap)
    else:
        logger.debug("分解收斂：%d 次迭代，殘差 %.2e", iterations, gap)
    return DisaggregationResult({**locked, **x}, xi, gap, iterations, converged)


def aggregate_gradient(result: DisaggregationResult) -> np.ndarray:
    """聚合成本的梯度 -ξ；未收斂的結果會記錄警告。"""
    if not result.converged:
        logger.warning("使用未收斂的分解結果計算聚合梯度（殘差 %.3e）", result.gap)
    return -np.asarray(result.xi, dtype=float)


def aggregate_cost(members: Mapping[str, tuple[OperatingRegion, MemberCost]], result: DisaggregationResult) -> float:
    """聚合成本 f̄(x̄) = Σ f_i(x_i*)。"""
    return sum(cost.value(result.member_setpoints[k]) for k, (_, cost) in members.items())


# ── 對偶界 ───────────────────────────────────────────────────────


def dual_bound(members: Mapping[str, tuple[OperatingRegion, MemberCost]]) -> float:
    """對偶變數的上界 ||(H^T)^+|| * max ||∇F||。

    H = [I ... I] 為和約束矩陣，(H^T)^+ 的範數為 1/sqrt(n)；
    ||∇F|| 取各成員在其區域外框四角上的最大梯度範數。
    在所有成員解都落在區域內部時成立。
    """
    n = len(members)
    if n == 0:
        return 0.0
    total = 0.0
    for region, cost in members.values():
        p_min, p_max, q_min, q_max = region.bounding_box()
        corners = [np.array([p, q]) for p in (p_min, p_max) for q in (q_min, q_max)]
        total += max(float(np.sum(cost.gradient(c) ** 2)) for c in corners)
    return math.sqrt(total) / math.sqrt(n)


def estimate_dual_lipschitz(
    members: Mapping[str, tuple[OperatingRegion, MemberCost]],
    start,
    end,
    resolution: int = 32,
    tol: float = DEFAULT_TOL,
) -> float:
    """沿線段 [start, end] 估計 ξ(x̄) 的 Lipschitz 常數。"""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    points = [start + (end - start) * s for s in np.linspace(0.0, 1.0, resolution + 1)]
    xi = None
    xis = []
    for p in points:
        result = disaggregate(members, p, xi, tol=tol)
        xi = result.xi
        xis.append(xi)
    step = float(np.linalg.norm(end - start)) / resolution
    if step == 0.0:
        return 0.0
    return max(float(np.linalg.norm(b - a)) / step for a, b in zip(xis, xis[1:]))
