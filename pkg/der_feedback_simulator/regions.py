"""DER 可行區域代數 - 圓盤段、區間、離散集合、投影與 Minkowski 和。

所有區域都是不可變的值物件，座標為 (P, Q)，單位為 p.u.。
時變區域（電池 SoC、PV 可用功率）由場景層每步換上新的區域物件。
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.spatial import ConvexHull

from .errors import PreconditionError, SchemaError, UnsupportedRegionError

_TOL = 1e-9


def _vec(y) -> np.ndarray:
    return np.asarray(y, dtype=float).reshape(2)


def _unit(u: np.ndarray) -> np.ndarray | None:
    n = float(np.hypot(u[0], u[1]))
    return None if n == 0.0 else u / n


class OperatingRegion(ABC):
    """(P, Q) 可行區域的共同介面。"""

    @abstractmethod
    def contains(self, y, tol: float = _TOL) -> bool:
        """y 是否在區域內（容許 tol）。"""

    @abstractmethod
    def project(self, y) -> np.ndarray:
        """最近點投影；凸區域為唯一的歐氏投影。"""

    @abstractmethod
    def support_point(self, u) -> np.ndarray:
        """使 u^T x 最大的區域點。"""

    @abstractmethod
    def bounding_box(self) -> tuple[float, float, float, float]:
        """(P 最小, P 最大, Q 最小, Q 最大)。"""

    @abstractmethod
    def margin(self, y) -> float:
        """到邊界的帶號距離：內部為正，外部為負。

        退化為線段的區域（Q 固定為 0）以相對內部計算。
        """

    def support(self, u) -> float:
        u = _vec(u)
        return float(u @ self.support_point(u))

    def center(self) -> np.ndarray:
        p_min, p_max, q_min, q_max = self.bounding_box()
        return self.project([(p_min + p_max) / 2.0, (q_min + q_max) / 2.0])

    def diameter(self) -> float:
        p_min, p_max, q_min, q_max = self.bounding_box()
        return float(math.hypot(p_max - p_min, q_max - q_min))


# ── 基本區域 ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class Disk(OperatingRegion):
    """圓盤段 {p_lo <= P <= p_hi, P^2 + Q^2 <= r^2}，用於 PV 與儲能逆變器。

    允許 p_hi > r 或 p_lo < -r（與裁切後的區域為同一集合）；
    normalized() 回傳裁切後的表示。
    """

    p_lo: float
    p_hi: float
    r: float

    def __post_init__(self) -> None:
        if self.r < 0:
            raise ValueError(f"半徑不可為負: {self.r}")
        if self.p_lo > self.p_hi:
            raise ValueError(f"p_lo ({self.p_lo}) 大於 p_hi ({self.p_hi})")
        if self.p_lo > self.r + _TOL or self.p_hi < -self.r - _TOL:
            raise ValueError(f"圓盤段為空集合: p in [{self.p_lo}, {self.p_hi}], r={self.r}")

    @property
    def lo(self) -> float:
        return max(self.p_lo, -self.r)

    @property
    def hi(self) -> float:
        return min(self.p_hi, self.r)

    @property
    def is_normalized(self) -> bool:
        return -self.r <= self.p_lo and self.p_hi <= self.r

    def normalized(self) -> Disk:
        return self if self.is_normalized else Disk(self.lo, self.hi, self.r)

    def g(self, p: float) -> float:
        """P 處的 Q 上限。"""
        return math.sqrt(max(self.r * self.r - p * p, 0.0))

    def contains(self, y, tol: float = _TOL) -> bool:
        y = _vec(y)
        return (
            self.lo - tol <= y[0] <= self.hi + tol
            and float(np.hypot(y[0], y[1])) <= self.r + tol
        )

    def _slab_face(self, p_star: float, q: float) -> np.ndarray:
        cap = self.g(p_star)
        return np.array([p_star, min(max(q, -cap), cap)])

    def project(self, y) -> np.ndarray:
        y = _vec(y)
        norm = float(np.hypot(y[0], y[1]))
        z = y if norm <= self.r else y * (self.r / norm)
        if self.lo <= z[0] <= self.hi:
            return z.copy()
        p_star = self.hi if z[0] > self.hi else self.lo
        return self._slab_face(p_star, y[1])

    def support_point(self, u) -> np.ndarray:
        u = _unit(_vec(u))
        if u is None:
            return self.center()
        z = self.r * u
        if self.lo <= z[0] <= self.hi:
            return z
        p_star = self.hi if z[0] > self.hi else self.lo
        return np.array([p_star, math.copysign(self.g(p_star), u[1]) if u[1] != 0 else 0.0])

    def bounding_box(self) -> tuple[float, float, float, float]:
        q = self.r if self.lo <= 0.0 <= self.hi else max(self.g(self.lo), self.g(self.hi))
        return self.lo, self.hi, -q, q

    def center(self) -> np.ndarray:
        return np.array([(self.lo + self.hi) / 2.0, 0.0])

    def margin(self, y) -> float:
        y = _vec(y)
        if not self.contains(y, tol=0.0):
            return -float(np.linalg.norm(y - self.project(y)))
        return float(min(self.r - np.hypot(y[0], y[1]), y[0] - self.lo, self.hi - y[0]))


@dataclass(frozen=True)
class Interval(OperatingRegion):
    """只控制有功功率的設備 {p_lo <= P <= p_hi, Q = 0}。"""

    p_lo: float
    p_hi: float

    def __post_init__(self) -> None:
        if self.p_lo > self.p_hi:
            raise ValueError(f"p_lo ({self.p_lo}) 大於 p_hi ({self.p_hi})")

    def contains(self, y, tol: float = _TOL) -> bool:
        y = _vec(y)
        return abs(y[1]) <= tol and self.p_lo - tol <= y[0] <= self.p_hi + tol

    def project(self, y) -> np.ndarray:
        y = _vec(y)
        return np.array([min(max(y[0], self.p_lo), self.p_hi), 0.0])

    def support_point(self, u) -> np.ndarray:
        u = _vec(u)
        if u[0] > 0:
            return np.array([self.p_hi, 0.0])
        if u[0] < 0:
            return np.array([self.p_lo, 0.0])
        return self.center()

    def bounding_box(self) -> tuple[float, float, float, float]:
        return self.p_lo, self.p_hi, 0.0, 0.0

    def center(self) -> np.ndarray:
        return np.array([(self.p_lo + self.p_hi) / 2.0, 0.0])

    def margin(self, y) -> float:
        y = _vec(y)
        if not self.contains(y, tol=0.0):
            return -float(np.linalg.norm(y - self.project(y)))
        return float(min(y[0] - self.p_lo, self.p_hi - y[0]))


@dataclass(frozen=True)
class Singleton(OperatingRegion):
    """鎖定的單一設定點（例如 HVAC 最短關機時間）。"""

    p: float
    q: float = 0.0

    @property
    def point(self) -> np.ndarray:
        return np.array([self.p, self.q])

    def contains(self, y, tol: float = _TOL) -> bool:
        return float(np.linalg.norm(_vec(y) - self.point)) <= tol

    def project(self, y) -> np.ndarray:
        return self.point

    def support_point(self, u) -> np.ndarray:
        return self.point

    def bounding_box(self) -> tuple[float, float, float, float]:
        return self.p, self.p, self.q, self.q

    def margin(self, y) -> float:
        return -float(np.linalg.norm(_vec(y) - self.point))


@dataclass(frozen=True)
class Discrete(OperatingRegion):
    """離散設定點集合（HVAC 開關、EV 充電檔位）。

    投影取最近點，距離相同時取索引最小者。
    """

    points: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.points) == 0:
            raise ValueError("離散集合不可為空")
        object.__setattr__(
            self, "points", tuple((float(p), float(q)) for p, q in self.points)
        )

    @property
    def array(self) -> np.ndarray:
        return np.array(self.points, dtype=float)

    def contains(self, y, tol: float = _TOL) -> bool:
        d = np.linalg.norm(self.array - _vec(y), axis=1)
        return bool(np.min(d) <= tol)

    def project(self, y) -> np.ndarray:
        d2 = np.sum((self.array - _vec(y)) ** 2, axis=1)
        return self.array[int(np.argmin(d2))].copy()

    def support_point(self, u) -> np.ndarray:
        return self.array[int(np.argmax(self.array @ _vec(u)))].copy()

    def bounding_box(self) -> tuple[float, float, float, float]:
        pts = self.array
        return (
            float(pts[:, 0].min()), float(pts[:, 0].max()),
            float(pts[:, 1].min()), float(pts[:, 1].max()),
        )

    def center(self) -> np.ndarray:
        return self.project(self.array.mean(axis=0))

    def margin(self, y) -> float:
        y = _vec(y)
        return -float(np.linalg.norm(y - self.project(y)))


# ── 聚合區域 ──────────────────────────────────────────────────────


@dataclass(frozen=True)
class DiskIntervalSum(OperatingRegion):
    """圓盤段與區間的 Minkowski 和。

    {p_lo <= P <= p_hi, |Q| <= g(P)}，g 在 [a, b] 上為 r，兩側為半徑 r 的圓弧。
    等價於「線段 [a, b] 加半徑 r 的圓」（跑道形）與 P 帶狀區的交集。

    Attributes:
        p_lo: 和的 P 下限（p_lo1 + a）。
        p_hi: 和的 P 上限（p_hi1 + b）。
        r: 圓盤半徑。
        a: 區間下限。
        b: 區間上限。
    """

    p_lo: float
    p_hi: float
    r: float
    a: float
    b: float

    def __post_init__(self) -> None:
        if self.r < 0 or self.a > self.b or self.p_lo > self.p_hi:
            raise ValueError(f"無效的 DiskIntervalSum: {self}")
        if self.p_lo < self.a - self.r - _TOL or self.p_hi > self.b + self.r + _TOL:
            raise ValueError("DiskIntervalSum 的 P 範圍超出圓弧")
        if self.p_lo > self.a + _TOL or self.p_hi < self.b - _TOL:
            raise ValueError("DiskIntervalSum 的 P 範圍必須涵蓋 [a, b]")

    def g(self, p: float) -> float:
        if p < self.a:
            d = p - self.a
        elif p > self.b:
            d = p - self.b
        else:
            return self.r
        return math.sqrt(max(self.r * self.r - d * d, 0.0))

    def _spine(self, p: float) -> float:
        return min(max(p, self.a), self.b)

    def contains(self, y, tol: float = _TOL) -> bool:
        y = _vec(y)
        if not (self.p_lo - tol <= y[0] <= self.p_hi + tol):
            return False
        return float(np.hypot(y[0] - self._spine(y[0]), y[1])) <= self.r + tol

    def project(self, y) -> np.ndarray:
        y = _vec(y)
        s = np.array([self._spine(y[0]), 0.0])
        d = y - s
        norm = float(np.hypot(d[0], d[1]))
        z = y if norm <= self.r else s + d * (self.r / norm)
        if self.p_lo <= z[0] <= self.p_hi:
            return z.copy()
        p_star = self.p_hi if z[0] > self.p_hi else self.p_lo
        cap = self.g(p_star)
        return np.array([p_star, min(max(y[1], -cap), cap)])

    def support_point(self, u) -> np.ndarray:
        u = _unit(_vec(u))
        if u is None:
            return self.center()
        s = self.b if u[0] > 0 else self.a if u[0] < 0 else (self.a + self.b) / 2.0
        z = np.array([s, 0.0]) + self.r * u
        if self.p_lo <= z[0] <= self.p_hi:
            return z
        p_star = self.p_hi if z[0] > self.p_hi else self.p_lo
        return np.array([p_star, math.copysign(self.g(p_star), u[1]) if u[1] != 0 else 0.0])

    def bounding_box(self) -> tuple[float, float, float, float]:
        return self.p_lo, self.p_hi, -self.r, self.r

    def center(self) -> np.ndarray:
        return np.array([(self.p_lo + self.p_hi) / 2.0, 0.0])

    def margin(self, y) -> float:
        y = _vec(y)
        if not self.contains(y, tol=0.0):
            return -float(np.linalg.norm(y - self.project(y)))
        spine_gap = float(np.hypot(y[0] - self._spine(y[0]), y[1]))
        return float(min(self.r - spine_gap, y[0] - self.p_lo, self.p_hi - y[0]))


@dataclass(frozen=True)
class Polygon(OperatingRegion):
    """凸多邊形（逆時針頂點）；兩個頂點時為線段。"""

    vertices: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.vertices) < 2:
            raise ValueError("多邊形至少需要兩個頂點")
        object.__setattr__(
            self, "vertices", tuple((float(p), float(q)) for p, q in self.vertices)
        )

    @property
    def array(self) -> np.ndarray:
        return np.array(self.vertices, dtype=float)

    def _edges(self):
        v = self.array
        n = len(v)
        for i in range(n if n > 2 else 1):
            yield v[i], v[(i + 1) % n]

    @staticmethod
    def _segment_projection(y: np.ndarray, p: np.ndarray, q: np.ndarray) -> np.ndarray:
        d = q - p
        denom = float(d @ d)
        t = 0.0 if denom == 0.0 else min(max(float((y - p) @ d) / denom, 0.0), 1.0)
        return p + t * d

    def _inside(self, y: np.ndarray, tol: float) -> bool:
        if len(self.vertices) < 3:
            return False
        for p, q in self._edges():
            e = q - p
            cross = e[0] * (y[1] - p[1]) - e[1] * (y[0] - p[0])
            if cross < -tol * max(1.0, float(np.linalg.norm(e))):
                return False
        return True

    def contains(self, y, tol: float = _TOL) -> bool:
        y = _vec(y)
        if self._inside(y, tol):
            return True
        return float(np.linalg.norm(y - self.project(y))) <= tol

    def project(self, y) -> np.ndarray:
        y = _vec(y)
        if self._inside(y, 0.0):
            return y.copy()
        best, best_d = None, math.inf
        for p, q in self._edges():
            z = self._segment_projection(y, p, q)
            d = float(np.sum((z - y) ** 2))
            if d < best_d:
                best, best_d = z, d
        return best

    def support_point(self, u) -> np.ndarray:
        v = self.array
        return v[int(np.argmax(v @ _vec(u)))].copy()

    def bounding_box(self) -> tuple[float, float, float, float]:
        v = self.array
        return float(v[:, 0].min()), float(v[:, 0].max()), float(v[:, 1].min()), float(v[:, 1].max())

    def center(self) -> np.ndarray:
        return self.array.mean(axis=0)

    def margin(self, y) -> float:
        y = _vec(y)
        if not self._inside(y, 0.0):
            return -float(np.linalg.norm(y - self.project(y)))
        dists = []
        for p, q in self._edges():
            e = q - p
            dists.append((e[0] * (y[1] - p[1]) - e[1] * (y[0] - p[0])) / float(np.linalg.norm(e)))
        return float(min(dists))


@dataclass(frozen=True)
class Translated(OperatingRegion):
    """平移後的區域 base + (dp, dq)。

    聚合中鎖定成員的設定點總和以此加到其餘成員的折疊區域上。
    """

    base: OperatingRegion
    dp: float = 0.0
    dq: float = 0.0

    @property
    def offset(self) -> np.ndarray:
        return np.array([self.dp, self.dq])

    def contains(self, y, tol: float = _TOL) -> bool:
        return self.base.contains(_vec(y) - self.offset, tol)

    def project(self, y) -> np.ndarray:
        return np.asarray(self.base.project(_vec(y) - self.offset), dtype=float) + self.offset

    def support_point(self, u) -> np.ndarray:
        return np.asarray(self.base.support_point(u), dtype=float) + self.offset

    def bounding_box(self) -> tuple[float, float, float, float]:
        p_min, p_max, q_min, q_max = self.base.bounding_box()
        return p_min + self.dp, p_max + self.dp, q_min + self.dq, q_max + self.dq

    def center(self) -> np.ndarray:
        return np.asarray(self.base.center(), dtype=float) + self.offset

    def margin(self, y) -> float:
        return self.base.margin(_vec(y) - self.offset)


def project(region: OperatingRegion, y) -> np.ndarray:
    """歐氏投影到區域上（Discrete 取最近點，平手取索引最小者）。"""
    return region.project(y)


# ── Minkowski 和 ─────────────────────────────────────────────────


def minkowski_interval(i1: Interval, i2: Interval) -> Interval:
    """兩個區間的 Minkowski 和。"""
    return Interval(i1.p_lo + i2.p_lo, i1.p_hi + i2.p_hi)


def minkowski_disk_interval(d: Disk, i: Interval) -> DiskIntervalSum:
    """圓盤段與區間的精確 Minkowski 和。

    Raises:
        PreconditionError: 圓盤段不滿足 p_lo in [-r, 0]、p_hi in [0, r]。
    """
    if not (-d.r - _TOL <= d.p_lo <= _TOL and -_TOL <= d.p_hi <= d.r + _TOL):
        raise PreconditionError(
            f"圓盤段需滿足 p_lo in [-r, 0] 且 p_hi in [0, r]，"
            f"目前 p_lo={d.p_lo}, p_hi={d.p_hi}, r={d.r}"
        )
    return DiskIntervalSum(
        p_lo=d.p_lo + i.p_lo, p_hi=d.p_hi + i.p_hi, r=d.r, a=i.p_lo, b=i.p_hi
    )


def inner_radius(d1: Disk, d2: Disk) -> float:
    """兩圓盤段和的內近似半徑（可取的最大值）。"""
    d1, d2 = d1.normalized(), d2.normalized()
    lo, hi = d1.p_lo + d2.p_lo, d1.p_hi + d2.p_hi
    alpha = max(lo, min(0.0, hi)) ** 2
    b1 = min(max(d1.p_lo**2, d1.p_hi**2), d1.r**2)
    b2 = min(max(d2.p_lo**2, d2.p_hi**2), d2.r**2)
    cross = math.sqrt((d1.r**2 - b1) * (d2.r**2 - b2))
    return math.sqrt(max(d1.r**2 + d2.r**2 + alpha - b1 - b2 + 2.0 * cross, 0.0))


def minkowski_disk_disk_inner(d1: Disk, d2: Disk) -> Disk:
    """兩圓盤段 Minkowski 和的內近似 Disk(p_lo1+p_lo2, p_hi1+p_hi2, rho)。"""
    n1, n2 = d1.normalized(), d2.normalized()
    return Disk(n1.p_lo + n2.p_lo, n1.p_hi + n2.p_hi, inner_radius(n1, n2))


def _as_interval(region: OperatingRegion) -> Interval | None:
    if isinstance(region, Interval):
        return region
    if isinstance(region, Polygon):
        v = region.array
        if np.all(np.abs(v[:, 1]) <= _TOL):
            return Interval(float(v[:, 0].min()), float(v[:, 0].max()))
    return None


def _fold_free(regions: Sequence[OperatingRegion]) -> OperatingRegion:
    if len(regions) == 1 and not isinstance(regions[0], Discrete):
        return regions[0]

    disks: list[Disk] = []
    intervals: list[Interval] = []
    for region in regions:
        if isinstance(region, Disk):
            disks.append(region.normalized())
            continue
        interval = _as_interval(region)
        if interval is None:
            raise UnsupportedRegionError(
                f"fold_aggregate 不支援 {type(region).__name__}；離散集合請先取凸包"
            )
        intervals.append(interval)

    disk = None
    for d in disks:
        disk = d if disk is None else minkowski_disk_disk_inner(disk, d)
    interval = None
    for i in intervals:
        interval = i if interval is None else minkowski_interval(interval, i)

    if disk is None:
        return interval
    if interval is None:
        return disk
    return minkowski_disk_interval(disk.normalized(), interval)


def _shift(region: OperatingRegion, dp: float, dq: float) -> OperatingRegion:
    if dp == 0.0 and dq == 0.0:
        return region
    if abs(dq) <= _TOL:
        if isinstance(region, Interval):
            return Interval(region.p_lo + dp, region.p_hi + dp)
        if isinstance(region, DiskIntervalSum):
            return DiskIntervalSum(
                region.p_lo + dp, region.p_hi + dp, region.r, region.a + dp, region.b + dp
            )
    return Translated(region, dp, dq)


def fold_aggregate(regions: Sequence[OperatingRegion]) -> OperatingRegion:
    """折疊成員區域為聚合區域的內近似。

    鎖定的成員（Singleton）先抽出成平移量；其餘成員中圓盤段兩兩以內近似相加，
    區間直接相加，最後以精確的圓盤段+區間和合併，再平移回鎖定設定點的總和。
    全部成員都鎖定時回傳設定點總和的 Singleton。

    Raises:
        ValueError: regions 為空。
        UnsupportedRegionError: 含離散集合或非退化的多邊形。
    """
    if not regions:
        raise ValueError("聚合成員不可為空")
    offset = np.zeros(2)
    free: list[OperatingRegion] = []
    for region in regions:
        if isinstance(region, Singleton):
            offset = offset + region.point
        else:
            free.append(region)
    if not free:
        return Singleton(float(offset[0]), float(offset[1]))
    return _shift(_fold_free(free), float(offset[0]), float(offset[1]))


# ── 凸包與誤差擴散 ───────────────────────────────────────────────


def convex_hull(d: Discrete) -> OperatingRegion:
    """離散集合的凸包。

    單點回傳 Singleton；Q 全為 0 時回傳 Interval；
    其他共線情況回傳兩頂點的 Polygon，一般情況回傳凸多邊形。
    """
    pts = np.unique(d.array, axis=0)
    if len(pts) == 1:
        return Singleton(float(pts[0, 0]), float(pts[0, 1]))
    if np.all(np.abs(pts[:, 1]) <= _TOL):
        return Interval(float(pts[:, 0].min()), float(pts[:, 0].max()))
    centered = pts - pts.mean(axis=0)
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        direction = np.linalg.svd(centered)[2][0]
        proj = centered @ direction
        ends = pts[[int(np.argmin(proj)), int(np.argmax(proj))]]
        return Polygon(tuple(map(tuple, ends)))
    hull = ConvexHull(pts)
    return Polygon(tuple(map(tuple, pts[hull.vertices])))


def continuous_region(region: OperatingRegion) -> OperatingRegion:
    """控制器在連續更新時使用的區域：離散集合取凸包，其餘不變。"""
    return convex_hull(region) if isinstance(region, Discrete) else region


@dataclass(frozen=True, eq=False)
class ErrorAccumulator:
    """誤差擴散累積器。

    Attributes:
        eps: 累積的（連續 - 實作）設定點誤差。
        history_len: 已累積的步數。
        max_norm: 執行期間 ||eps|| 的最大值（即量測到的 E_j）。
    """

    eps: np.ndarray = field(default_factory=lambda: np.zeros(2))
    history_len: int = 0
    max_norm: float = 0.0

    def average_gap_bound(self, k: int | None = None) -> float:
        """時間平均誤差的上界 E_j / k。"""
        k = self.history_len if k is None else k
        return math.inf if k <= 0 else self.max_norm / k

    def to_dict(self) -> dict:
        return {"eps": self.eps.tolist(), "history_len": self.history_len, "max_norm": self.max_norm}

    @classmethod
    def from_dict(cls, data: Mapping) -> ErrorAccumulator:
        return cls(np.array(data["eps"], dtype=float), int(data["history_len"]), float(data["max_norm"]))


def error_diffusion_step(
    region_discrete: OperatingRegion,
    x_cont,
    acc: ErrorAccumulator,
) -> tuple[np.ndarray, ErrorAccumulator]:
    """由連續設定點計算可實作的離散設定點。

    x_impl = proj(x_cont + eps)，eps' = eps + x_cont - x_impl。

    Returns:
        (x_impl, 更新後的累積器)。
    """
    x_cont = _vec(x_cont)
    x_impl = region_discrete.project(x_cont + acc.eps)
    eps = acc.eps + x_cont - x_impl
    return x_impl, ErrorAccumulator(
        eps=eps,
        history_len=acc.history_len + 1,
        max_norm=max(acc.max_norm, float(np.linalg.norm(eps))),
    )


# ── JSON 規格 ────────────────────────────────────────────────────


def region_from_spec(spec: Mapping, scale: float = 1.0) -> OperatingRegion:
    """由場景 JSON 的區域描述建立區域。

    Args:
        spec: {"disk": [p_lo, p_hi, r]}、{"interval": [p_lo, p_hi]}、
              {"discrete": [[P, Q], ...]}、{"singleton": [P, Q]}、
              {"polygon": [[P, Q], ...]} 其中之一。
        scale: 乘到所有數值上的換算係數（例如 kW 轉 p.u.）。

    Raises:
        SchemaError: 描述格式錯誤。
    """
    if not isinstance(spec, Mapping) or len(spec) != 1:
        raise SchemaError(f"區域描述必須恰好有一個鍵: {spec!r}")
    (kind, values), = spec.items()
    try:
        if kind == "disk":
            p_lo, p_hi, r = (float(v) * scale for v in values)
            return Disk(p_lo, p_hi, r)
        if kind == "interval":
            p_lo, p_hi = (float(v) * scale for v in values)
            return Interval(p_lo, p_hi)
        if kind == "discrete":
            return Discrete(tuple((float(p) * scale, float(q) * scale) for p, q in values))
        if kind == "singleton":
            p, q = (float(v) * scale for v in values)
            return Singleton(p, q)
        if kind == "polygon":
            return convex_hull(Discrete(tuple((float(p) * scale, float(q) * scale) for p, q in values)))
    except (TypeError, ValueError) as e:
        raise SchemaError(f"無效的區域描述 {spec!r}: {e}") from e
    raise SchemaError(f"未知的區域型別: {kind!r}")


def region_to_spec(region: OperatingRegion, scale: float = 1.0) -> dict:
    """region_from_spec 的反向轉換（值除以 scale）。"""
    if isinstance(region, Disk):
        return {"disk": [region.p_lo / scale, region.p_hi / scale, region.r / scale]}
    if isinstance(region, Interval):
        return {"interval": [region.p_lo / scale, region.p_hi / scale]}
    if isinstance(region, Singleton):
        return {"singleton": [region.p / scale, region.q / scale]}
    if isinstance(region, Discrete):
        return {"discrete": [[p / scale, q / scale] for p, q in region.points]}
    if isinstance(region, Polygon):
        return {"polygon": [[p / scale, q / scale] for p, q in region.vertices]}
    if isinstance(region, DiskIntervalSum):
        return {
            "disk_interval_sum": [
                region.p_lo / scale, region.p_hi / scale, region.r / scale,
                region.a / scale, region.b / scale,
            ]
        }
    raise UnsupportedRegionError(f"無法序列化 {type(region).__name__}")
