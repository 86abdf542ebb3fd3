"""時間序列插值 - CSV 讀取、插值到取樣格點，以及場景使用的時變剖面。"""

from __future__ import annotations

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import CoverageError, SchemaError

logger = logging.getLogger(__name__)

TIME_COLUMN = "timestamp"


class InterpolationMethod(Enum):
    LINEAR = "LINEAR"
    PREVIOUS = "PREVIOUS"


def interpolate(t: np.ndarray, times: np.ndarray, values: np.ndarray, method: InterpolationMethod) -> np.ndarray:
    """在 times/values 上取 t 處的值。

    Args:
        t: 查詢時間。
        times: 遞增的取樣時間。
        values: 取樣值。
        method: LINEAR 為線性插值，PREVIOUS 為保持前一個取樣值。

    Returns:
        插值結果；超出範圍時取端點值。
    """
    t = np.asarray(t, dtype=float)
    if method == InterpolationMethod.LINEAR:
        return np.interp(t, times, values)
    idx = np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 1)
    return np.asarray(values)[idx]


def ingest_timeseries(
    path: str | Path,
    h: float,
    duration: float | None = None,
    method: InterpolationMethod = InterpolationMethod.LINEAR,
    max_gap: float | None = None,
) -> pd.DataFrame:
    """讀取 CSV 並插值到 h 秒的格點。

    CSV 第一欄為 timestamp（秒），其餘每欄一條序列，空白為缺值。

    Args:
        path: CSV 路徑。
        h: 取樣週期（秒）。
        duration: 需要涵蓋的時間長度；None 表示到最後一個時間戳。
        method: 插值方法。
        max_gap: 同一序列相鄰有效取樣的最大間隔；None 表示不檢查。

    Returns:
        以格點時間 t 為索引的 DataFrame。

    Raises:
        SchemaError: 缺少 timestamp 欄。
        ValueError: 時間戳非嚴格遞增或 h <= 0。
        CoverageError: 某序列未涵蓋 [0, duration] 或有過大的間隔。
    """
    if h <= 0:
        raise ValueError(f"取樣週期必須大於 0: {h}")
    raw = pd.read_csv(path)
    if TIME_COLUMN not in raw.columns:
        raise SchemaError(f"{path} 缺少 {TIME_COLUMN} 欄")
    times = raw[TIME_COLUMN].to_numpy(dtype=float)
    if len(times) == 0 or np.any(np.diff(times) <= 0):
        raise ValueError(f"{path} 的時間戳必須嚴格遞增")
    if duration is None:
        duration = float(times[-1])

    n_steps = int(math.floor(duration / h + 1e-9)) + 1
    grid = np.arange(n_steps) * h
    out = {}
    for column in raw.columns:
        if column == TIME_COLUMN:
            continue
        series = raw[column].astype(float)
        valid = series.notna().to_numpy()
        t_valid = times[valid]
        v_valid = series.to_numpy()[valid]
        if len(t_valid) == 0 or t_valid[0] > 1e-9 or t_valid[-1] < grid[-1] - 1e-9:
            raise CoverageError(
                f"序列 {column} 未涵蓋 [0, {grid[-1]:g}] 秒", series=str(column)
            )
        if max_gap is not None and len(t_valid) > 1 and np.max(np.diff(t_valid)) > max_gap:
            raise CoverageError(f"序列 {column} 的取樣間隔超過 {max_gap:g} 秒", series=str(column))
        out[column] = interpolate(grid, t_valid, v_valid, method)

    table = pd.DataFrame(out, index=pd.Index(grid, name="t"))
    logger.info("讀入時間序列 %s：%d 欄，%d 個格點", path, len(out), n_steps)
    return table


# ── 剖面 ─────────────────────────────────────────────────────────


class Profile(ABC):
    """時變純量。"""

    @abstractmethod
    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        """t 秒時的值。"""

    def columns(self) -> set[str]:
        """需要的時間序列欄位。"""
        return set()


@dataclass(frozen=True)
class ConstantProfile(Profile):
    constant: float

    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        return self.constant


@dataclass(frozen=True)
class SinusoidProfile(Profile):
    """offset + amplitude sin(2π t / period + phase)。"""

    offset: float
    amplitude: float
    period: float
    phase: float = 0.0

    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        return self.offset + self.amplitude * math.sin(2.0 * math.pi * t / self.period + self.phase)


@dataclass(frozen=True)
class StepProfile(Profile):
    """分段常數；第一個時間點之前取第一個值。"""

    points: tuple[tuple[float, float], ...]

    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        times = np.array([p[0] for p in self.points])
        values = np.array([p[1] for p in self.points])
        return float(interpolate(t, times, values, InterpolationMethod.PREVIOUS))


@dataclass(frozen=True)
class SeriesProfile(Profile):
    """時間序列表中的一欄乘上 scale。"""

    column: str
    scale: float = 1.0

    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        if table is None or self.column not in table.columns:
            raise CoverageError(f"找不到時間序列 {self.column}", series=self.column)
        return self.scale * float(np.interp(t, table.index.to_numpy(dtype=float), table[self.column].to_numpy()))

    def columns(self) -> set[str]:
        return {self.column}


@dataclass(frozen=True)
class SumProfile(Profile):
    parts: tuple[Profile, ...]

    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        return sum(p.value(t, table) for p in self.parts)

    def columns(self) -> set[str]:
        return set().union(*(p.columns() for p in self.parts))


@dataclass(frozen=True)
class ScaledProfile(Profile):
    """其他剖面乘上常數（單位換算用）。"""

    inner: Profile
    factor: float

    def value(self, t: float, table: pd.DataFrame | None = None) -> float:
        return self.factor * self.inner.value(t, table)

    def columns(self) -> set[str]:
        return self.inner.columns()


def profile_from_spec(spec: float | int | Mapping | Sequence, where: str = "profile") -> Profile:
    """由場景 JSON 建立剖面。

    支援數字、{"sinusoid": {...}}、{"steps": [[t, v], ...]}、
    {"csv": 欄名, "scale": k}、{"sum": [...]}。

    Raises:
        SchemaError: 格式錯誤。
    """
    if isinstance(spec, bool):
        raise SchemaError(f"{where}: 不接受布林值")
    if isinstance(spec, (int, float)):
        return ConstantProfile(float(spec))
    if not isinstance(spec, Mapping):
        raise SchemaError(f"{where}: 無法解析剖面 {spec!r}")
    keys = set(spec)
    try:
        if keys == {"sinusoid"}:
            s = spec["sinusoid"]
            unknown = set(s) - {"offset", "amplitude", "period", "phase"}
            if unknown:
                raise SchemaError(f"{where}: sinusoid 有未知欄位 {sorted(unknown)}")
            if float(s["period"]) <= 0:
                raise SchemaError(f"{where}: period 必須大於 0")
            return SinusoidProfile(
                float(s.get("offset", 0.0)), float(s["amplitude"]), float(s["period"]), float(s.get("phase", 0.0))
            )
        if keys == {"steps"}:
            points = tuple((float(t), float(v)) for t, v in spec["steps"])
            if not points or any(b[0] <= a[0] for a, b in zip(points, points[1:])):
                raise SchemaError(f"{where}: steps 必須非空且時間遞增")
            return StepProfile(points)
        if keys in ({"csv"}, {"csv", "scale"}):
            return SeriesProfile(str(spec["csv"]), float(spec.get("scale", 1.0)))
        if keys == {"sum"}:
            return SumProfile(tuple(profile_from_spec(p, where) for p in spec["sum"]))
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, SchemaError):
            raise
        raise SchemaError(f"{where}: 無效的剖面 {spec!r}: {e}") from e
    raise SchemaError(f"{where}: 未知的剖面型別 {sorted(keys)}")
