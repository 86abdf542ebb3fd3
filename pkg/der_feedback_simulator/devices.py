"""設備動態 - 一階致動延遲、指令傳輸延遲，以及電池、EV、HVAC 的時變狀態。

各狀態類別每步提供一個新的可行區域（p.u.），並依實際輸出推進內部狀態。
功率以注入為正：電池放電、PV 發電為正，EV 充電與 HVAC 用電為負。
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .regions import Discrete, Disk, OperatingRegion, Singleton

logger = logging.getLogger(__name__)


def actuate(commanded, current_output, tau: float, h: float) -> np.ndarray:
    """一階致動：output = commanded + (current - commanded) exp(-h / tau)。

    Args:
        commanded: 指令設定點。
        current_output: 目前輸出。
        tau: 時間常數（秒），0 表示立即到位。
        h: 經過時間（秒）。

    Raises:
        ValueError: tau < 0。
    """
    if tau < 0:
        raise ValueError(f"時間常數不可為負: {tau}")
    commanded = np.asarray(commanded, dtype=float)
    if tau == 0:
        return commanded.copy()
    current_output = np.asarray(current_output, dtype=float)
    return commanded + (current_output - commanded) * math.exp(-h / tau)


class CommandLink:
    """聚合器到設備的指令通道，延遲以整數步表示。

    第 k 步發出的指令在第 k + 1 + delay 步生效；
    同一設備多筆指令同時到期時以最新的為準。

    用法::

        link = CommandLink(delay_steps=1)
        link.send(0, {"pv1": np.array([0.01, 0.0])})
        link.deliver(2)  # {"pv1": ...}
    """

    def __init__(self, delay_steps: int = 0) -> None:
        if delay_steps < 0:
            raise ValueError(f"延遲步數不可為負: {delay_steps}")
        self.delay_steps = delay_steps
        self._queue: deque[tuple[int, dict[str, np.ndarray]]] = deque()

    def send(self, k: int, commands: Mapping[str, np.ndarray]) -> None:
        self._queue.append((k + 1 + self.delay_steps, {key: np.asarray(v, dtype=float) for key, v in commands.items()}))

    def deliver(self, k: int) -> dict[str, np.ndarray]:
        """取出第 k 步（含）之前到期的指令。"""
        delivered: dict[str, np.ndarray] = {}
        while self._queue and self._queue[0][0] <= k:
            _, commands = self._queue.popleft()
            delivered.update(commands)
        return delivered

    @property
    def pending(self) -> int:
        return len(self._queue)


# ── 時變設備狀態 ─────────────────────────────────────────────────


@dataclass
class BatteryState:
    """電池能量桶（效率 1）。

    Attributes:
        capacity: 容量（p.u.·小時）。
        soc: 目前能量（p.u.·小時）。
        rating: 逆變器額定視在功率（p.u.）。
    """

    capacity: float
    soc: float
    rating: float

    def __post_init__(self) -> None:
        if self.capacity <= 0 or not 0.0 <= self.soc <= self.capacity:
            raise ValueError(f"電池能量 {self.soc} 不在 [0, {self.capacity}] 內")

    def region(self, h: float) -> Disk:
        """本步可行區域：放電受剩餘能量限制，充電受剩餘容量限制。"""
        hours = h / 3600.0
        p_hi = min(self.rating, self.soc / hours)
        p_lo = -min(self.rating, (self.capacity - self.soc) / hours)
        return Disk(p_lo, p_hi, self.rating)

    def advance(self, p: float, h: float) -> None:
        self.soc = min(max(self.soc - p * h / 3600.0, 0.0), self.capacity)


@dataclass
class EvState:
    """電動車充電需求。

    Attributes:
        p_max: 最大充電功率（p.u.，正值）。
        levels: 可用的充電比例，例如 (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)。
        energy: 剩餘需求能量（p.u.·小時）。
        departure: 離開時間（秒）。
        allow_zero: 時間仍充裕時是否允許暫停充電。
    """

    p_max: float
    levels: tuple[float, ...]
    energy: float
    departure: float
    allow_zero: bool = True

    def min_rate(self, t: float, h: float) -> float:
        """在離開前充滿所需的最低充電功率。"""
        remaining = max(self.departure - t, h) / 3600.0
        return max(self.energy, 0.0) / remaining

    def region(self, t: float, h: float) -> OperatingRegion:
        """本步可用的充電檔位（注入為負）；充滿或已離開時鎖定為 0。"""
        if self.energy <= 0.0 or t >= self.departure:
            return Singleton(0.0, 0.0)
        floor = self.min_rate(t, h)
        rates = sorted(f * self.p_max for f in self.levels if f > 0)
        allowed = [r for r in rates if r >= floor - 1e-12] or [rates[-1]]
        if self.allow_zero and floor < rates[0]:
            allowed = [0.0] + allowed
        return Discrete(tuple((-r, 0.0) for r in allowed))

    def advance(self, p: float, h: float) -> None:
        self.energy = max(self.energy + p * h / 3600.0, 0.0)


@dataclass
class HvacState:
    """開關型空調，關機後需維持最短關機步數。

    Attributes:
        p_on: 運轉功率（p.u.，正值）。
        min_off_steps: 最短關機步數。
        on: 目前是否運轉。
        off_steps: 已關機的步數。
    """

    p_on: float
    min_off_steps: int = 0
    on: bool = False
    off_steps: int = field(default=10**9)

    def region(self) -> OperatingRegion:
        if not self.on and self.off_steps < self.min_off_steps:
            return Singleton(0.0, 0.0)
        return Discrete(((0.0, 0.0), (-self.p_on, 0.0)))

    def advance(self, p: float) -> None:
        running = p < -0.5 * self.p_on
        if running:
            self.off_steps = 0
        elif self.on:
            self.off_steps = 1
            logger.debug("HVAC 關機，鎖定 %d 步", self.min_off_steps)
        else:
            self.off_steps += 1
        self.on = running
