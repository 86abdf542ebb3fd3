"""場景 - 場景 JSON 的解析，以及依時間軸觸發事件的場景引擎。

場景檔中的功率以 kW/kvar、能量以 kWh 表示，載入時依網路的 base.kva（每相）
換算為 p.u.；之後所有模組只處理 p.u.。
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
import pandas as pd

from .devices import BatteryState, EvState, HvacState
from .errors import CoverageError, SchemaError, UnknownDeviceError
from .interpolation import (
    ConstantProfile,
    InterpolationMethod,
    Profile,
    ScaledProfile,
    ingest_timeseries,
    profile_from_spec,
)
from .network import (
    PHASES,
    GridModel,
    InjectionPoint,
    check_fields,
    load_grid,
    parse_connection,
)
from .plant import MeasurementSets
from .regions import Discrete, Disk, OperatingRegion, region_from_spec

logger = logging.getLogger(__name__)

DEVICE_KINDS = ("pv", "battery", "ev", "hvac", "generic")
EVENT_TYPES = ("lock_device", "unlock_device", "set_limits", "set_tracking", "relinearize")

_SCENARIO_FIELDS = {
    "name", "grid", "h", "duration", "devices", "aggregations", "loads", "measurements",
    "limits", "tracking", "controller", "timeseries", "noise", "actuation",
    "relinearize_every", "plant", "events",
}
_COMMON_DEVICE_FIELDS = {"id", "node", "connection", "kind", "cost"}
_MEMBER_COMMON_FIELDS = {"id", "kind", "cost"}
_KIND_FIELDS = {
    "pv": {"rating_kva", "p_av_kw"},
    "battery": {"rating_kva", "capacity_kwh", "soc_kwh"},
    "ev": {"p_max_kw", "levels", "energy_kwh", "departure_s", "allow_zero"},
    "hvac": {"p_max_kw", "min_off_steps"},
    "generic": {"region"},
}
_KIND_REQUIRED = {
    "pv": {"rating_kva"},
    "battery": {"rating_kva", "capacity_kwh", "soc_kwh"},
    "ev": {"p_max_kw", "energy_kwh", "departure_s"},
    "hvac": {"p_max_kw"},
    "generic": {"region"},
}
_COST_FIELDS = {"c_p", "c_q", "p_ref", "q_ref"}
_LOAD_FIELDS = {"id", "node", "connection", "p_kw", "q_kvar"}
_LIMIT_FIELDS = {"v_min", "v_max", "i_max"}
_TRACKING_FIELDS = {"p0_set_kw", "E_kw", "E_margin_kw", "s"}
_CONTROLLER_FIELDS = {"alpha", "r_p", "r_d", "disagg_tol", "disagg_max_iter", "workers"}
_NOISE_FIELDS = {"seed", "v", "iL", "p0_kw", "der_kw"}
_ACTUATION_FIELDS = {"tau", "link_delay_steps"}
_EV_LEVELS = (0.1, 0.2, 0.4, 0.6, 0.8, 1.0)


# ── 場景內容 ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class CostSpec:
    """成本設定（權重無單位，參考值為 p.u. 剖面）。"""

    c_p: float = 0.0
    c_q: float = 0.0
    p_ref: Profile | None = None
    q_ref: Profile = ConstantProfile(0.0)


@dataclass(frozen=True, eq=False)
class DeviceSpec:
    """單一設備（所有數值為 p.u.）。

    Attributes:
        id: 設備 id。
        kind: pv、battery、ev、hvac 或 generic。
        point: 注入點；聚合成員沿用聚合的注入點。
        cost: 成本設定。
        region: generic 設備的固定區域。
        rating: 逆變器額定（pv、battery）。
        p_av: PV 可用功率剖面。
        capacity: 電池容量（p.u.·小時）。
        soc: 電池初始能量（p.u.·小時）。
        p_max: EV 最大充電功率或 HVAC 運轉功率。
        levels: EV 充電檔位比例。
        energy: EV 需求能量（p.u.·小時）。
        departure: EV 離開時間（秒）。
        allow_zero: EV 是否可暫停。
        min_off_steps: HVAC 最短關機步數。
    """

    id: str
    kind: str
    point: InjectionPoint
    cost: CostSpec = CostSpec()
    region: OperatingRegion | None = None
    rating: float = 0.0
    p_av: Profile | None = None
    capacity: float = 0.0
    soc: float = 0.0
    p_max: float = 0.0
    levels: tuple[float, ...] = _EV_LEVELS
    energy: float = 0.0
    departure: float = 0.0
    allow_zero: bool = True
    min_off_steps: int = 0

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("ev", "hvac") or isinstance(self.region, Discrete)

    def make_state(self) -> BatteryState | EvState | HvacState | None:
        """建立時變狀態；pv 與 generic 沒有內部狀態。"""
        if self.kind == "battery":
            return BatteryState(self.capacity, self.soc, self.rating)
        if self.kind == "ev":
            return EvState(self.p_max, self.levels, self.energy, self.departure, self.allow_zero)
        if self.kind == "hvac":
            return HvacState(self.p_max, self.min_off_steps)
        return None

    def available(self, t: float, table: pd.DataFrame | None) -> float:
        """PV 在 t 秒的可用有功，限制在 [0, rating]。"""
        if self.p_av is None:
            return self.rating
        return min(max(self.p_av.value(t, table), 0.0), self.rating)

    def region_at(self, t: float, h: float, state, table: pd.DataFrame | None) -> OperatingRegion:
        if self.kind == "pv":
            return Disk(0.0, self.available(t, table), self.rating)
        if self.kind == "battery":
            return state.region(h)
        if self.kind == "ev":
            return state.region(t, h)
        if self.kind == "hvac":
            return state.region()
        return self.region

    def p_ref_at(self, t: float, table: pd.DataFrame | None) -> float:
        if self.cost.p_ref is not None:
            return self.cost.p_ref.value(t, table)
        if self.kind == "pv":
            return self.available(t, table)
        return 0.0


@dataclass(frozen=True, eq=False)
class AggregationSpec:
    """同一注入點上的一組成員設備。"""

    id: str
    point: InjectionPoint
    members: tuple[DeviceSpec, ...]


@dataclass(frozen=True, eq=False)
class LoadSpec:
    """不可控負載（消耗為正）。"""

    id: str
    point: InjectionPoint
    p: Profile
    q: Profile

    def value(self, t: float, table: pd.DataFrame | None) -> complex:
        return complex(self.p.value(t, table), self.q.value(t, table))


@dataclass(frozen=True)
class Limits:
    """電壓與電流限制（p.u.）。"""

    v_min: float = 0.95
    v_max: float = 1.05
    i_max: Mapping[int, float] = field(default_factory=dict)


@dataclass(frozen=True)
class TrackingSpec:
    """饋線頭追蹤設定；p0_set 為每相一個剖面。

    Attributes:
        p0_set: 三相設定值剖面（p.u.，正值為輸入）。
        E: 報告用帶寬。
        E_margin: 控制器收緊的裕度，控制器使用 E - E_margin。
        s: 追蹤旗標剖面。
    """

    p0_set: tuple[Profile, Profile, Profile] = (ConstantProfile(0.0),) * 3
    E: float = 0.0
    E_margin: float = 0.0
    s: Profile = ConstantProfile(0.0)

    @property
    def controller_E(self) -> float:
        return max(self.E - self.E_margin, 0.0)

    def setpoint(self, t: float, table: pd.DataFrame | None) -> np.ndarray:
        return np.array([p.value(t, table) for p in self.p0_set])


@dataclass(frozen=True)
class ControllerSettings:
    alpha: float = 0.2
    r_p: float = 1e-3
    r_d: float = 1e-4
    disagg_tol: float = 1e-8
    disagg_max_iter: int = 1000
    workers: int = 0


@dataclass(frozen=True)
class NoiseSpec:
    """量測雜訊標準差（p.u.）；0 表示無雜訊。"""

    seed: int = 0
    v: float = 0.0
    iL: float = 0.0
    p0: float = 0.0
    der: float = 0.0


@dataclass
class SimEvent:
    """場景中的單一事件。

    Attributes:
        time: 模擬秒數（從 0 開始）。
        event_type: lock_device、unlock_device、set_limits、set_tracking、relinearize。
        data: 事件資料；鎖定設定點已換算為 p.u.，limits 與 tracking 保留場景檔單位。
    """

    time: float
    event_type: str
    data: dict = field(default_factory=dict)


@dataclass(eq=False)
class Scenario:
    """已解析的場景（p.u.）。

    Attributes:
        name: 場景名稱。
        grid: 網路模型。
        h: 取樣週期（秒）。
        duration: 模擬長度（秒）。
        devices: 獨立設備。
        aggregations: 聚合。
        loads: 不可控負載。
        measurements: 量測集合。
        limits: 限制。
        tracking: 追蹤設定。
        controller: 控制器設定。
        timeseries: 插值後的時間序列表。
        noise: 雜訊設定。
        tau: 致動時間常數（秒）。
        link_delay_steps: 指令延遲步數。
        relinearize_every: 重新線性化的間隔步數，0 表示只在 t=0。
        plant: 受控廠模式。
        events: 事件列表。
        source: 場景檔路徑。
    """

    name: str
    grid: GridModel
    h: float
    duration: float
    devices: tuple[DeviceSpec, ...] = ()
    aggregations: tuple[AggregationSpec, ...] = ()
    loads: tuple[LoadSpec, ...] = ()
    measurements: MeasurementSets = MeasurementSets()
    limits: Limits = Limits()
    tracking: TrackingSpec = TrackingSpec()
    controller: ControllerSettings = ControllerSettings()
    timeseries: pd.DataFrame | None = None
    noise: NoiseSpec = NoiseSpec()
    tau: float = 0.0
    link_delay_steps: int = 0
    relinearize_every: int = 0
    plant: str = "nonlinear"
    events: tuple[SimEvent, ...] = ()
    source: Path | None = None

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.duration / self.h + 1e-9))

    @property
    def member_ids(self) -> list[str]:
        return [m.id for agg in self.aggregations for m in agg.members]

    def injection_points(self) -> dict[str, InjectionPoint]:
        """受控廠的注入點：設備、聚合與負載。"""
        points = {d.id: d.point for d in self.devices}
        points.update({a.id: a.point for a in self.aggregations})
        points.update({ld.id: ld.point for ld in self.loads})
        return points

    def loads_at(self, t: float) -> dict[str, complex]:
        return {ld.id: ld.value(t, self.timeseries) for ld in self.loads}

    def i_max_vector(self, limits: Limits | None = None) -> np.ndarray:
        """依量測順序展開的電流上限。"""
        limits = limits or self.limits
        return np.array([limits.i_max[lid] for lid, _ in self.measurements.line_entries(self.grid)])


# ── 解析 ─────────────────────────────────────────────────────────


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where} 必須是數字: {value!r}")
    return float(value)


def _profile(spec, where: str, scale: float) -> Profile:
    profile = profile_from_spec(spec, where)
    return profile if scale == 1.0 else ScaledProfile(profile, scale)


def _point(raw: Mapping, grid: GridModel, where: str) -> InjectionPoint:
    try:
        point = InjectionPoint(int(raw["node"]), parse_connection(raw["connection"]))
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{where} 的 node/connection 無效: {e}") from e
    point.validate(grid)
    return point


def _cost(raw: Mapping | None, where: str, pu: float) -> CostSpec:
    if raw is None:
        return CostSpec()
    check_fields(raw, _COST_FIELDS, set(), f"{where}.cost")
    return CostSpec(
        c_p=_number(raw.get("c_p", 0.0), f"{where}.cost.c_p"),
        c_q=_number(raw.get("c_q", 0.0), f"{where}.cost.c_q"),
        p_ref=_profile(raw["p_ref"], f"{where}.cost.p_ref", pu) if "p_ref" in raw else None,
        q_ref=_profile(raw.get("q_ref", 0.0), f"{where}.cost.q_ref", pu),
    )


def _device(raw: Mapping, grid: GridModel, pu: float, point: InjectionPoint | None = None) -> DeviceSpec:
    where = f"設備 {raw.get('id', '?') if isinstance(raw, Mapping) else '?'}"
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{where} 必須是 JSON 物件")
    kind = raw.get("kind", "generic")
    if kind not in DEVICE_KINDS:
        raise SchemaError(f"{where} 的 kind 無效: {kind!r}")
    common = _COMMON_DEVICE_FIELDS if point is None else _MEMBER_COMMON_FIELDS
    required = {"id"} | ({"node", "connection"} if point is None else set())
    check_fields(raw, common | _KIND_FIELDS[kind], required | _KIND_REQUIRED[kind], where)
    if point is None:
        point = _point(raw, grid, where)

    params: dict = {}
    if kind in ("pv", "battery"):
        params["rating"] = _number(raw["rating_kva"], f"{where}.rating_kva") * pu
    if kind == "pv" and "p_av_kw" in raw:
        params["p_av"] = _profile(raw["p_av_kw"], f"{where}.p_av_kw", pu)
    if kind == "battery":
        params["capacity"] = _number(raw["capacity_kwh"], f"{where}.capacity_kwh") * pu
        params["soc"] = _number(raw["soc_kwh"], f"{where}.soc_kwh") * pu
        if not 0.0 <= params["soc"] <= params["capacity"] or params["capacity"] <= 0:
            raise SchemaError(f"{where} 的 soc_kwh 必須在 [0, capacity_kwh] 內")
    if kind in ("ev", "hvac"):
        params["p_max"] = _number(raw["p_max_kw"], f"{where}.p_max_kw") * pu
        if params["p_max"] <= 0:
            raise SchemaError(f"{where} 的 p_max_kw 必須大於 0")
    if kind == "ev":
        levels = raw.get("levels", list(_EV_LEVELS))
        if not isinstance(levels, list) or not levels or not all(0 < float(f) <= 1 for f in levels):
            raise SchemaError(f"{where} 的 levels 必須是 (0, 1] 內的比例列表")
        params["levels"] = tuple(sorted(float(f) for f in levels))
        params["energy"] = _number(raw["energy_kwh"], f"{where}.energy_kwh") * pu
        params["departure"] = _number(raw["departure_s"], f"{where}.departure_s")
        params["allow_zero"] = bool(raw.get("allow_zero", True))
    if kind == "hvac":
        params["min_off_steps"] = int(raw.get("min_off_steps", 0))
    if kind == "generic":
        params["region"] = region_from_spec(raw["region"], scale=pu)

    return DeviceSpec(
        id=str(raw["id"]), kind=kind, point=point, cost=_cost(raw.get("cost"), where, pu), **params
    )


def _aggregation(raw: Mapping, grid: GridModel, pu: float) -> AggregationSpec:
    where = f"聚合 {raw.get('id', '?') if isinstance(raw, Mapping) else '?'}"
    check_fields(raw, {"id", "node", "connection", "members"}, {"id", "node", "connection", "members"}, where)
    point = _point(raw, grid, where)
    if not isinstance(raw["members"], list) or not raw["members"]:
        raise SchemaError(f"{where} 至少需要一個成員")
    members = tuple(_device(m, grid, pu, point=point) for m in raw["members"])
    return AggregationSpec(id=str(raw["id"]), point=point, members=members)


def _load(raw: Mapping, n: int, grid: GridModel, pu: float) -> LoadSpec:
    where = f"負載 {raw.get('id', n) if isinstance(raw, Mapping) else n}"
    check_fields(raw, _LOAD_FIELDS, {"node", "connection"}, where)
    return LoadSpec(
        id=str(raw.get("id", f"load{n}")),
        point=_point(raw, grid, where),
        p=_profile(raw.get("p_kw", 0.0), f"{where}.p_kw", pu),
        q=_profile(raw.get("q_kvar", 0.0), f"{where}.q_kvar", pu),
    )


def _measurements(raw: Mapping | None, grid: GridModel) -> MeasurementSets:
    raw = raw or {}
    check_fields(raw, {"voltages", "lines"}, set(), "measurements")
    lines = tuple(int(lid) for lid in raw.get("lines", []))
    voltages = raw.get("voltages", "all")
    if voltages == "all":
        sets = MeasurementSets.all_voltages(grid, lines)
    else:
        try:
            pairs = tuple((int(node), str(ph)) for node, ph in voltages)
        except (TypeError, ValueError) as e:
            raise SchemaError(f"measurements.voltages 必須是 'all' 或 [node, phase] 列表: {e}") from e
        sets = MeasurementSets(voltages=pairs, lines=lines)
    sets.validate(grid)
    return sets


def parse_limits(raw: Mapping, base: Limits | None = None) -> Limits:
    """解析 limits 物件；未給的欄位沿用 base。"""
    base = base or Limits()
    check_fields(raw, _LIMIT_FIELDS, set(), "limits")
    i_max = dict(base.i_max)
    for lid, value in raw.get("i_max", {}).items():
        i_max[int(lid)] = _number(value, f"limits.i_max.{lid}")
    return Limits(
        v_min=_number(raw.get("v_min", base.v_min), "limits.v_min"),
        v_max=_number(raw.get("v_max", base.v_max), "limits.v_max"),
        i_max=i_max,
    )


def parse_tracking(raw: Mapping, pu: float, base: TrackingSpec | None = None) -> TrackingSpec:
    """解析 tracking 物件；未給的欄位沿用 base，給了 tracking 時 s 預設為 1。"""
    check_fields(raw, _TRACKING_FIELDS, set(), "tracking")
    base = base or TrackingSpec(s=ConstantProfile(1.0))
    p0_set = base.p0_set
    if "p0_set_kw" in raw:
        spec = raw["p0_set_kw"]
        if isinstance(spec, Mapping) and set(spec) <= set(PHASES) and spec:
            if set(spec) != set(PHASES):
                raise SchemaError("tracking.p0_set_kw 的每相設定必須包含 a、b、c")
            p0_set = tuple(_profile(spec[ph], f"tracking.p0_set_kw.{ph}", pu) for ph in PHASES)
        else:
            p0_set = (_profile(spec, "tracking.p0_set_kw", pu),) * 3
    tracking = TrackingSpec(
        p0_set=p0_set,
        E=_number(raw["E_kw"], "tracking.E_kw") * pu if "E_kw" in raw else base.E,
        E_margin=_number(raw["E_margin_kw"], "tracking.E_margin_kw") * pu if "E_margin_kw" in raw else base.E_margin,
        s=profile_from_spec(raw["s"], "tracking.s") if "s" in raw else base.s,
    )
    if tracking.E < 0 or tracking.E_margin < 0:
        raise SchemaError("tracking 的 E_kw 與 E_margin_kw 不可為負")
    return tracking


def _event(raw: Mapping, ids: set[str], pu: float) -> SimEvent:
    check_fields(raw, {"time", "event_type", "data"}, {"time", "event_type"}, "事件")
    event_type = raw["event_type"]
    if event_type not in EVENT_TYPES:
        raise SchemaError(f"未知的事件類型: {event_type!r}")
    data = dict(raw.get("data", {}))
    if event_type in ("lock_device", "unlock_device"):
        check_fields(data, {"id", "p_kw", "q_kvar"}, {"id"}, f"{event_type} 事件")
        if data["id"] not in ids:
            raise UnknownDeviceError(f"事件引用未知的設備: {data['id']}")
        if "p_kw" in data or "q_kvar" in data:
            data["setpoint"] = [
                _number(data.pop("p_kw", 0.0), "p_kw") * pu,
                _number(data.pop("q_kvar", 0.0), "q_kvar") * pu,
            ]
    elif event_type == "set_limits":
        data = {"limits": data}
        parse_limits(data["limits"])
    elif event_type == "set_tracking":
        data = {"tracking": data}
        parse_tracking(data["tracking"], pu)
    elif data:
        raise SchemaError(f"{event_type} 事件不接受資料: {sorted(data)}")
    return SimEvent(time=_number(raw["time"], "事件 time"), event_type=event_type, data=data)


def load_scenario(source: str | Path | Mapping, base_dir: str | Path | None = None) -> Scenario:
    """載入並驗證場景。

    Args:
        source: 場景 JSON 路徑或已解析的物件。
        base_dir: 相對路徑（grid、timeseries）的基準目錄；預設為場景檔所在目錄。

    Returns:
        Scenario 實例（p.u.）。

    Raises:
        SchemaError: 欄位錯誤。
        UnknownDeviceError: 事件引用未知的設備。
        CoverageError: 時間序列未涵蓋模擬長度或缺少欄位。
    """
    path: Path | None = None
    if isinstance(source, Mapping):
        raw = source
    else:
        path = Path(source)
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        base_dir = base_dir or path.parent
    base_dir = Path(base_dir or ".")
    check_fields(raw, _SCENARIO_FIELDS, {"name", "grid", "h", "duration"}, "場景")

    grid_raw = raw["grid"]
    grid = load_grid(grid_raw if isinstance(grid_raw, Mapping) else base_dir / grid_raw)
    pu = 1.0 / grid.base.kva
    h = _number(raw["h"], "h")
    duration = _number(raw["duration"], "duration")
    if h <= 0 or duration < h:
        raise SchemaError(f"h 必須大於 0 且 duration >= h: h={h}, duration={duration}")

    devices = tuple(_device(d, grid, pu) for d in raw.get("devices", []))
    aggregations = tuple(_aggregation(a, grid, pu) for a in raw.get("aggregations", []))
    loads = tuple(_load(ld, n, grid, pu) for n, ld in enumerate(raw.get("loads", [])))

    ids = [d.id for d in devices] + [a.id for a in aggregations]
    ids += [m.id for a in aggregations for m in a.members] + [ld.id for ld in loads]
    duplicates = {i for i in ids if ids.count(i) > 1}
    if duplicates:
        raise SchemaError(f"id 重複: {sorted(duplicates)}")

    measurements = _measurements(raw.get("measurements"), grid)
    limits = parse_limits(raw.get("limits", {}))
    missing = set(measurements.lines) - set(limits.i_max)
    if missing:
        raise SchemaError(f"監測線路缺少 i_max: {sorted(missing)}")
    tracking = parse_tracking(raw["tracking"], pu) if "tracking" in raw else TrackingSpec()

    controller_raw = raw.get("controller", {})
    check_fields(controller_raw, _CONTROLLER_FIELDS, set(), "controller")
    controller = ControllerSettings(**controller_raw)

    noise_raw = raw.get("noise", {})
    check_fields(noise_raw, _NOISE_FIELDS, set(), "noise")
    noise = NoiseSpec(
        seed=int(noise_raw.get("seed", 0)),
        v=_number(noise_raw.get("v", 0.0), "noise.v"),
        iL=_number(noise_raw.get("iL", 0.0), "noise.iL"),
        p0=_number(noise_raw.get("p0_kw", 0.0), "noise.p0_kw") * pu,
        der=_number(noise_raw.get("der_kw", 0.0), "noise.der_kw") * pu,
    )

    actuation = raw.get("actuation", {})
    check_fields(actuation, _ACTUATION_FIELDS, set(), "actuation")

    plant = raw.get("plant", "nonlinear")
    if plant not in ("nonlinear", "linear"):
        raise SchemaError(f"plant 必須是 nonlinear 或 linear: {plant!r}")

    table = None
    if "timeseries" in raw:
        table = ingest_timeseries(base_dir / raw["timeseries"], h, duration, InterpolationMethod.LINEAR)

    controllable = {d.id for d in devices} | {a.id for a in aggregations} | {
        m.id for a in aggregations for m in a.members
    }
    events = tuple(_event(e, controllable, pu) for e in raw.get("events", []))

    scenario = Scenario(
        name=str(raw["name"]),
        grid=grid,
        h=h,
        duration=duration,
        devices=devices,
        aggregations=aggregations,
        loads=loads,
        measurements=measurements,
        limits=limits,
        tracking=tracking,
        controller=controller,
        timeseries=table,
        noise=noise,
        tau=_number(actuation.get("tau", 0.0), "actuation.tau"),
        link_delay_steps=int(actuation.get("link_delay_steps", 0)),
        relinearize_every=int(raw.get("relinearize_every", 0)),
        plant=plant,
        events=events,
        source=path,
    )
    _check_series(scenario)
    logger.info(
        "場景 %s 已載入：%d 個設備、%d 個聚合、%d 個負載、%d 步",
        scenario.name, len(devices), len(aggregations), len(loads), scenario.n_steps,
    )
    return scenario


def _check_series(scenario: Scenario) -> None:
    """所有 csv 剖面引用的欄位都必須存在於時間序列表。"""
    profiles: list[Profile] = list(scenario.tracking.p0_set) + [scenario.tracking.s]
    for d in list(scenario.devices) + [m for a in scenario.aggregations for m in a.members]:
        profiles += [p for p in (d.p_av, d.cost.p_ref, d.cost.q_ref) if p is not None]
    for ld in scenario.loads:
        profiles += [ld.p, ld.q]
    columns = set().union(*(p.columns() for p in profiles))
    available = set() if scenario.timeseries is None else set(scenario.timeseries.columns)
    for column in sorted(columns - available):
        raise CoverageError(f"時間序列缺少欄位 {column}", series=column)


# ── 場景引擎 ─────────────────────────────────────────────────────


class ScenarioEngine:
    """場景引擎 - 依模擬時間觸發事件，並保存事件造成的覆寫狀態。

    用法::

        engine = ScenarioEngine(scenario.tracking, scenario.limits)
        engine.load(list(scenario.events))
        engine.start()
        for k in range(n_steps):
            engine.advance_to(k * h)
            if engine.consume_relinearize():
                ...
    """

    def __init__(self, tracking: TrackingSpec | None = None, limits: Limits | None = None, pu: float = 1.0) -> None:
        self._events: list[SimEvent] = []
        self._event_index: int = 0
        self._current_time: float = 0.0
        self._running: bool = False
        self._pu = pu
        self._initial_tracking = tracking or TrackingSpec()
        self._initial_limits = limits or Limits()

        self.tracking: TrackingSpec = self._initial_tracking
        self.limits: Limits = self._initial_limits
        self.locked: dict[str, np.ndarray | None] = {}
        """被鎖定的設備；值為鎖定的設定點，None 表示鎖在目前輸出。"""
        self.relinearize_requested: bool = False

        self.on_event: Callable[[SimEvent], None] | None = None
        """事件觸發時的回呼函式。"""

    # -- 屬性 --

    @property
    def current_time(self) -> float:
        return self._current_time

    @property
    def is_running(self) -> bool:
        return self._running

    @property
    def is_finished(self) -> bool:
        """所有事件是否已觸發完畢。"""
        return self._event_index >= len(self._events)

    @property
    def total_events(self) -> int:
        return len(self._events)

    @property
    def triggered_count(self) -> int:
        return self._event_index

    # -- 載入與控制 --

    def load(self, events: list[SimEvent]) -> None:
        """載入事件並依時間排序（同時間保持原順序）。載入後重置狀態。"""
        self._events = sorted(events, key=lambda e: e.time)
        self._reset()
        logger.info("場景已載入，共 %d 個事件", len(self._events))

    def start(self) -> None:
        self._reset()
        self._running = True
        logger.debug("場景引擎啟動")

    def stop(self) -> None:
        self._running = False
        logger.debug("場景引擎停止")

    # -- 推進 --

    def tick(self, dt: float) -> list[SimEvent]:
        """推進 dt 秒。"""
        return self.advance_to(self._current_time + dt)

    def advance_to(self, t: float) -> list[SimEvent]:
        """推進到 t 秒，觸發所有 time <= t 的事件。

        Returns:
            此次觸發的事件列表。
        """
        if not self._running:
            return []
        self._current_time = t
        triggered: list[SimEvent] = []
        while self._event_index < len(self._events):
            event = self._events[self._event_index]
            if event.time > t + 1e-9:
                break
            self._event_index += 1
            self._apply_event(event)
            triggered.append(event)
            logger.info("[t=%.1f] 觸發事件: %s %s", event.time, event.event_type, event.data)
            if self.on_event is not None:
                self.on_event(event)
        return triggered

    def consume_relinearize(self) -> bool:
        """取出並清除重新線性化的要求。"""
        requested, self.relinearize_requested = self.relinearize_requested, False
        return requested

    # -- 內部方法 --

    def _reset(self) -> None:
        self._event_index = 0
        self._current_time = 0.0
        self.tracking = self._initial_tracking
        self.limits = self._initial_limits
        self.locked.clear()
        self.relinearize_requested = False

    def _apply_event(self, event: SimEvent) -> None:
        data = event.data
        if event.event_type == "lock_device":
            setpoint = data.get("setpoint")
            self.locked[data["id"]] = None if setpoint is None else np.asarray(setpoint, dtype=float)
        elif event.event_type == "unlock_device":
            self.locked.pop(data["id"], None)
        elif event.event_type == "set_limits":
            self.limits = parse_limits(data["limits"], self.limits)
        elif event.event_type == "set_tracking":
            self.tracking = parse_tracking(data["tracking"], self._pu, self.tracking)
        elif event.event_type == "relinearize":
            self.relinearize_requested = True
