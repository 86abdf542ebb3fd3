"""配電網路模型 - 多相節點、Π 型線路、導納矩陣與三角形接線關聯矩陣。

網路以標么值（p.u.）儲存。相位排序固定為「節點 id 遞增，相位 a<b<c」，
饋線頭（節點 0）的三相永遠排在導納矩陣最前面。
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateNetworkError, PhaseError, SchemaError, TopologyError, UnknownLineError

logger = logging.getLogger(__name__)

PHASES = ("a", "b", "c")
SLACK_ID = 0


class PhaseConnection(Enum):
    """設備的接線方式：單相 Y 接（a/b/c）或線間三角形接（ab/bc/ca）。"""

    A = "a"
    B = "b"
    C = "c"
    AB = "ab"
    BC = "bc"
    CA = "ca"

    @property
    def is_delta(self) -> bool:
        return len(self.value) == 2

    @property
    def phases(self) -> tuple[str, ...]:
        """涉及的相位，三角形接線依 (正端, 負端) 排列。"""
        return tuple(self.value)


def parse_connection(spec: str | Iterable[str]) -> tuple[PhaseConnection, ...]:
    """解析接線描述。

    支援單一接線（"a"、"ab"...）、"abc"（三相 Y 接）、"delta"（ab, bc, ca）
    或接線字串的列表。

    Args:
        spec: 接線描述。

    Returns:
        依描述順序排列的 PhaseConnection tuple。

    Raises:
        SchemaError: 無法辨識的接線字串。
    """
    if isinstance(spec, str):
        if spec == "abc":
            return (PhaseConnection.A, PhaseConnection.B, PhaseConnection.C)
        if spec == "delta":
            return (PhaseConnection.AB, PhaseConnection.BC, PhaseConnection.CA)
        items: Iterable[str] = [spec]
    else:
        items = spec
    result = []
    for item in items:
        try:
            result.append(PhaseConnection(item))
        except ValueError as e:
            raise SchemaError(f"未知的接線方式: {item!r}") from e
    if not result:
        raise SchemaError("接線描述不可為空")
    return tuple(result)


@dataclass(frozen=True)
class BaseValues:
    """標么值基準。

    Attributes:
        kv_ln: 相電壓基準（kV）。
        kva: 每相功率基準（kVA）。
    """

    kv_ln: float = 2.4
    kva: float = 1000.0

    @property
    def z_base(self) -> float:
        """阻抗基準（歐姆）。"""
        return (self.kv_ln * 1e3) ** 2 / (self.kva * 1e3)

    def power_to_pu(self, kw: float) -> float:
        return kw / self.kva

    def power_from_pu(self, pu: float) -> float:
        return pu * self.kva


@dataclass(frozen=True)
class Node:
    """多相節點。

    Attributes:
        id: 節點 id，0 為饋線頭。
        phases: 節點上存在的相位，例如 "abc"、"ac"。
    """

    id: int
    phases: str


@dataclass(frozen=True, eq=False)
class Line:
    """Π 型線路段。

    Attributes:
        id: 線路 id。
        from_node: 送端節點。
        to_node: 受端節點。
        phases: 線路上的相位（兩端皆須存在）。
        y_series: 串聯導納矩陣（len(phases) 方陣，p.u.）。
        y_shunt: 總並聯導納矩陣，兩端各掛一半。
    """

    id: int
    from_node: int
    to_node: int
    phases: str
    y_series: np.ndarray
    y_shunt: np.ndarray


def _balanced_slack() -> np.ndarray:
    return np.exp(-2j * np.pi / 3 * np.arange(3))


@dataclass(frozen=True, eq=False)
class GridModel:
    """配電網路。

    Attributes:
        nodes: 所有節點（含饋線頭 0）。
        lines: 所有線路。
        slack_voltage: 饋線頭三相電壓 v0（p.u.）。
        base: 標么值基準。
    """

    nodes: tuple[Node, ...]
    lines: tuple[Line, ...]
    slack_voltage: np.ndarray = field(default_factory=_balanced_slack)
    base: BaseValues = field(default_factory=BaseValues)

    def __post_init__(self) -> None:
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise TopologyError("節點 id 重複")
        by_id = {n.id: n for n in self.nodes}
        slack = by_id.get(SLACK_ID)
        if slack is None or slack.phases != "abc":
            raise TopologyError("饋線頭節點 0 必須存在且具備 abc 三相")
        line_ids = [ln.id for ln in self.lines]
        if len(set(line_ids)) != len(line_ids):
            raise TopologyError("線路 id 重複")
        for ln in self.lines:
            for end in (ln.from_node, ln.to_node):
                node = by_id.get(end)
                if node is None:
                    raise TopologyError(f"線路 {ln.id} 連到不存在的節點 {end}")
                missing = set(ln.phases) - set(node.phases)
                if missing:
                    raise TopologyError(
                        f"線路 {ln.id} 的相位 {''.join(sorted(missing))} 不存在於節點 {end}"
                    )
            if ln.from_node == ln.to_node:
                raise TopologyError(f"線路 {ln.id} 的兩端為同一節點")
        if np.shape(self.slack_voltage) != (3,):
            raise SchemaError("slack_voltage 必須是三相複數向量")

    def node(self, node_id: int) -> Node:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise TopologyError(f"找不到節點: {node_id}")

    def line(self, line_id: int) -> Line:
        for ln in self.lines:
            if ln.id == line_id:
                return ln
        raise UnknownLineError(f"找不到線路: {line_id}")


@dataclass(frozen=True)
class InjectionPoint:
    """設備或負載的注入位置。

    Attributes:
        node: 所在節點。
        connections: 接線方式；功率平均分配到每個接線。
    """

    node: int
    connections: tuple[PhaseConnection, ...]

    def validate(self, grid: GridModel) -> None:
        """確認所需相位存在於節點上。

        Raises:
            PhaseError: 節點缺少接線所需的相位。
        """
        if self.node == SLACK_ID:
            raise PhaseError("設備不可接在饋線頭節點 0")
        node = grid.node(self.node)
        for conn in self.connections:
            missing = set(conn.phases) - set(node.phases)
            if missing:
                raise PhaseError(
                    f"節點 {self.node} 缺少相位 {''.join(sorted(missing))}，"
                    f"無法使用 {conn.value} 接線"
                )


@dataclass(frozen=True, eq=False)
class AdmittanceBlocks:
    """分塊導納矩陣。

    Attributes:
        Y00: 饋線頭 3x3 區塊。
        Y0L: 3xN 區塊。
        YL0: Nx3 區塊。
        YLL: NxN 區塊。
        phase_index: (節點, 相位) 到 YLL 行列位置的對應。
    """

    Y00: np.ndarray
    Y0L: np.ndarray
    YL0: np.ndarray
    YLL: np.ndarray
    phase_index: Mapping[tuple[int, str], int]

    @property
    def n_phi(self) -> int:
        return self.YLL.shape[0]

    @property
    def full(self) -> np.ndarray:
        """組回完整的 (N+3)x(N+3) 導納矩陣。"""
        return np.block([[self.Y00, self.Y0L], [self.YL0, self.YLL]])


@dataclass(frozen=True, eq=False)
class DeltaIncidence:
    """三角形接線關聯矩陣 H。

    Attributes:
        H: NxN 實數矩陣，三角形接線 xy 的列位於相位 x 的位置，
           在 x 為 +1、在 y 為 -1。
        delta_index: (節點, 接線) 到列位置的對應。
    """

    H: np.ndarray
    delta_index: Mapping[tuple[int, PhaseConnection], int]

    @property
    def active_rows(self) -> np.ndarray:
        return np.array(sorted(self.delta_index.values()), dtype=int)


# ── 建構 ──────────────────────────────────────────────────────────


def phase_index(grid: GridModel) -> dict[tuple[int, str], int]:
    """非饋線頭節點的標準相位排序。"""
    index: dict[tuple[int, str], int] = {}
    for node in sorted(grid.nodes, key=lambda n: n.id):
        if node.id == SLACK_ID:
            continue
        for ph in PHASES:
            if ph in node.phases:
                index[(node.id, ph)] = len(index)
    return index


def _full_index(grid: GridModel) -> dict[tuple[int, str], int]:
    full = {(SLACK_ID, ph): i for i, ph in enumerate(PHASES)}
    for key, pos in phase_index(grid).items():
        full[key] = pos + 3
    return full


def build_admittance(grid: GridModel) -> AdmittanceBlocks:
    """由拓樸組出分塊導納矩陣。

    每條線路以 Π 模型加入：兩端對角區塊加上 Yser + Ysh/2，
    非對角區塊減去 Yser。

    Args:
        grid: 網路模型。

    Returns:
        AdmittanceBlocks，饋線頭相位在最前。

    Raises:
        TopologyError: 有相位節點無法連回饋線頭。
        DegenerateNetworkError: YLL 奇異。
    """
    full = _full_index(grid)
    n = len(full)
    if n == 3:
        raise TopologyError("網路中沒有饋線頭以外的節點")

    Y = np.zeros((n, n), dtype=complex)
    rows: list[int] = []
    cols: list[int] = []
    for ln in grid.lines:
        f = [full[(ln.from_node, ph)] for ph in ln.phases]
        t = [full[(ln.to_node, ph)] for ph in ln.phases]
        half_shunt = ln.y_shunt / 2.0
        Y[np.ix_(f, f)] += ln.y_series + half_shunt
        Y[np.ix_(t, t)] += ln.y_series + half_shunt
        Y[np.ix_(f, t)] -= ln.y_series
        Y[np.ix_(t, f)] -= ln.y_series
        rows.extend(f)
        cols.extend(t)

    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    fed = set(labels[:3])
    inverse = {pos: key for key, pos in full.items()}
    for pos in range(3, n):
        if labels[pos] not in fed:
            node_id, ph = inverse[pos]
            raise TopologyError(f"節點 {node_id} 的相位 {ph} 無法連回饋線頭")

    YLL = Y[3:, 3:]
    cond = np.linalg.cond(YLL)
    if not np.isfinite(cond) or cond > 1.0 / np.finfo(float).eps:
        raise DegenerateNetworkError(f"YLL 條件數過大: {cond:.3e}")

    logger.debug("導納矩陣已建立，N_phi=%d, cond(YLL)=%.3e", n - 3, cond)
    return AdmittanceBlocks(
        Y00=Y[:3, :3].copy(),
        Y0L=Y[:3, 3:].copy(),
        YL0=Y[3:, :3].copy(),
        YLL=YLL.copy(),
        phase_index={k: v - 3 for k, v in full.items() if k[0] != SLACK_ID},
    )


def build_delta_incidence(
    grid: GridModel,
    devices: Iterable[tuple[int, PhaseConnection]],
) -> DeltaIncidence:
    """建立三角形接線關聯矩陣。

    Args:
        grid: 網路模型。
        devices: (節點, 接線) 列表；Y 接項目只檢查相位是否存在。

    Returns:
        DeltaIncidence；沒有三角形接線時 H 為零矩陣。

    Raises:
        PhaseError: 三角形接線所需的兩相不存在於節點。
    """
    index = phase_index(grid)
    n = len(index)
    H = np.zeros((n, n))
    delta_index: dict[tuple[int, PhaseConnection], int] = {}
    for node_id, conn in devices:
        node = grid.node(node_id)
        missing = set(conn.phases) - set(node.phases)
        if missing:
            raise PhaseError(
                f"節點 {node_id} 缺少相位 {''.join(sorted(missing))}，"
                f"無法使用 {conn.value} 接線"
            )
        if not conn.is_delta:
            continue
        x, y = conn.phases
        row = index[(node_id, x)]
        H[row, row] = 1.0
        H[row, index[(node_id, y)]] = -1.0
        delta_index[(node_id, conn)] = row
    return DeltaIncidence(H=H, delta_index=dict(sorted(delta_index.items(), key=lambda kv: kv[1])))


# ── JSON 載入 ─────────────────────────────────────────────────────

_GRID_FIELDS = {"name", "units", "base", "slack_voltage", "nodes", "lines"}
_NODE_FIELDS = {"id", "phases"}
_LINE_FIELDS = {
    "id", "from", "to", "phases",
    "z_series", "z_mutual", "y_series", "y_mutual", "y_shunt",
}


def check_fields(
    obj: Mapping,
    allowed: set[str],
    required: set[str],
    where: str,
) -> None:
    """檢查 JSON 物件的欄位。

    Raises:
        SchemaError: 含未知欄位或缺少必要欄位。
    """
    if not isinstance(obj, Mapping):
        raise SchemaError(f"{where} 必須是 JSON 物件")
    unknown = set(obj) - allowed
    if unknown:
        raise SchemaError(f"{where} 含未知欄位: {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise SchemaError(f"{where} 缺少欄位: {sorted(missing)}")


def parse_complex(value, where: str) -> complex:
    """將 [re, im] 轉為複數。"""
    if isinstance(value, (int, float)):
        return complex(value)
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, (int, float)) for v in value)
    ):
        raise SchemaError(f"{where} 必須是 [re, im]")
    return complex(value[0], value[1])


def _coupled(self_term: complex, mutual: complex, n: int) -> np.ndarray:
    return self_term * np.eye(n) + mutual * (np.ones((n, n)) - np.eye(n))


def _parse_line(raw: Mapping, units: str, base: BaseValues) -> Line:
    where = f"線路 {raw.get('id', '?')}"
    check_fields(raw, _LINE_FIELDS, {"id", "from", "to", "phases"}, where)
    phases = "".join(ph for ph in PHASES if ph in raw["phases"])
    if not phases or len(phases) != len(raw["phases"]):
        raise SchemaError(f"{where} 的 phases 無效: {raw['phases']!r}")
    n = len(phases)
    has_z, has_y = "z_series" in raw, "y_series" in raw
    if has_z == has_y:
        raise SchemaError(f"{where} 必須恰好提供 z_series 或 y_series 其中之一")

    scale = 1.0 if units == "pu" else base.z_base
    if has_z:
        if "y_mutual" in raw:
            raise SchemaError(f"{where} 不可混用 z_series 與 y_mutual")
        z = _coupled(
            parse_complex(raw["z_series"], f"{where}.z_series"),
            parse_complex(raw.get("z_mutual", [0.0, 0.0]), f"{where}.z_mutual"),
            n,
        ) / scale
        try:
            y_series = np.linalg.inv(z)
        except np.linalg.LinAlgError as e:
            raise DegenerateNetworkError(f"{where} 的串聯阻抗矩陣不可逆") from e
    else:
        if "z_mutual" in raw:
            raise SchemaError(f"{where} 不可混用 y_series 與 z_mutual")
        y_series = _coupled(
            parse_complex(raw["y_series"], f"{where}.y_series"),
            parse_complex(raw.get("y_mutual", [0.0, 0.0]), f"{where}.y_mutual"),
            n,
        ) * scale
    y_shunt = parse_complex(raw.get("y_shunt", [0.0, 0.0]), f"{where}.y_shunt") * scale * np.eye(n)
    return Line(
        id=int(raw["id"]),
        from_node=int(raw["from"]),
        to_node=int(raw["to"]),
        phases=phases,
        y_series=y_series,
        y_shunt=y_shunt,
    )


def grid_from_dict(raw: Mapping) -> GridModel:
    """由 JSON 物件建立 GridModel。

    Raises:
        SchemaError: 欄位錯誤。
        TopologyError: 節點與線路不一致。
    """
    check_fields(raw, _GRID_FIELDS, {"nodes", "lines"}, "grid")
    units = raw.get("units", "pu")
    if units not in ("pu", "siemens"):
        raise SchemaError(f"未知的單位: {units!r}，請使用 'pu' 或 'siemens'")
    base_raw = raw.get("base", {})
    check_fields(base_raw, {"kv_ln", "kva"}, set(), "grid.base")
    base = BaseValues(**{k: float(v) for k, v in base_raw.items()})

    nodes = []
    for item in raw["nodes"]:
        check_fields(item, _NODE_FIELDS, _NODE_FIELDS, f"節點 {item.get('id', '?')}")
        phases = "".join(ph for ph in PHASES if ph in item["phases"])
        if not phases or len(phases) != len(item["phases"]):
            raise SchemaError(f"節點 {item['id']} 的 phases 無效: {item['phases']!r}")
        nodes.append(Node(id=int(item["id"]), phases=phases))

    lines = [_parse_line(item, units, base) for item in raw["lines"]]

    if "slack_voltage" in raw:
        values = raw["slack_voltage"]
        if not isinstance(values, list) or len(values) != 3:
            raise SchemaError("slack_voltage 必須包含三個 [re, im]")
        slack = np.array([parse_complex(v, "slack_voltage") for v in values])
    else:
        slack = _balanced_slack()

    return GridModel(nodes=tuple(nodes), lines=tuple(lines), slack_voltage=slack, base=base)


def load_grid(source: str | Path | Mapping) -> GridModel:
    """從 JSON 檔案或已解析的物件載入網路。

    Args:
        source: 檔案路徑或 JSON 物件。

    Returns:
        GridModel 實例。
    """
    if isinstance(source, Mapping):
        return grid_from_dict(source)
    path = Path(source)
    with open(path, encoding="utf-8") as f:
        raw = json.load(f)
    grid = grid_from_dict(raw)
    logger.info("從 %s 載入網路：%d 個節點、%d 條線路", path, len(grid.nodes), len(grid.lines))
    return grid
