"""執行紀錄 - 每步一筆的 JSON lines 紀錄與 pandas 摘要表。

第一行為 {"meta": {...}}，之後每行一筆 StepRecord。
紀錄內的功率皆為 p.u.；摘要表換算為 kW。
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .errors import LogFieldError

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "k", "t",
    "p0_a", "p0_b", "p0_c",
    "p0_set_a", "p0_set_b", "p0_set_c",
    "tracking_err", "max_v", "min_v", "max_iL_ratio",
    "norm_mu", "norm_gamma", "norm_zeta", "norm_lam", "norm_nu",
]


@dataclass
class StepRecord:
    """單步紀錄。

    Attributes:
        k: 步數。
        t: 模擬時間（秒）。
        p0: 饋線頭真實三相有功功率（加雜訊前）。
        q0: 饋線頭真實三相無功功率。
        p0_meas: 控制器收到的饋線頭功率。
        p0_set: 追蹤設定值。
        E: 報告用的追蹤帶寬。
        s: 追蹤旗標。
        v_true: 監測電壓真值。
        v_meas: 監測電壓量測。
        iL_true: 監測電流真值。
        iL_meas: 監測電流量測。
        max_v: 所有相位的最大電壓大小。
        min_v: 所有相位的最小電壓大小。
        max_iL_ratio: 監測電流與上限比值的最大值。
        outputs: 設備與聚合的實際輸出。
        commands: 本步發出的指令。
        x_hat: 量測的原始向量（設備、聚合依 id 排序）。
        pred_v: 以本步偏移量的線性模型在迭代點上的電壓預測。
        pred_iL: 同上，電流預測。
        pred_p0: 同上，饋線頭功率預測。
        z: 本步結束後的 z = [x, x̄, d]。
        dual_norms: 各對偶變數的範數。
        disaggregation: 聚合分解資訊。
        iterations: 潮流迭代次數。
        residual: 潮流殘差。
        z_star: 本步問題的鞍點（選用）。
    """

    k: int
    t: float
    p0: list[float]
    q0: list[float]
    p0_meas: list[float]
    p0_set: list[float]
    E: float
    s: float
    v_true: list[float]
    v_meas: list[float]
    iL_true: list[float]
    iL_meas: list[float]
    max_v: float
    min_v: float
    max_iL_ratio: float
    outputs: dict[str, list[float]]
    commands: dict[str, list[float]]
    x_hat: list[float]
    pred_v: list[float]
    pred_iL: list[float]
    pred_p0: list[float]
    z: list[float]
    dual_norms: dict[str, float]
    disaggregation: dict[str, dict] = field(default_factory=dict)
    iterations: int = 0
    residual: float = 0.0
    z_star: list[float] | None = None

    @property
    def tracking_err(self) -> float:
        return float(np.max(np.abs(np.subtract(self.p0, self.p0_set))))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> StepRecord:
        return cls(**data)


@dataclass
class RunLog:
    """完整的執行紀錄。

    Attributes:
        meta: 場景名稱、參數與收斂常數等。
        records: 每步紀錄。
        aborted: 是否因潮流發散而中止。
        abort_reason: 中止原因。
    """

    meta: dict = field(default_factory=dict)
    records: list[StepRecord] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[StepRecord]:
        return iter(self.records)

    def append(self, record: StepRecord) -> None:
        self.records.append(record)

    def require(self, *keys: str) -> None:
        """確認 meta 含有分析需要的欄位。

        Raises:
            LogFieldError: 缺少欄位。
        """
        missing = [k for k in keys if k not in self.meta]
        if missing:
            raise LogFieldError(f"執行紀錄缺少欄位: {missing}")

    # -- 序列化 --

    def to_jsonl(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = dict(self.meta, aborted=self.aborted, abort_reason=self.abort_reason)
        with open(path, "w", encoding="utf-8") as f:
            f.write(json.dumps({"meta": meta}) + "\n")
            for record in self.records:
                f.write(json.dumps(record.to_dict()) + "\n")
        logger.info("執行紀錄已寫入 %s（%d 步）", path, len(self.records))

    @classmethod
    def from_jsonl(cls, path: str | Path) -> RunLog:
        """讀取 JSON lines 紀錄。

        Raises:
            LogFieldError: 第一行不是 meta 或紀錄缺少欄位。
        """
        with open(path, encoding="utf-8") as f:
            lines = [line for line in f if line.strip()]
        if not lines:
            raise LogFieldError(f"空的執行紀錄: {path}")
        head = json.loads(lines[0])
        if "meta" not in head:
            raise LogFieldError("執行紀錄第一行必須是 meta")
        meta = dict(head["meta"])
        aborted = bool(meta.pop("aborted", False))
        reason = str(meta.pop("abort_reason", ""))
        records = []
        for n, line in enumerate(lines[1:], start=1):
            try:
                records.append(StepRecord.from_dict(json.loads(line)))
            except TypeError as e:
                raise LogFieldError(f"第 {n} 筆紀錄欄位錯誤: {e}") from e
        return cls(meta=meta, records=records, aborted=aborted, abort_reason=reason)

    # -- 摘要 --

    def summary_frame(self) -> pd.DataFrame:
        """summary.csv 的內容（功率換算為 kW）。"""
        kva = float(self.meta.get("base_kva", 1.0))
        rows = []
        for r in self.records:
            rows.append(
                {
                    "k": r.k,
                    "t": r.t,
                    **{f"p0_{ph}": r.p0[n] * kva for n, ph in enumerate("abc")},
                    **{f"p0_set_{ph}": r.p0_set[n] * kva for n, ph in enumerate("abc")},
                    "tracking_err": r.tracking_err * kva,
                    "max_v": r.max_v,
                    "min_v": r.min_v,
                    "max_iL_ratio": r.max_iL_ratio,
                    **{f"norm_{name}": value for name, value in r.dual_norms.items()},
                }
            )
        return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)

    def write_summary_csv(self, path: str | Path) -> None:
        self.summary_frame().to_csv(path, index=False)
        logger.info("摘要已寫入 %s", path)
