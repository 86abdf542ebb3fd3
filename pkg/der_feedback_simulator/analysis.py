"""收斂分析 - 收縮係數、步長上限、追蹤誤差界與執行紀錄的驗證。

所有距離都以堆疊向量 z = [x, x̄, d] 的歐氏範數計算。
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .aggregation import disaggregate
from .controller import ControllerParams, FleetCosts, FleetRegions
from .errors import LogFieldError, ParameterError
from .runlog import RunLog
from .sensitivity import SensitivityModel, gain_bound

logger = logging.getLogger(__name__)

ORACLE_TOL = 1e-10
ORACLE_MAX_ITER = 200_000
TAIL_SLACK = 1.05


# ── 常數 ─────────────────────────────────────────────────────────


def contraction(alpha: float, r_p: float, r_d: float, L: float, G: float) -> float:
    """收縮係數 c(α) = [1 - 2α min(r_p, r_d) + α²(L + r_p + 5G)² + 5α²(G + r_d)²]^(1/2)。

    Raises:
        ParameterError: 參數為負或根號內為負。
    """
    if min(alpha, r_p, r_d, L, G) < 0:
        raise ParameterError(f"收縮係數的參數不可為負: {(alpha, r_p, r_d, L, G)}")
    radicand = (
        1.0
        - 2.0 * alpha * min(r_p, r_d)
        + alpha**2 * (L + r_p + 5.0 * G) ** 2
        + 5.0 * alpha**2 * (G + r_d) ** 2
    )
    if radicand < 0:
        raise ParameterError(f"c(α) 的根號內為負: {radicand}")
    return math.sqrt(radicand)


def max_stepsize(r_p: float, r_d: float, L: float, G: float) -> float:
    """使 c(α) < 1 的步長上限 min(r_p, r_d) / ((L + r_p + 5G)² + 5(G + r_d)²)。"""
    return min(r_p, r_d) / ((L + r_p + 5.0 * G) ** 2 + 5.0 * (G + r_d) ** 2)


@dataclass(frozen=True)
class ConvergenceConstants:
    """收斂常數。

    Attributes:
        L: 成本梯度 Lipschitz 常數的最大值。
        G: 靈敏度矩陣的最大譜範數。
        r_p: 原始正則化係數。
        r_d: 對偶正則化係數。
        alpha: 步長。
        c: 收縮係數 c(α)。
    """

    L: float
    G: float
    r_p: float
    r_d: float
    alpha: float
    c: float

    @property
    def max_stepsize(self) -> float:
        return max_stepsize(self.r_p, self.r_d, self.L, self.G)

    @property
    def contracts(self) -> bool:
        return self.c < 1.0

    def to_dict(self) -> dict:
        return {"L": self.L, "G": self.G, "r_p": self.r_p, "r_d": self.r_d, "alpha": self.alpha, "c": self.c}


def estimate_constants(model: SensitivityModel, costs: FleetCosts, params: ControllerParams) -> ConvergenceConstants:
    """由成本定義與靈敏度模型估計 L、G 與 c(α)。

    聚合成本的曲率以成員成本的最大 Lipschitz 常數為上界。
    """
    L = costs.lipschitz
    G = gain_bound(model)
    return ConvergenceConstants(
        L=L, G=G, r_p=params.r_p, r_d=params.r_d, alpha=params.alpha,
        c=contraction(params.alpha, params.r_p, params.r_d, L, G),
    )


def check_stepsize(constants: ConvergenceConstants) -> bool:
    """步長超過收縮上限時記錄警告。

    Returns:
        步長是否在上限之內。
    """
    bound = constants.max_stepsize
    if constants.alpha >= bound:
        logger.warning(
            "步長 α=%.3g 超過收縮上限 %.3g（c(α)=%.6f），誤差界不保證成立",
            constants.alpha, bound, constants.c,
        )
        return False
    return True


def trajectory_bound(
    c: float,
    z0_gap: float,
    per_step: Sequence[tuple[float, float, float]],
    alpha: float,
) -> list[float]:
    """追蹤誤差界。

    bound_k = c^k z0_gap + Σ_{l=0}^{k-1} c^l (e_x^{(k-l-1)} + α e^{(k-l-1)} + σ^{(k-l-1)})

    Args:
        c: 收縮係數，須在 (0, 1)。
        z0_gap: 初始距離。
        per_step: 每步的 (e_x, e, σ)。
        alpha: 步長。

    Returns:
        bound_0 ... bound_n，共 len(per_step) + 1 個。

    Raises:
        ParameterError: c 不在 (0, 1)。
    """
    if not 0.0 < c < 1.0:
        raise ParameterError(f"收縮係數必須在 (0, 1) 之間: {c}")
    bounds = [float(z0_gap)]
    for e_x, e, sigma in per_step:
        bounds.append(c * bounds[-1] + e_x + alpha * e + sigma)
    return bounds


# ── 鞍點參考解 ───────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class SaddlePoint:
    """單步問題的正則化鞍點。

    Attributes:
        z: [x, x̄, d]，排列與 ControllerState.as_vector() 相同。
        iterations: 迭代次數。
        residual: 最後的梯度映射範數。
        converged: 是否達到容許值。
    """

    z: np.ndarray
    iterations: int
    residual: float
    converged: bool


def _constraint_system(model: SensitivityModel, order: list[str], params: ControllerParams):
    J_v, J_i, J_p = model.jacobians(order)
    s = params.s
    Jg = np.vstack([J_v, -s * J_p, s * J_p, -J_v, J_i])

    def g(x: np.ndarray) -> np.ndarray:
        v = J_v @ x + model.a
        i = J_i @ x + model.b
        p = J_p @ x + model.m
        return np.concatenate(
            [
                v - params.v_max,
                s * (params.p0_set - p - params.E),
                s * (p - params.p0_set - params.E),
                params.v_min - v,
                i - params.i_max,
            ]
        )

    return Jg, g


def solve_saddle_point(
    model: SensitivityModel,
    regions: FleetRegions,
    costs: FleetCosts,
    params: ControllerParams,
    warm: np.ndarray | None = None,
    tol: float = ORACLE_TOL,
    max_iter: int = ORACLE_MAX_ITER,
) -> SaddlePoint:
    """求單步問題的正則化鞍點 z*。

    消去對偶後 d* = max(0, g(x)) / r_d，原始問題為
    min Σf + r_p/2 ||x||² + 1/(2 r_d) ||max(0, g(x))||²，
    以帶重啟的加速投影梯度法求解；聚合成本的梯度以分解的 -ξ 取得。

    Args:
        model: 含本步偏移量的靈敏度模型。
        regions: 本步區域。
        costs: 本步成本。
        params: 控制器參數。
        warm: 原始部分的起點，None 表示各區域的投影零點。
        tol: 梯度映射範數的容許值。
        max_iter: 迭代上限。
    """
    device_ids = sorted(regions.devices)
    agg_ids = sorted(regions.members)
    order = device_ids + agg_ids
    cont = {k: regions.continuous(k) for k in device_ids}
    folded = {k: regions.folded(k) for k in agg_ids}
    members = {
        k: {m: (r, costs.members[k][m]) for m, r in sorted(regions.member_continuous(k).items())}
        for k in agg_ids
    }
    Jg, g = _constraint_system(model, order, params)
    n = 2 * len(order)
    xi_warm = {k: np.zeros(2) for k in agg_ids}

    def project(x: np.ndarray) -> np.ndarray:
        out = np.empty_like(x)
        for n_block, key in enumerate(order):
            block = x[2 * n_block: 2 * n_block + 2]
            region = cont[key] if key in cont else folded[key]
            out[2 * n_block: 2 * n_block + 2] = region.project(block)
        return out

    def gradient(x: np.ndarray) -> np.ndarray:
        grad = params.r_p * x + Jg.T @ (np.maximum(0.0, g(x)) / params.r_d)
        for n_block, key in enumerate(order):
            block = x[2 * n_block: 2 * n_block + 2]
            if key in cont:
                grad[2 * n_block: 2 * n_block + 2] += costs.devices[key].gradient(block)
            else:
                # 外插點可能落在聚合區域外，分解前先投影回區域
                result = disaggregate(members[key], folded[key].project(block), xi_warm[key], tol=1e-12)
                xi_warm[key] = result.xi
                grad[2 * n_block: 2 * n_block + 2] -= result.xi
        return grad

    if n == 0:
        d = np.maximum(0.0, g(np.zeros(0))) / params.r_d
        return SaddlePoint(z=d, iterations=0, residual=0.0, converged=True)

    jg_norm = float(np.linalg.norm(Jg, 2)) if Jg.size else 0.0
    lip = costs.lipschitz + params.r_p + jg_norm**2 / params.r_d
    step = 1.0 / lip

    x = project(np.zeros(n) if warm is None else np.asarray(warm, dtype=float)[:n])
    y = x.copy()
    t = 1.0
    residual = math.inf
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        x_new = project(y - step * gradient(y))
        residual = float(np.linalg.norm(x_new - y)) / step
        if residual <= tol:
            x = x_new
            break
        if float((y - x_new) @ (x_new - x)) > 0.0:
            t = 1.0
            y = x_new.copy()
        else:
            t_new = (1.0 + math.sqrt(1.0 + 4.0 * t * t)) / 2.0
            y = x_new + ((t - 1.0) / t_new) * (x_new - x)
            t = t_new
        x = x_new

    converged = residual <= tol
    if not converged:
        logger.warning("鞍點求解未收斂：%d 次迭代，殘差 %.3e", iterations, residual)
    d = np.maximum(0.0, g(x)) / params.r_d
    return SaddlePoint(z=np.concatenate([x, d]), iterations=iterations, residual=residual, converged=converged)


# ── 執行紀錄量測 ─────────────────────────────────────────────────


@dataclass(frozen=True)
class ErrorBudget:
    """誤差預算（各項取整段執行的上確界）。

    Attributes:
        e_x: 設定點量測誤差。
        e_0: 饋線頭功率誤差。
        e_v: 電壓誤差。
        e_L: 線路電流誤差。
        e: 合成誤差 sqrt((L+r_p)² e_x² + 2 e_v² + 2 e_0² + e_L²)。
        sigma: 最佳軌跡的變動量。
        delta: e_x + α e + σ。
    """

    e_x: float
    e_0: float
    e_v: float
    e_L: float
    e: float
    sigma: float
    delta: float


def combined_error(L: float, r_p: float, e_x: float, e_v: float, e_0: float, e_L: float) -> float:
    return math.sqrt((L + r_p) ** 2 * e_x**2 + 2.0 * e_v**2 + 2.0 * e_0**2 + e_L**2)


def _constants_from_meta(log: RunLog) -> ConvergenceConstants:
    log.require("L", "G", "r_p", "r_d", "alpha")
    m = log.meta
    return ConvergenceConstants(
        L=m["L"], G=m["G"], r_p=m["r_p"], r_d=m["r_d"], alpha=m["alpha"],
        c=contraction(m["alpha"], m["r_p"], m["r_d"], m["L"], m["G"]),
    )


def measure_run(
    log: RunLog,
    reference_trajectory: Sequence[np.ndarray] | None = None,
    constants: ConvergenceConstants | None = None,
) -> tuple[ErrorBudget, pd.DataFrame]:
    """量測執行紀錄中的誤差項與實際追蹤距離。

    第 k 步：e_x 為量測輸出與進入該步的迭代點之差，e_v、e_0、e_L 為量測與
    本步線性模型在迭代點上的預測之差，σ^k = ||z*_k - z*_{k-1}||，
    實際距離為 ||z_{k+1} - z*_k||，與 bound_{k+1} 比較。

    Args:
        log: 執行紀錄（meta 需含 z_init 與收斂常數）。
        reference_trajectory: 每步的 z*；None 時使用紀錄中的 z_star。
        constants: 收斂常數；None 時由 meta 計算。

    Returns:
        (ErrorBudget, 每步的 DataFrame)。

    Raises:
        LogFieldError: 紀錄缺少必要欄位。
    """
    log.require("z_init", "n_primal")
    if not log.records:
        raise LogFieldError("執行紀錄沒有任何步驟")
    constants = constants or _constants_from_meta(log)
    n_primal = int(log.meta["n_primal"])

    if reference_trajectory is None:
        if any(r.z_star is None for r in log.records):
            raise LogFieldError("執行紀錄缺少 z_star，請以 --oracle 執行或提供參考軌跡")
        reference_trajectory = [np.asarray(r.z_star) for r in log.records]
    reference = [np.asarray(z, dtype=float) for z in reference_trajectory]
    if len(reference) != len(log.records):
        raise LogFieldError(f"參考軌跡長度 {len(reference)} 與紀錄步數 {len(log.records)} 不符")

    z_prev = np.asarray(log.meta["z_init"], dtype=float)
    rows = []
    for k, record in enumerate(log.records):
        x_iter = z_prev[:n_primal]
        e_x = float(np.linalg.norm(np.asarray(record.x_hat) - x_iter))
        e_v = float(np.linalg.norm(np.subtract(record.v_meas, record.pred_v)))
        e_0 = float(np.linalg.norm(np.subtract(record.p0_meas, record.pred_p0)))
        e_L = float(np.linalg.norm(np.subtract(record.iL_meas, record.pred_iL)))
        sigma = 0.0 if k == 0 else float(np.linalg.norm(reference[k] - reference[k - 1]))
        z = np.asarray(record.z, dtype=float)
        rows.append(
            {
                "k": record.k,
                "e_x": e_x,
                "e_v": e_v,
                "e_0": e_0,
                "e_L": e_L,
                "e": combined_error(constants.L, constants.r_p, e_x, e_v, e_0, e_L),
                "sigma": sigma,
                "realized": float(np.linalg.norm(z - reference[k])),
            }
        )
        z_prev = z
    frame = pd.DataFrame(rows)

    z0_gap = float(np.linalg.norm(np.asarray(log.meta["z_init"], dtype=float) - reference[0]))
    per_step = list(zip(frame["e_x"], frame["e"], frame["sigma"]))
    bounds = trajectory_bound(constants.c, z0_gap, per_step, constants.alpha)
    frame["bound"] = bounds[1:]
    frame["margin"] = frame["bound"] - frame["realized"]
    frame["within"] = frame["realized"] <= frame["bound"] * (1.0 + 1e-9) + 1e-12

    e_x, e = float(frame["e_x"].max()), float(frame["e"].max())
    sigma = float(frame["sigma"].max())
    budget = ErrorBudget(
        e_x=e_x,
        e_0=float(frame["e_0"].max()),
        e_v=float(frame["e_v"].max()),
        e_L=float(frame["e_L"].max()),
        e=e,
        sigma=sigma,
        delta=e_x + constants.alpha * e + sigma,
    )
    return budget, frame


def certify(
    log: RunLog,
    out_csv: str | Path | None = None,
    reference_trajectory: Sequence[np.ndarray] | None = None,
    tail_fraction: float = 0.5,
) -> tuple[pd.DataFrame, dict]:
    """驗證每步的實際距離都在誤差界內，並檢查尾段平均。

    Returns:
        (每步 DataFrame: k, realized_gap, bound, margin, 摘要字典)。
    """
    constants = _constants_from_meta(log)
    budget, frame = measure_run(log, reference_trajectory, constants)
    table = frame[["k", "realized", "bound", "margin"]].rename(columns={"realized": "realized_gap"})
    if out_csv is not None:
        table.to_csv(out_csv, index=False)
        logger.info("驗證結果已寫入 %s", out_csv)

    tail = frame["realized"].iloc[int(len(frame) * (1.0 - tail_fraction)):]
    asymptotic = budget.delta / (1.0 - constants.c)
    tail_average = float(tail.mean()) if len(tail) else 0.0
    violations = int((~frame["within"]).sum())
    tail_ok = tail_average <= asymptotic * TAIL_SLACK + 1e-12
    summary = {
        "passed": violations == 0 and tail_ok,
        "steps": len(frame),
        "violations": violations,
        "c": constants.c,
        "delta": budget.delta,
        "asymptotic_bound": asymptotic,
        "tail_average": tail_average,
        "tail_ok": tail_ok,
        **{f"sup_{k}": v for k, v in asdict(budget).items()},
    }
    if not summary["passed"]:
        logger.warning("驗證未通過：%d 步超出誤差界，尾段平均 %.3e / 上界 %.3e", violations, tail_average, asymptotic)
    return table, summary


# ── 執行摘要 ─────────────────────────────────────────────────────


def tracking_fraction(log: RunLog, transient_steps: int = 0, settle_steps: int = 0) -> float:
    """追蹤啟用且已過暫態的步驟中，|p0 - p0_set| <= E 的比例。

    Args:
        log: 執行紀錄。
        transient_steps: 開頭略過的步數。
        settle_steps: 設定值跳變超過 E 之後略過的步數。
    """
    skip_until = transient_steps
    hits = total = 0
    prev_set = None
    for n, r in enumerate(log.records):
        if prev_set is not None and np.max(np.abs(np.subtract(r.p0_set, prev_set))) > r.E:
            skip_until = max(skip_until, n + settle_steps)
        prev_set = r.p0_set
        if n < skip_until or r.s <= 0:
            continue
        total += 1
        hits += int(r.tracking_err <= r.E + 1e-12)
    return hits / total if total else float("nan")


def steady_state_max_voltage(log: RunLog, window: int | None = None) -> float:
    """最後 window 步（預設為後四分之一）的最大電壓大小。"""
    if not log.records:
        raise LogFieldError("執行紀錄沒有任何步驟")
    window = window or max(1, len(log.records) // 4)
    return max(r.max_v for r in log.records[-window:])


def constraint_margins(log: RunLog, v_min: float, v_max: float) -> Mapping[str, float]:
    """整段執行中最差的電壓裕度（正值表示在限制內）。"""
    return {
        "v_max": min(v_max - r.max_v for r in log.records),
        "v_min": min(r.min_v - v_min for r in log.records),
    }
