"""DER 回授最佳化模擬器 - 命令列介面。

子命令::

    der-sim run --scenario scenarios/feeder4_static.json --out out/
    der-sim certify --log out/runlog.jsonl
    der-sim powerflow --scenario scenarios/feeder13_tracking.json
    der-sim linearize --scenario scenarios/feeder4_static.json --out model.json

執行方式::

    python -m der_feedback_simulator.main run --scenario ... --out ...
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .analysis import certify
from .network import PHASES, load_grid, phase_index
from .plant import MeasurementSets, NonlinearPlant
from .powerflow import DEFAULT_TOL
from .runlog import RunLog
from .scenario import load_scenario
from .sensitivity import linearize
from .sim import SimulationEngine

logger = logging.getLogger(__name__)

# ANSI 色碼
RESET = "\033[0m"
BOLD = "\033[1m"
RED = "\033[31m"
GREEN = "\033[32m"

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _configure_logging(level: str | None) -> None:
    level = (level or os.environ.get("DERSIM_LOG_LEVEL") or "WARNING").upper()
    if level not in LOG_LEVELS:
        level = "WARNING"
    logging.basicConfig(level=getattr(logging, level), format="%(message)s")


def hard_check_failures(log: RunLog, tol: float = DEFAULT_TOL) -> list[str]:
    """執行紀錄必須滿足的條件；回傳違反項目的說明。"""
    failures = []
    if log.aborted:
        failures.append(f"模擬中止: {log.abort_reason}")
    n_primal = int(log.meta.get("n_primal", 0))
    for r in log.records:
        if log.meta.get("plant") == "nonlinear" and r.residual > tol:
            failures.append(f"k={r.k}: 潮流殘差 {r.residual:.3e} 超過 {tol:g}")
        duals = np.asarray(r.z[n_primal:])
        if duals.size and duals.min() < 0:
            failures.append(f"k={r.k}: 對偶變數為負 ({duals.min():.3e})")
    return failures


# ── 子命令 ───────────────────────────────────────────────────────


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    log = SimulationEngine(scenario, plant_mode=args.plant, oracle=args.oracle).run()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.to_jsonl(out / "runlog.jsonl")
    log.write_summary_csv(out / "summary.csv")

    failures = hard_check_failures(log)
    for failure in failures:
        print(f"{RED}{failure}{RESET}", file=sys.stderr)
    status = f"{RED}失敗{RESET}" if failures else f"{GREEN}完成{RESET}"
    print(f"{BOLD}{scenario.name}{RESET}: {len(log)} 步 {status} → {out}")
    return 1 if failures else 0


def cmd_certify(args: argparse.Namespace) -> int:
    log_path = Path(args.log)
    log = RunLog.from_jsonl(log_path)
    out = Path(args.out) if args.out else log_path.with_name("certify.csv")
    _, summary = certify(log, out_csv=out, tail_fraction=args.tail_fraction)
    print(json.dumps(summary, indent=2, ensure_ascii=False))
    status = f"{GREEN}通過{RESET}" if summary["passed"] else f"{RED}未通過{RESET}"
    print(f"誤差界驗證 {status} → {out}")
    return 0 if summary["passed"] else 1


def cmd_powerflow(args: argparse.Namespace) -> int:
    if args.scenario:
        scenario = load_scenario(args.scenario)
        grid, points, loads = scenario.grid, scenario.injection_points(), scenario.loads_at(args.t)
    else:
        grid, points, loads = load_grid(args.grid), {}, {}
    plant = NonlinearPlant(grid, points, MeasurementSets.all_voltages(grid))
    reading = plant.evaluate({}, loads)

    index = phase_index(grid)
    table = pd.DataFrame(
        [
            {"node": node, "phase": ph, "v_mag": abs(reading.v[n]), "v_ang_deg": np.degrees(np.angle(reading.v[n]))}
            for (node, ph), n in index.items()
        ]
    )
    print(table.to_string(index=False, float_format=lambda x: f"{x:.6f}"))
    kva = grid.base.kva
    for n, ph in enumerate(PHASES):
        print(f"p0_{ph} = {reading.p0[n] * kva:.3f} kW, q0_{ph} = {reading.q0[n] * kva:.3f} kvar")
    print(f"迭代 {reading.iterations} 次，殘差 {reading.residual:.3e}")
    return 0


def cmd_linearize(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    plant = NonlinearPlant(scenario.grid, scenario.injection_points(), scenario.measurements)
    zero = np.zeros(2)
    model = linearize(
        plant,
        {d.id: zero for d in scenario.devices},
        {a.id: zero for a in scenario.aggregations},
        scenario.loads_at(0.0),
        step=args.step,
    )
    text = model.to_json()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"靈敏度模型已寫入 {args.out}")
    else:
        print(text)
    return 0


# ── 進入點 ───────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="der-sim", description="DER 回授最佳化閉迴路模擬器")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=None, help="預設讀取 DERSIM_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="執行場景")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True, help="輸出目錄（runlog.jsonl、summary.csv）")
    p.add_argument("--oracle", action="store_true", help="每步求解鞍點以供 certify 使用")
    p.add_argument("--plant", choices=("nonlinear", "linear"), default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("certify", help="驗證執行紀錄的追蹤誤差界")
    p.add_argument("--log", required=True)
    p.add_argument("--out", default=None, help="預設為紀錄旁的 certify.csv")
    p.add_argument("--tail-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("powerflow", help="求解零設備輸出下的潮流")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario")
    src.add_argument("--grid")
    p.add_argument("--t", type=float, default=0.0, help="負載剖面的時間（秒）")
    p.set_defaults(func=cmd_powerflow)

    p = sub.add_parser("linearize", help="在零設備輸出下線性化並輸出靈敏度模型")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--step", type=float, default=1e-4)
    p.set_defaults(func=cmd_linearize)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    _configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ValueError, KeyError, RuntimeError, TypeError, OSError) as e:
        print(f"{RED}錯誤{RESET}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
