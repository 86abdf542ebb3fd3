"""工廠函式 - 根據模式建立 PlantInterface 實例。

透過 create_plant() 函式根據 mode 參數或環境變數 DERSIM_PLANT
建立 NonlinearPlant 或 LinearPlant 實例。
"""

from __future__ import annotations

import logging
import os

from .plant import LinearPlant, NonlinearPlant, PlantInterface

logger = logging.getLogger(__name__)

PLANT_MODES = ("nonlinear", "linear")


def resolve_mode(mode: str | None = None, default: str = "nonlinear") -> str:
    """依 參數 > 環境變數 DERSIM_PLANT > default 的順序決定受控廠模式。"""
    if mode is None:
        mode = os.environ.get("DERSIM_PLANT", default)
    return mode.lower()


def create_plant(mode: str | None = None, **kwargs) -> PlantInterface:
    """根據模式建立受控廠。

    Args:
        mode: "nonlinear" 或 "linear"。若為 None，則讀取環境變數 DERSIM_PLANT，
              預設為 "nonlinear"。
        **kwargs: 傳遞給對應建構子的參數。
            nonlinear 模式需要：grid, points, measurement_sets（可選 tol, max_iter）。
            linear 模式需要：model。

    Returns:
        PlantInterface 實例。

    Raises:
        ValueError: 若 mode 不是 "nonlinear" 或 "linear"。
    """
    mode = resolve_mode(mode)

    if mode == "nonlinear":
        logger.info("建立 NonlinearPlant（潮流模式）")
        return NonlinearPlant(**kwargs)

    if mode == "linear":
        logger.info("建立 LinearPlant（線性模型模式）")
        return LinearPlant(**kwargs)

    raise ValueError(
        f"未知的受控廠模式 '{mode}'，請使用 'nonlinear' 或 'linear'。"
    )
