"""例外類別 - 模擬器各模組共用的錯誤型別。

所有例外皆繼承自內建例外（ValueError / KeyError / RuntimeError / TypeError），
呼叫端可以只捕捉內建型別，也可以針對特定錯誤處理。
"""

from __future__ import annotations


class SchemaError(ValueError):
    """JSON 文件欄位錯誤（未知欄位、缺少欄位、型別不符）。"""


class TopologyError(ValueError):
    """網路拓樸錯誤，例如相位節點無法連回饋線頭。"""


class DegenerateNetworkError(ValueError):
    """YLL 奇異或條件數過大。"""


class PhaseError(ValueError):
    """連接方式需要的相位不存在於節點上。"""


class DivergenceError(RuntimeError):
    """潮流計算在迭代上限內未收斂。

    Attributes:
        residual: 最後一次迭代的殘差（無窮範數）。
        iterations: 已執行的迭代次數。
    """

    def __init__(self, message: str, residual: float, iterations: int) -> None:
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class CollapseError(RuntimeError):
    """迭代中出現接近零的電壓，無法做除法。"""


class UnknownLineError(KeyError):
    """找不到指定的線路 id。"""


class UnknownDeviceError(KeyError):
    """找不到指定的設備或聚合 id。"""


class LinearizationError(RuntimeError):
    """擾動點的潮流發散，無法取得靈敏度。

    Attributes:
        device_id: 發生問題的設備 id。
    """

    def __init__(self, message: str, device_id: str) -> None:
        super().__init__(message)
        self.device_id = device_id


class PreconditionError(ValueError):
    """區域代數的前提條件不成立。"""


class UnsupportedRegionError(TypeError):
    """運算不支援此種區域型別。"""


class InfeasibleSetpointError(ValueError):
    """聚合設定值不在成員區域的 Minkowski 和內。"""


class ParameterError(ValueError):
    """控制器或分析參數無效。"""


class MeasurementError(ValueError):
    """量測向量維度與量測集合不一致。"""


class CoverageError(ValueError):
    """時間序列未涵蓋模擬期間。

    Attributes:
        series: 出問題的序列名稱。
    """

    def __init__(self, message: str, series: str) -> None:
        super().__init__(message)
        self.series = series


class LogFieldError(KeyError):
    """執行紀錄缺少分析所需的欄位。"""
