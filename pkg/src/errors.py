"""异常层次 | Exception hierarchy.

CLI根据异常类型决定退出码 | The CLI maps exception types to exit codes:
- ConfigError -> 2
- NumericalError -> 3
"""

from typing import Optional


class BreathingModeError(Exception):
    """所有项目异常的基类 | Base class of all project errors"""

    exit_code = 1


class ConfigError(BreathingModeError, ValueError):
    """配置无效 | Invalid configuration

    Attributes:
        key: 出错的配置键（如 "engine.n_orbitals"）| Offending config key (e.g. "engine.n_orbitals")
    """

    exit_code = 2

    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        if key:
            message = f"{key}: {message}"
        super().__init__(message)


class NumericalError(BreathingModeError):
    """数值计算失败 | Numerical failure"""

    exit_code = 3


class OrbitalIndexError(NumericalError, ValueError):
    """振子轨道量子数超出稳定范围 | Oscillator index above the stability bound"""


class RootBracketError(NumericalError):
    """超越方程的根不在区间内 | Root of the transcendental relation not bracketed"""


class RelationValidationError(NumericalError):
    """解析能级与数值校验结果不符 | Analytic levels disagree with the independent oracle"""


class BasisSizeError(NumericalError, ValueError):
    """Fock基维数超过上限 | Fock basis dimension above the cap"""


class SolverConvergenceError(NumericalError):
    """迭代求解器未收敛 | Iterative solver did not converge

    Attributes:
        residual: 最后一次迭代的残差 | Residual at the last iteration
    """

    def __init__(self, message: str, residual: float = float("nan")):
        self.residual = residual
        super().__init__(f"{message} (residual={residual:.3e})")


class KrylovToleranceError(NumericalError):
    """Krylov步长缩小到下限仍无法满足精度 | Krylov step refused at the step-size floor"""


class BoxTooSmallError(NumericalError):
    """网格边界处密度过大 | Density reaches the grid boundary"""


class SpectralFitError(NumericalError):
    """频谱/正弦拟合失败 | Spectral or sine fit rejected"""
