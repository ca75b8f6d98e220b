"""呼吸模式模拟的数据模型。

此模块定义了类型化的数据结构来替代原始字典，
在各个引擎（解析、精确对角化、平均场）和频谱分析之间传递。
"""

import math
from dataclasses import dataclass, field, asdict, replace
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd


DEFAULT_OMEGA_POST = math.sqrt(0.9)

# Minimum number of samples a time series must carry
MIN_SERIES_COUNT = 64


@dataclass(frozen=True)
class QuenchSpec:
    """一次淬火实验的定义。

    Attributes:
        omega_pre: 淬火前的阱频率（约定为1）
        omega_post: 淬火后的阱频率（以omega_pre为单位）
        g: 相互作用强度（淬火前谐振子单位）
        n_particles: 粒子数N
    """
    omega_pre: float = 1.0
    omega_post: float = DEFAULT_OMEGA_POST
    g: float = 0.0
    n_particles: int = 2

    def __post_init__(self) -> None:
        if not self.omega_pre > 0:
            raise ValueError(f"omega_pre must be positive, got {self.omega_pre}")
        if not self.omega_post > 0:
            raise ValueError(f"omega_post must be positive, got {self.omega_post}")
        if not self.g >= 0:
            raise ValueError(f"g must be non-negative (repulsive regime only), got {self.g}")
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise ValueError(f"n_particles must be a positive integer, got {self.n_particles}")

    @property
    def g_rel(self) -> float:
        """相对坐标 r=(x1-x2)/√2 下的接触耦合 g/√2"""
        return self.g / math.sqrt(2.0)

    @property
    def gp_parameter(self) -> float:
        """Gross-Pitaevskii参数 Λ = g(N-1)"""
        return self.g * (self.n_particles - 1)

    @property
    def is_null_quench(self) -> bool:
        return self.omega_post == self.omega_pre

    def pre_quench(self) -> "QuenchSpec":
        """返回淬火前的哈密顿量参数（omega_post = omega_pre）"""
        return replace(self, omega_post=self.omega_pre)

    def with_(self, **changes: Any) -> "QuenchSpec":
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "QuenchSpec":
        return cls(
            omega_pre=float(data.get("omega_pre", 1.0)),
            omega_post=float(data.get("omega_post", DEFAULT_OMEGA_POST)),
            g=float(data.get("g", 0.0)),
            n_particles=int(data.get("n_particles", 2)),
        )


@dataclass(frozen=True)
class HOBasisSpec:
    """谐振子轨道基。

    Attributes:
        n_orbitals: 轨道数M
        omega_basis: 定义轨道的振子频率
    """
    n_orbitals: int
    omega_basis: float = 1.0

    def __post_init__(self) -> None:
        if int(self.n_orbitals) != self.n_orbitals or self.n_orbitals < 1:
            raise ValueError(f"n_orbitals must be a positive integer, got {self.n_orbitals}")
        if not self.omega_basis > 0:
            raise ValueError(f"omega_basis must be positive, got {self.omega_basis}")


@dataclass
class TimeSeries:
    """均匀时间网格上的 ⟨X̂²⟩(t) 采样。

    Attributes:
        t0: 起始时间
        dt: 采样间隔
        samples: 实数采样值
        provenance: 参数来源记录（写入CSV头）
    """
    t0: float
    dt: float
    samples: np.ndarray
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float).reshape(-1)
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.samples.size < MIN_SERIES_COUNT:
            raise ValueError(
                f"time series needs at least {MIN_SERIES_COUNT} samples, got {self.samples.size}"
            )

    @property
    def count(self) -> int:
        return int(self.samples.size)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.count)

    @property
    def duration(self) -> float:
        return self.count * self.dt

    def with_samples(self, samples: np.ndarray) -> "TimeSeries":
        return TimeSeries(self.t0, self.dt, samples, dict(self.provenance))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "x2": self.samples})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, provenance: Optional[Dict[str, Any]] = None) -> "TimeSeries":
        """从 (t, x2) 表构造；要求时间网格均匀"""
        t = frame["t"].to_numpy(dtype=float)
        if t.size < 2:
            raise ValueError("time series file holds fewer than two samples")
        dt = float(t[1] - t[0])
        if not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-9 * max(1.0, abs(t[-1]))):
            raise ValueError("time grid is not uniform")
        return cls(float(t[0]), dt, frame["x2"].to_numpy(dtype=float), provenance or {})


@dataclass(frozen=True)
class Peak:
    """一个拟合的频谱峰。

    Attributes:
        center: 中心角频率
        width: 洛伦兹半宽
        amplitude: 峰高
        residual: 归一化拟合残差
        sigma: 不确定度 max(拟合协方差, Δω)
        flagged: 残差超过阈值时为True
    """
    center: float
    width: float
    amplitude: float
    residual: float
    sigma: float
    flagged: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class PeakSet:
    """拟合峰集合以及频谱分辨率 Δω = 2π/(count·dt)"""
    peaks: List[Peak]
    resolution: float

    def __len__(self) -> int:
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    @property
    def centers(self) -> np.ndarray:
        return np.array([p.center for p in self.peaks], dtype=float)

    def in_range(self, lo: float, hi: float) -> "PeakSet":
        return PeakSet([p for p in self.peaks if lo <= p.center <= hi], self.resolution)

    def strongest(self, count: int = 1) -> List[Peak]:
        return sorted(self.peaks, key=lambda p: p.amplitude, reverse=True)[:count]

    def to_frame(self) -> pd.DataFrame:
        columns = ["center", "width", "amplitude", "sigma", "residual", "flagged"]
        rows = [[p.center, p.width, p.amplitude, p.sigma, p.residual, p.flagged] for p in self.peaks]
        return pd.DataFrame(rows, columns=columns)


@dataclass
class RelSpectrum:
    """相对运动偶宇称能级与能移（单位 ħΩ₀）"""
    g_lab: float
    omega: float
    levels: np.ndarray
    shifts: np.ndarray

    def __post_init__(self) -> None:
        self.levels = np.asarray(self.levels, dtype=float)
        self.shifts = np.asarray(self.shifts, dtype=float)
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("relative-motion levels must be strictly increasing")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "level_index": np.arange(self.levels.size),
            "g": np.full(self.levels.size, self.g_lab),
            "energy": self.levels,
        })


@dataclass(frozen=True)
class BandLine:
    """呼吸谱中的一条谱线。

    Attributes:
        frequency: 频率（以Ω_post为单位）
        kind: "cm" 或 "relative"
        i: 上能级指标（相对运动为 φ_{2i}，质心为 Φ_{2I}）
        j: 下能级指标
    """
    frequency: float
    kind: str
    i: int
    j: int

    @property
    def quanta(self) -> tuple:
        return (2 * self.i, 2 * self.j)


@dataclass
class BandSpectrum:
    """按频率排序的完整呼吸谱"""
    entries: List[BandLine]
    g: float
    omega: float
    max_quanta: int

    def lines(self, kind: Optional[str] = None) -> List[BandLine]:
        if kind is None:
            return list(self.entries)
        return [e for e in self.entries if e.kind == kind]

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([e.frequency for e in self.entries], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[e.kind, e.i, e.j, e.frequency] for e in self.entries],
            columns=["kind", "i", "j", "frequency_over_omega"],
        )


@dataclass(frozen=True)
class FrequencyEstimate:
    """呼吸频率（以Ω_post为单位）及其误差"""
    frequency: float
    sigma: float
    method: str = "sine"


@dataclass
class ContourRow:
    """扫描表中的一行：每个 (g, N, engine) 一行"""
    g: float
    n_particles: int
    engine: str
    frequency: float = float("nan")
    sigma: float = float("nan")
    metadata: str = ""
    status: str = "ok"
    error: str = ""

    @property
    def gp_parameter(self) -> float:
        return self.g * (self.n_particles - 1)

    def key(self) -> tuple:
        return (self.engine, round(self.g, 12), int(self.n_particles))

    def to_dict(self) -> Dict[str, Any]:
        result = asdict(self)
        result["lambda"] = self.gp_parameter
        return result

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ContourRow":
        return cls(
            g=float(data["g"]),
            n_particles=int(data["n_particles"]),
            engine=str(data["engine"]),
            frequency=float(data.get("frequency", float("nan"))),
            sigma=float(data.get("sigma", float("nan"))),
            metadata=_text(data.get("metadata")),
            status=_text(data.get("status")) or "ok",
            error=_text(data.get("error")),
        )


def _text(value: Any) -> str:
    """CSV读回的空单元格可能是NaN | Empty CSV cells may come back as NaN"""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return str(value)
