"""
实验配置加载器 | Experiment Configuration Loader

功能 | Features:
- 从INI配置文件加载配置 | Load configuration from INI files
- 支持多层优先级：命令行 > --config文件 > 项目配置 > 用户配置 > 默认配置
  Layered priority: flags > --config file > project > user > defaults
- 深度合并配置 | Deep merge configurations
- pydantic校验并转换为ConfigError | pydantic validation, converted to ConfigError
- 配置内容哈希（缓存键）| Content hash of the resolved config (cache key)
"""

import configparser
import hashlib
import json
import logging
import math
from copy import deepcopy
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

try:
    from . import __version__
    from .data_models import DEFAULT_OMEGA_POST, QuenchSpec
    from .errors import ConfigError
    from .fewbody_ed import ed_dimension
except ImportError:
    from __init__ import __version__
    from data_models import DEFAULT_OMEGA_POST, QuenchSpec
    from errors import ConfigError
    from fewbody_ed import ed_dimension

logger = logging.getLogger(__name__)

PROJECT_CONFIG_NAME = ".BreathingModeSetting.ini"

# Sections whose content determines the result of a single run
RESULT_SECTIONS = ("quench", "engine", "run", "spectral")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.replace(";", ",").split(",") if item.strip()]
    return value


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class QuenchSection(_Section):
    """[quench] 淬火参数 | Quench parameters"""
    omega_pre: float = Field(default=1.0, gt=0)
    omega_post: float = Field(default=DEFAULT_OMEGA_POST, gt=0)
    g: float = Field(default=0.0, ge=0)
    n_particles: int = Field(default=2, ge=1)


class EngineSection(_Section):
    """[engine] 引擎选择及其参数 | Engine selector and engine parameters"""
    name: Literal["analytic", "ed", "gp"] = "analytic"
    n_orbitals: int = Field(default=11, ge=1)
    truncation: Literal["orbitals", "quanta", "separable"] = "separable"
    coupling: Literal["bare", "renormalized"] = "renormalized"
    basis_cap: int = Field(default=2_000_000, ge=1)
    max_quanta: int = Field(default=20, ge=2)
    grid_spacing: float = Field(default=0.01, gt=0)
    gp_nodes: int = Field(default=1024, ge=16)
    gp_half_width: float = Field(default=0.0, ge=0, description="0 selects max(12, 3 R_TF)")
    gp_steps_per_period: int = Field(default=1000, ge=10)

    @field_validator("max_quanta")
    @classmethod
    def _even_quanta(cls, value: int) -> int:
        if value % 2:
            raise ValueError("max_quanta must be even")
        return value


class RunSection(_Section):
    """[run] 传播时长 | Propagation length"""
    periods: float = Field(default=200.0, gt=0)
    samples_per_period: int = Field(default=32, ge=4)


class SpectralSection(_Section):
    """[spectral] 频谱分析参数 | Spectral analysis parameters"""
    window: Literal["hann", "none"] = "hann"
    zero_pad_factor: int = Field(default=4, ge=1)
    min_prominence: float = Field(default=0.05, gt=0, lt=1)
    window_bins: int = Field(default=7, ge=5)


class OutputSection(_Section):
    """[output] 结果缓存目录 | Result cache directory"""
    directory: str = "BreathingModeResults"


class SweepSection(_Section):
    """[sweep] 扫描网格 | Sweep grids"""
    g_values: List[float] = Field(default_factory=list)
    n_values: List[int] = Field(default_factory=list)
    workers: int = Field(default=0, ge=0, description="0 selects the CPU count")
    overlay_levels: List[float] = Field(default_factory=list)

    @field_validator("g_values", "n_values", "overlay_levels", mode="before")
    @classmethod
    def _comma_lists(cls, value: Any) -> Any:
        return _split_list(value)


class ExperimentConfig(_Section):
    """完整解析后的实验配置 | Fully resolved experiment configuration"""
    quench: QuenchSection = Field(default_factory=QuenchSection)
    engine: EngineSection = Field(default_factory=EngineSection)
    run: RunSection = Field(default_factory=RunSection)
    spectral: SpectralSection = Field(default_factory=SpectralSection)
    output: OutputSection = Field(default_factory=OutputSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    def quench_spec(self) -> QuenchSpec:
        return QuenchSpec(**self.quench.model_dump())

    def content_hash(self) -> str:
        """SHA-256 of the result-determining sections plus the code version."""
        payload = {name: getattr(self, name).model_dump() for name in RESULT_SECTIONS}
        payload["code_version"] = __version__
        text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def for_point(self, g: float, n_particles: int) -> "ExperimentConfig":
        """Copy with the quench moved to a sweep point."""
        quench = self.quench.model_copy(update={"g": float(g), "n_particles": int(n_particles)})
        return self.model_copy(update={"quench": quench})

    def provenance(self) -> Dict[str, Any]:
        """Flat section.key mapping for CSV headers."""
        flat = {}
        for name in RESULT_SECTIONS:
            for key, value in getattr(self, name).model_dump().items():
                flat[f"{name}.{key}"] = value
        flat["config_hash"] = self.content_hash()
        return flat


def get_default_config() -> Dict[str, Dict[str, Any]]:
    """返回内置默认配置 | Return built-in default configuration"""
    return ExperimentConfig().model_dump()


def deep_merge_dict(base: dict, override: dict) -> dict:
    """深度合并两个字典 | Deep merge two dictionaries

    Args:
        base: 基础字典 | Base dictionary
        override: 覆盖字典 | Override dictionary

    Returns:
        合并后的字典（新字典，不修改原字典）
        Merged dictionary (new dict, original dicts unchanged)
    """
    result = deepcopy(base)

    for key, value in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = deep_merge_dict(result[key], value)
        else:
            result[key] = deepcopy(value)

    return result


def get_user_config_path() -> Path:
    """返回用户全局配置文件路径（不自动创建）
    Return user global configuration file path (without auto-creation)
    """
    return Path.home() / ".breathingmode" / "config.ini"


def get_project_config_path(project_root: Path) -> Path:
    return Path(project_root) / PROJECT_CONFIG_NAME


def read_config_file(path: Path) -> Dict[str, Dict[str, str]]:
    """读取INI文件为嵌套字典 | Read an INI file into a nested dict

    Raises:
        ConfigError: 文件不存在或无法解析 | missing or unparsable file
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(path.read_text(encoding="utf-8-sig"), source=str(path))
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return {section: dict(parser.items(section)) for section in parser.sections()}


def _format_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_config(path: Path, config: Union[ExperimentConfig, Dict[str, Dict[str, Any]]]) -> None:
    """写入配置文件（UTF-8无BOM）| Write a config file (UTF-8 without BOM)"""
    data = config.model_dump() if isinstance(config, ExperimentConfig) else config
    parser = configparser.ConfigParser(interpolation=None)
    for section, values in data.items():
        parser[section] = {key: _format_value(value) for key, value in values.items()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
    logger.info(f"[Config] Wrote config file: {path}")


def validate_config(data: Dict[str, Dict[str, Any]]) -> ExperimentConfig:
    """pydantic校验，错误转换为带键名的ConfigError
    Validate with pydantic; errors become ConfigError naming section.key
    """
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"])
        raise ConfigError(first["msg"], key=key) from e


def check_consistency(config: ExperimentConfig, require_sweep: bool = False) -> None:
    """跨字段校验（在任何计算之前）| Cross-field checks, before any computation

    Raises:
        ConfigError: 不一致的参数组合 | inconsistent parameter combination
    """
    engine = config.engine
    if engine.name == "analytic" and config.quench.n_particles != 2:
        raise ConfigError("analytic engine requires n_particles = 2", key="quench.n_particles")
    if engine.name == "ed":
        if not math.isfinite(config.quench.g):
            raise ConfigError("ed engine requires a finite coupling", key="quench.g")
        if engine.coupling == "renormalized" and engine.truncation == "orbitals":
            raise ConfigError("renormalized coupling needs the quanta or separable truncation", key="engine.coupling")
        size = ed_dimension(config.quench.n_particles, engine.n_orbitals, engine.truncation)
        if size > engine.basis_cap:
            raise ConfigError(
                f"Fock dimension {size} exceeds basis_cap {engine.basis_cap}", key="engine.n_orbitals"
            )
    if require_sweep:
        if not config.sweep.g_values:
            raise ConfigError("sweep needs at least one g value", key="sweep.g_values")
        if not config.sweep.n_values:
            raise ConfigError("sweep needs at least one N value", key="sweep.n_values")
        if engine.name == "analytic" and any(n != 2 for n in config.sweep.n_values):
            raise ConfigError("analytic sweeps only support N = 2", key="sweep.n_values")
        if engine.name == "ed":
            too_big = [n for n in config.sweep.n_values
                       if ed_dimension(n, engine.n_orbitals, engine.truncation) > engine.basis_cap]
            if too_big:
                raise ConfigError(f"Fock dimension above basis_cap for N={too_big}", key="sweep.n_values")


def load_config(
    project_root: Optional[Path] = None,
    config_file: Optional[Path] = None,
    overrides: Optional[Dict[str, Dict[str, Any]]] = None,
) -> ExperimentConfig:
    """加载配置（多层优先级）| Load configuration (layered priority)

    优先级（从高到低）| Priority (high to low):
    1. 命令行覆盖 | Command-line overrides
    2. --config 文件 | --config file
    3. 项目目录/.BreathingModeSetting.ini | Project directory/.BreathingModeSetting.ini
    4. ~/.breathingmode/config.ini
    5. 内置默认配置 | Built-in defaults

    注意：不会自动创建配置文件 | Note: No auto-creation of config files
    """
    config = get_default_config()

    user_path = get_user_config_path()
    if user_path.exists():
        try:
            config = deep_merge_dict(config, read_config_file(user_path))
            logger.debug(f"[Config] Loaded user config from {user_path}")
        except ConfigError as e:
            logger.warning(f"[Config] Failed to read user config: {e}. Using default.")

    if project_root is not None:
        project_path = get_project_config_path(project_root)
        if project_path.exists():
            try:
                config = deep_merge_dict(config, read_config_file(project_path))
                logger.debug(f"[Config] Loaded project config from {project_path}")
            except ConfigError as e:
                logger.warning(f"[Config] Failed to read project config: {e}. Ignoring.")

    if config_file is not None:
        # 显式指定的文件错误必须失败 | an explicitly requested file must load
        config = deep_merge_dict(config, read_config_file(config_file))
        logger.debug(f"[Config] Loaded config file {config_file}")

    if overrides:
        cleaned = {section: {k: v for k, v in values.items() if v is not None}
                   for section, values in overrides.items()}
        config = deep_merge_dict(config, cleaned)

    return validate_config(config)
