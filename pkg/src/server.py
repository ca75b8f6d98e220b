"""呼吸模式工具的MCP服务器，提供解析计算和缓存实验运行。"""

import asyncio
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional

# Fix import path for both module and direct execution
current_dir = Path(__file__).parent
if str(current_dir) not in sys.path:
    sys.path.insert(0, str(current_dir))

from mcp.server import InitializationOptions, NotificationOptions, Server
from mcp.server.stdio import stdio_server
from mcp.types import TextContent, Tool
from pydantic import BaseModel, Field

# Try relative import first, fallback to absolute
try:
    from . import __version__
    from .busch_analytic import band_spectrum, rel_spectrum
    from .config import get_project_config_path, get_user_config_path, load_config
    from .data_models import DEFAULT_OMEGA_POST, QuenchSpec
    from .driver import run_experiment
    from .errors import BreathingModeError
except ImportError:
    from __init__ import __version__
    from busch_analytic import band_spectrum, rel_spectrum
    from config import get_project_config_path, get_user_config_path, load_config
    from data_models import DEFAULT_OMEGA_POST, QuenchSpec
    from driver import run_experiment
    from errors import BreathingModeError

logger = logging.getLogger(__name__)


class BuschLevelsArgs(BaseModel):
    """busch_levels工具的参数"""
    g: float = Field(ge=0, description="实验室坐标下的相互作用强度g（淬火前谐振子单位）")
    omega: float = Field(default=1.0, gt=0, description="阱频率（以淬火前频率为单位）")
    n_levels: int = Field(default=6, ge=1, le=30, description="偶宇称相对运动能级数")


class BandSpectrumArgs(BaseModel):
    """band_spectrum工具的参数"""
    g: float = Field(ge=0, description="相互作用强度g")
    omega_post: float = Field(default=DEFAULT_OMEGA_POST, gt=0, description="淬火后阱频率")
    max_quanta: int = Field(default=8, ge=2, le=40, description="最高激发量子数（偶数）")


class RunExperimentArgs(BaseModel):
    """run_experiment工具的参数"""
    project_root: str = Field(description="项目根目录绝对路径（读取.BreathingModeSetting.ini，结果缓存相对于此目录）")
    config_file: Optional[str] = Field(default=None, description="额外的INI配置文件路径，可选")
    engine: Optional[str] = Field(default=None, description="引擎：analytic / ed / gp")
    g: Optional[float] = Field(default=None, ge=0, description="相互作用强度g")
    n_particles: Optional[int] = Field(default=None, ge=1, description="粒子数N")
    n_orbitals: Optional[int] = Field(default=None, ge=1, description="ED轨道数M")
    omega_post: Optional[float] = Field(default=None, gt=0, description="淬火后阱频率")
    periods: Optional[float] = Field(default=None, gt=0, description="传播的淬火后周期数")


class ShowConfigArgs(BaseModel):
    """show_config工具的参数"""
    project_root: str = Field(description="项目根目录绝对路径")


# Initialize MCP server
app = Server("breathing-mode-mcp")


@app.list_tools()
async def list_tools() -> list[Tool]:
    """列出可用的MCP工具"""
    return [
        Tool(
            name="busch_levels",
            description="两体相对运动偶宇称能级及相互作用能移（解析，秒级）",
            inputSchema=BuschLevelsArgs.model_json_schema(),
        ),
        Tool(
            name="band_spectrum",
            description="两体呼吸模式完整谱线：质心线2Ω与相对运动线（以Ω_post为单位）",
            inputSchema=BandSpectrumArgs.model_json_schema(),
        ),
        Tool(
            name="run_experiment",
            description=(
                "按配置运行一次淬火实验（analytic/ed/gp），输出缓存在配置哈希目录；"
                "相同配置直接复用缓存"
            ),
            inputSchema=RunExperimentArgs.model_json_schema(),
        ),
        Tool(
            name="show_config",
            description="显示合并后的有效配置及各配置文件位置",
            inputSchema=ShowConfigArgs.model_json_schema(),
        ),
    ]


def _frame_text(frame) -> str:
    return frame.to_csv(index=False, float_format="%.10g", lineterminator="\n")


@app.call_tool()
async def call_tool(name: str, arguments: Any) -> list[TextContent]:
    """处理MCP工具调用

    Args:
        name: 工具名称（"busch_levels"、"band_spectrum"、"run_experiment"、"show_config"）
        arguments: 工具参数

    Returns:
        包含结果的TextContent列表
    """
    if name == "busch_levels":
        try:
            args = BuschLevelsArgs(**arguments)
            spectrum = await asyncio.to_thread(rel_spectrum, args.g, args.omega, args.n_levels)
            return [TextContent(type="text", text=_frame_text(spectrum.to_frame()))]
        except (BreathingModeError, ValueError) as e:
            return [TextContent(type="text", text=f"[ERROR] Failed to compute levels: {e}")]

    elif name == "band_spectrum":
        try:
            args = BandSpectrumArgs(**arguments)
            quench = QuenchSpec(omega_post=args.omega_post, g=args.g)
            bands = await asyncio.to_thread(band_spectrum, quench, args.max_quanta)
            return [TextContent(type="text", text=_frame_text(bands.to_frame()))]
        except (BreathingModeError, ValueError) as e:
            return [TextContent(type="text", text=f"[ERROR] Failed to compute bands: {e}")]

    elif name == "run_experiment":
        try:
            args = RunExperimentArgs(**arguments)
            root = Path(args.project_root)
            overrides = {
                "quench": {"g": args.g, "n_particles": args.n_particles, "omega_post": args.omega_post},
                "engine": {"name": args.engine, "n_orbitals": args.n_orbitals},
                "run": {"periods": args.periods},
            }
            config = load_config(root, Path(args.config_file) if args.config_file else None, overrides)
            output = Path(config.output.directory)
            if not output.is_absolute():
                config = config.model_copy(update={
                    "output": config.output.model_copy(update={"directory": str(root / output)})
                })
            result = await asyncio.to_thread(run_experiment, config)
            status = "[CACHED]" if result.cached else "[SUCCESS]"
            response_text = f"""{status} Experiment finished

**Frequency**: {result.frequency:.6f} +- {result.sigma:.6f} (omega_br / Omega_post, {result.method})
**Config Hash**: {result.config_hash}
**Result Directory**: {result.directory}
**Files**: {', '.join(result.manifest.get('files', []))}
"""
            return [TextContent(type="text", text=response_text)]
        except (BreathingModeError, ValueError, OSError) as e:
            return [TextContent(type="text", text=f"[ERROR] Experiment failed: {e}")]

    elif name == "show_config":
        try:
            args = ShowConfigArgs(**arguments)
            root = Path(args.project_root)
            config = load_config(root)
            response_text = f"""[INFO] Effective configuration

User Config: {get_user_config_path()}
Project Config: {get_project_config_path(root)}
Config Hash: {config.content_hash()}

{json.dumps(config.model_dump(mode="json"), indent=2, sort_keys=True)}
"""
            return [TextContent(type="text", text=response_text)]
        except (BreathingModeError, ValueError) as e:
            return [TextContent(type="text", text=f"[ERROR] Failed to load configuration: {e}")]

    else:
        raise ValueError(f"Unknown tool: {name}")


async def async_main():
    """MCP服务器异步主入口"""
    async with stdio_server() as (read_stream, write_stream):
        await app.run(
            read_stream,
            write_stream,
            InitializationOptions(
                server_name="breathing-mode-mcp",
                server_version=__version__,
                capabilities=app.get_capabilities(
                    notification_options=NotificationOptions(),
                    experimental_capabilities={},
                ),
            ),
        )


def main():
    """同步入口（由uv调用）"""
    # 日志输出到stderr（不影响MCP的stdout JSON通信）
    logging.basicConfig(level=logging.INFO, format="[%(levelname)s] %(message)s", stream=sys.stderr)
    asyncio.run(async_main())


if __name__ == "__main__":
    main()
