"""带参数来源头的CSV读写工具。

所有输出文件都是CSV，前面带有 `# key = value` 形式的来源行（包含 code_version）。
读取时跳过 `#` 行，并处理UTF-8 BOM。
"""

import io
import logging
from pathlib import Path
from typing import Any, Dict, Tuple

import pandas as pd

try:
    from . import __version__
    from .data_models import TimeSeries
except ImportError:
    from __init__ import __version__
    from data_models import TimeSeries

logger = logging.getLogger(__name__)

# Encodings tried in order when reading; utf-8-sig also accepts plain UTF-8
READ_ENCODINGS = ("utf-8-sig", "utf-8")


def read_text(path: Path) -> str:
    """读取文本文件并移除BOM。

    Raises:
        FileNotFoundError: 文件不存在
        UnicodeDecodeError: 所有编码都失败
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"File not found: {path}")
    last_error = None
    for encoding in READ_ENCODINGS:
        try:
            content = path.read_text(encoding=encoding)
            if content and content[0] == "\ufeff":
                content = content[1:]
            return content
        except UnicodeDecodeError as e:
            last_error = e
    raise UnicodeDecodeError(
        "multiple", b"", 0, 1, f"File {path} cannot be decoded with any of {READ_ENCODINGS}. Last error: {last_error}"
    )


def _header(provenance: Dict[str, Any]) -> str:
    lines = [f"# code_version = {__version__}"]
    for key in sorted(provenance):
        if key == "code_version":
            continue
        value = provenance[key]
        if isinstance(value, float):
            value = repr(value)
        lines.append(f"# {key} = {value}")
    return "\n".join(lines) + "\n"


def format_csv(frame: pd.DataFrame, provenance: Dict[str, Any]) -> str:
    """来源头 + CSV正文（浮点数完整精度）"""
    return _header(provenance) + frame.to_csv(index=False, float_format="%.17g", lineterminator="\n")


def write_csv(path: Path, frame: pd.DataFrame, provenance: Dict[str, Any]) -> Path:
    """写入带来源头的CSV（UTF-8无BOM）"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(format_csv(frame, provenance))
    logger.debug(f"[Run] Wrote {path} ({len(frame)} rows)")
    return path


def read_csv(path: Path) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """读取CSV，返回 (数据表, 来源字典)；来源值保持字符串"""
    text = read_text(path)
    provenance: Dict[str, str] = {}
    body_lines = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].partition("=")
            if sep:
                provenance[key.strip()] = value.strip()
        else:
            body_lines.append(line)
    body = "\n".join(body_lines)
    frame = pd.read_csv(io.StringIO(body)) if body.strip() else pd.DataFrame()
    return frame, provenance


def write_series(path: Path, series: TimeSeries) -> Path:
    return write_csv(path, series.to_frame(), series.provenance)


def read_series(path: Path) -> TimeSeries:
    """读取 (t, x2) 时间序列文件

    Raises:
        ValueError: 缺少列或时间网格不均匀
    """
    frame, provenance = read_csv(path)
    missing = {"t", "x2"} - set(frame.columns)
    if missing:
        raise ValueError(f"{path} lacks columns {sorted(missing)}")
    return TimeSeries.from_frame(frame, dict(provenance))
