"""按配置哈希组织的结果缓存。

每个配置哈希对应一个目录，包含输出文件和 manifest.json。
发布是原子的：先写入临时目录，再用 os.replace 改名，
因此并发的扫描工作进程可以安全共享同一个缓存根目录。
"""

import json
import logging
import os
import shutil
import tempfile
import time
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

try:
    from . import __version__
except ImportError:
    from __init__ import __version__

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
TEMP_PREFIX = ".tmp-"


def write_json_atomic(path: Path, data: Dict[str, Any]) -> None:
    """写入临时文件后改名，读者永远看不到半写的JSON"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=TEMP_PREFIX, suffix=".json")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        os.replace(tmp, path)
    except Exception:
        Path(tmp).unlink(missing_ok=True)
        raise


class ResultCache:
    """管理缓存根目录下的结果目录。"""

    # 临时目录存活超过该秒数视为中断残留
    STALE_TEMP_SECONDS = 3600

    def __init__(self, root: Path):
        self.root = Path(root)

    def path_for(self, config_hash: str) -> Path:
        return self.root / config_hash[:16]

    def lookup(self, config_hash: str) -> Optional[Dict[str, Any]]:
        """返回已发布条目的manifest；不存在或哈希不匹配时返回None"""
        manifest_path = self.path_for(config_hash) / MANIFEST_NAME
        if not manifest_path.exists():
            return None
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            logger.warning(f"[Cache] Unreadable manifest {manifest_path}: {e}")
            return None
        if manifest.get("config_hash") != config_hash:
            logger.warning(f"[Cache] Hash prefix collision at {manifest_path.parent}")
            return None
        return manifest

    def publish(
        self,
        config_hash: str,
        writer: Callable[[Path], Dict[str, Any]],
    ) -> Dict[str, Any]:
        """在临时目录中运行writer，然后原子地发布。

        Args:
            config_hash: 完整配置哈希
            writer: 向给定目录写入文件，返回manifest字段

        Returns:
            已发布条目的manifest（若另一进程抢先发布，则返回其manifest）
        """
        self.root.mkdir(parents=True, exist_ok=True)
        tmp_dir = Path(tempfile.mkdtemp(dir=self.root, prefix=TEMP_PREFIX))
        try:
            manifest = dict(writer(tmp_dir))
            manifest["config_hash"] = config_hash
            manifest["code_version"] = __version__
            manifest["files"] = sorted(p.name for p in tmp_dir.iterdir())
            write_json_atomic(tmp_dir / MANIFEST_NAME, manifest)
            target = self.path_for(config_hash)
            try:
                os.replace(tmp_dir, target)
            except OSError:
                # 另一工作进程已发布同一哈希 | another worker published the same hash
                existing = self.lookup(config_hash)
                if existing is None:
                    raise
                shutil.rmtree(tmp_dir, ignore_errors=True)
                return existing
            logger.info(f"[Cache] Published {target.name}")
            return manifest
        except BaseException:
            shutil.rmtree(tmp_dir, ignore_errors=True)
            raise

    def entries(self) -> List[Dict[str, Any]]:
        """列出所有已发布条目的manifest"""
        if not self.root.exists():
            return []
        result = []
        for d in sorted(self.root.iterdir()):
            if d.is_dir() and not d.name.startswith(TEMP_PREFIX) and (d / MANIFEST_NAME).exists():
                try:
                    result.append(json.loads((d / MANIFEST_NAME).read_text(encoding="utf-8")))
                except (OSError, json.JSONDecodeError):
                    continue
        return result

    def remove(self, config_hash: str) -> bool:
        target = self.path_for(config_hash)
        if not target.exists():
            return False
        shutil.rmtree(target)
        return True

    def prune_temporary(self, max_age: Optional[float] = None) -> int:
        """清理中断留下的临时目录，返回删除数量"""
        if not self.root.exists():
            return 0
        max_age = self.STALE_TEMP_SECONDS if max_age is None else max_age
        now = time.time()
        removed = 0
        for d in self.root.iterdir():
            if not d.name.startswith(TEMP_PREFIX):
                continue
            try:
                if now - d.stat().st_mtime < max_age:
                    continue
                if d.is_dir():
                    shutil.rmtree(d)
                else:
                    d.unlink()
                removed += 1
            except OSError:
                pass  # 忽略删除失败的情况 | Ignore deletion failures
        if removed:
            logger.info(f"[Cache] Pruned {removed} stale temporary entries")
        return removed
