import json
import os
import time

import numpy as np
import pandas as pd
import pytest

from src import __version__
from src.data_models import TimeSeries
from src.result_cache import MANIFEST_NAME, ResultCache, write_json_atomic
from src.series_io import format_csv, read_csv, read_series, read_text, write_csv, write_series


def test_header_carries_version_and_sorted_provenance():
    frame = pd.DataFrame({"a": [1.0]})
    text = format_csv(frame, {"zeta": 1, "alpha": 0.1, "code_version": "ignored"})
    lines = text.splitlines()
    assert lines[0] == f"# code_version = {__version__}"
    assert lines[1:3] == ["# alpha = 0.1", "# zeta = 1"]
    assert lines[3] == "a"


def test_series_file_preserves_full_precision(tmp_path):
    samples = 1.0 + np.sin(np.linspace(0, 10, 100)) / 3
    series = TimeSeries(0.0, 0.1, samples, {"engine": "ed", "g": 1.0 / 3})
    path = write_series(tmp_path / "series.csv", series)
    loaded = read_series(path)
    assert np.array_equal(loaded.samples, samples)
    assert loaded.dt == pytest.approx(0.1, rel=1e-12)
    assert loaded.provenance["engine"] == "ed"
    assert float(loaded.provenance["g"]) == 1.0 / 3


def test_bom_and_missing_columns(tmp_path):
    path = tmp_path / "bom.csv"
    path.write_bytes("\ufeff# engine = gp\nt,y\n0,1\n".encode("utf-8"))
    assert read_text(path).startswith("# engine")
    frame, provenance = read_csv(path)
    assert provenance == {"engine": "gp"}
    assert list(frame.columns) == ["t", "y"]
    with pytest.raises(ValueError, match="x2"):
        read_series(path)
    with pytest.raises(FileNotFoundError):
        read_text(tmp_path / "absent.csv")


def test_non_uniform_series_rejected(tmp_path):
    t = np.concatenate([np.arange(70) * 0.1, [7.5]])
    path = write_csv(tmp_path / "bad.csv", pd.DataFrame({"t": t, "x2": np.ones(t.size)}), {})
    with pytest.raises(ValueError, match="uniform"):
        read_series(path)


def test_atomic_json(tmp_path):
    path = tmp_path / "sub" / "data.json"
    write_json_atomic(path, {"b": 1, "a": [1, 2]})
    assert json.loads(path.read_text(encoding="utf-8")) == {"a": [1, 2], "b": 1}
    assert [p.name for p in path.parent.iterdir()] == ["data.json"]


def _writer(directory):
    (directory / "out.csv").write_text("x\n1\n", encoding="utf-8")
    return {"frequency": 1.9}


def test_publish_and_lookup(tmp_path):
    cache = ResultCache(tmp_path)
    key = "ab" * 32
    assert cache.lookup(key) is None
    manifest = cache.publish(key, _writer)
    assert manifest["config_hash"] == key
    assert manifest["code_version"] == __version__
    assert manifest["files"] == ["out.csv"]
    assert cache.path_for(key).name == key[:16]
    assert cache.lookup(key)["frequency"] == 1.9
    assert [m["config_hash"] for m in cache.entries()] == [key]
    assert not [p for p in tmp_path.iterdir() if p.name.startswith(".tmp-")]


def test_prefix_collision_is_not_a_hit(tmp_path):
    cache = ResultCache(tmp_path)
    key = "cd" * 32
    cache.publish(key, _writer)
    other = key[:16] + "0" * 48
    assert cache.lookup(other) is None


def test_second_publisher_gets_existing_entry(tmp_path):
    cache = ResultCache(tmp_path)
    key = "ef" * 32
    cache.publish(key, _writer)
    second = cache.publish(key, lambda d: {"frequency": 2.0})
    assert second["frequency"] == 1.9
    assert (cache.path_for(key) / MANIFEST_NAME).exists()


def test_failed_writer_leaves_nothing(tmp_path):
    cache = ResultCache(tmp_path)

    def broken(directory):
        raise RuntimeError("engine failed")

    with pytest.raises(RuntimeError):
        cache.publish("12" * 32, broken)
    assert list(tmp_path.iterdir()) == []


def test_remove_and_prune(tmp_path):
    cache = ResultCache(tmp_path)
    key = "34" * 32
    cache.publish(key, _writer)
    assert cache.remove(key)
    assert not cache.remove(key)
    stale = tmp_path / ".tmp-stale"
    stale.mkdir()
    old = time.time() - 7200
    os.utime(stale, (old, old))
    fresh = tmp_path / ".tmp-fresh"
    fresh.mkdir()
    assert cache.prune_temporary() == 1
    assert fresh.exists() and not stale.exists()
