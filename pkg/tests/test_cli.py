import io
import math

import numpy as np
import pandas as pd
import pytest

from src.cli import build_parser, main
from src.config import PROJECT_CONFIG_NAME, read_config_file, write_config
from src.data_models import TimeSeries
from src.series_io import read_csv, write_series


def _frame(text):
    return pd.read_csv(io.StringIO(text), comment="#")


def test_busch_levels_to_stdout(capsys):
    assert main(["busch", "levels", "--g", "1", "--n-levels", "3"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("# code_version")
    assert len(_frame(out)) == 3


def test_busch_bands_to_file(tmp_path):
    target = tmp_path / "bands.csv"
    assert main(["busch", "bands", "--g", "2", "--max-quanta", "4", "--out", str(target)]) == 0
    frame, header = read_csv(target)
    assert float(header["g"]) == 2.0
    assert not frame.empty


def test_config_init_refuses_overwrite(tmp_path, capsys):
    args = ["--project-root", str(tmp_path), "config", "init"]
    assert main(args) == 0
    path = tmp_path / PROJECT_CONFIG_NAME
    assert "quench" in read_config_file(path)
    assert main(args) == 2
    assert "--force" in capsys.readouterr().err
    assert main(args + ["--force"]) == 0


def test_bad_config_exits_with_config_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[quench]\ng = -2\n", encoding="utf-8")
    code = main(["--project-root", str(tmp_path), "--config", str(bad), "run"])
    assert code == 2
    assert "quench.g" in capsys.readouterr().err


def test_run_reports_cache_state(tmp_path, capsys):
    write_config(tmp_path / PROJECT_CONFIG_NAME, {"engine": {"max_quanta": "8", "grid_spacing": "0.02"}})
    args = ["--project-root", str(tmp_path), "run", "--g", "1", "--periods", "40",
            "--samples-per-period", "16", "--output-dir", str(tmp_path / "results")]
    assert main(args) == 0
    assert "computed" in capsys.readouterr().out
    assert main(args) == 0
    assert "cached" in capsys.readouterr().out


def test_spectrum_subcommand(tmp_path):
    dt = 2 * math.pi / 32
    t = dt * np.arange(100 * 32)
    source = write_series(tmp_path / "series.csv", TimeSeries(0.0, dt, 1.0 + 0.2 * np.cos(1.9 * t), {"engine": "ed"}))
    out, peaks = tmp_path / "spectrum.csv", tmp_path / "peaks.csv"
    assert main(["spectrum", "--in", str(source), "--out", str(out), "--peaks", str(peaks)]) == 0
    frame, header = read_csv(peaks)
    assert header["engine"] == "ed"
    assert frame["center"].iloc[0] == pytest.approx(1.9, abs=float(header["resolution"]))
    assert main(["spectrum", "--in", str(tmp_path / "missing.csv")]) == 2


def test_parser_rejects_unknown_engine():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["run", "--engine", "mctdhb"])


def _quench_config(tmp_path, engine):
    path = tmp_path / "quench.ini"
    write_config(path, {
        "quench": {"g": "0.5", "n_particles": "2"},
        "engine": {"n_orbitals": "4", "gp_nodes": "64", "gp_steps_per_period": "50"},
        "run": {"periods": "2", "samples_per_period": "8"},
    })
    return ["--project-root", str(tmp_path), "--config", str(path), engine]


def test_ed_quench_reads_the_config_file(tmp_path):
    out = tmp_path / "ed.csv"
    assert main(_quench_config(tmp_path, "ed-quench") + ["--out", str(out)]) == 0
    frame, header = read_csv(out)
    assert float(header["g"]) == 0.5
    assert int(header["n_orbitals"]) == 4
    assert header["truncation"] == "separable"
    assert len(frame) == 16


def test_quench_flags_override_the_config_file(tmp_path):
    out = tmp_path / "ed.csv"
    args = _quench_config(tmp_path, "ed-quench") + ["--g", "1.5", "--truncation", "quanta", "--out", str(out)]
    assert main(args) == 0
    _, header = read_csv(out)
    assert float(header["g"]) == 1.5
    assert header["truncation"] == "quanta"


def test_gp_quench_reads_the_config_file(tmp_path):
    out = tmp_path / "gp.csv"
    assert main(_quench_config(tmp_path, "gp-quench") + ["--out", str(out)]) == 0
    frame, header = read_csv(out)
    assert header["engine"] == "gp"
    assert float(header["g"]) == 0.5
    assert len(frame) == 16


def test_numerical_value_errors_exit_with_numerical_code(tmp_path, monkeypatch, capsys):
    def failing(config):
        raise ValueError("matrix is singular")

    monkeypatch.setattr("src.cli.compute_series", failing)
    assert main(_quench_config(tmp_path, "ed-quench")) == 3
    assert "singular" in capsys.readouterr().err


def test_argument_errors_exit_with_config_code(tmp_path, capsys):
    assert main(["busch", "bands", "--g", "1", "--omega-post", "-1"]) == 2
    assert main(["busch", "levels", "--g", "1", "--omega", "0"]) == 2
    args = ["--project-root", str(tmp_path), "sweep", "--g-values", "0.5,abc", "--n-values", "2"]
    assert main(args) == 2
    assert "abc" in capsys.readouterr().err


def test_inconsistent_quench_config_exits_with_config_code(tmp_path):
    args = _quench_config(tmp_path, "ed-quench") + ["--truncation", "orbitals", "--coupling", "renormalized"]
    assert main(args) == 2
