"""breathing-mode 命令行入口 | breathing-mode command line.

stdout只输出数据，日志写到stderr。| Data goes to stdout, logs to stderr.
退出码 | Exit codes: 0 成功 success, 2 配置或参数错误 config or argument error, 3 数值失败 numerical failure.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

try:
    from . import __version__
    from .busch_analytic import band_spectrum, rel_spectrum, validate_busch_relation
    from .config import check_consistency, get_project_config_path, load_config, write_config
    from .data_models import DEFAULT_OMEGA_POST, QuenchSpec
    from .driver import (
        ContourTable,
        compute_series,
        gp_hyperbola_overlay,
        run_experiment,
        sweep,
        validate_relative_coupling,
    )
    from .errors import BreathingModeError, ConfigError
    from .series_io import format_csv, read_series, write_csv, write_series
    from .spectral import extract_peaks, power_spectrum
except ImportError:
    from __init__ import __version__
    from busch_analytic import band_spectrum, rel_spectrum, validate_busch_relation
    from config import check_consistency, get_project_config_path, load_config, write_config
    from data_models import DEFAULT_OMEGA_POST, QuenchSpec
    from driver import (
        ContourTable,
        compute_series,
        gp_hyperbola_overlay,
        run_experiment,
        sweep,
        validate_relative_coupling,
    )
    from errors import BreathingModeError, ConfigError
    from series_io import format_csv, read_series, write_csv, write_series
    from spectral import extract_peaks, power_spectrum

logger = logging.getLogger(__name__)


def _emit(frame, provenance: Dict[str, Any], out: Optional[str]) -> None:
    if out:
        write_csv(Path(out), frame, provenance)
        logger.info(f"[Run] Wrote {out}")
    else:
        sys.stdout.write(format_csv(frame, provenance))


def _floats(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from e


def _quench(**fields: Any) -> QuenchSpec:
    try:
        return QuenchSpec(**fields)
    except ValueError as e:
        raise ConfigError(str(e), key="quench") from e


def _overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    return {
        "quench": {"g": args.g, "n_particles": args.n, "omega_pre": args.omega_pre, "omega_post": args.omega_post},
        "engine": {"name": args.engine, "n_orbitals": args.m,
                   "truncation": args.truncation, "coupling": args.coupling},
        "run": {"periods": args.periods, "samples_per_period": args.samples_per_period},
        "output": {"directory": args.output_dir},
    }


def _load(args: argparse.Namespace, extra: Optional[Dict[str, Dict[str, Any]]] = None):
    overrides = _overrides(args)
    for section, values in (extra or {}).items():
        overrides.setdefault(section, {}).update(values)
    config_file = Path(args.config) if args.config else None
    return load_config(Path(args.project_root), config_file, overrides)


def cmd_busch_levels(args: argparse.Namespace) -> None:
    if not args.omega > 0:
        raise ConfigError(f"must be positive, got {args.omega}", key="--omega")
    spectrum = rel_spectrum(args.g, args.omega, args.n_levels)
    _emit(spectrum.to_frame(), {"g": args.g, "omega": args.omega}, args.out)


def cmd_busch_bands(args: argparse.Namespace) -> None:
    quench = _quench(omega_post=args.omega_post, g=args.g)
    bands = band_spectrum(quench, args.max_quanta)
    _emit(bands.to_frame(), {**quench.to_dict(), "max_quanta": args.max_quanta}, args.out)


def _write_series(series, out: Optional[str]) -> None:
    if out:
        write_series(Path(out), series)
    else:
        sys.stdout.write(format_csv(series.to_frame(), series.provenance))


def cmd_quench(args: argparse.Namespace) -> None:
    config = _load(args)
    check_consistency(config)
    _write_series(compute_series(config), args.out)


def cmd_spectrum(args: argparse.Namespace) -> None:
    series = read_series(Path(args.input))
    window = None if args.window == "none" else args.window
    spectrum = power_spectrum(series, window, args.zero_pad)
    peaks = extract_peaks(series, window, args.zero_pad, args.min_prominence)
    header = {**series.provenance, "window": args.window, "zero_pad_factor": args.zero_pad,
              "resolution": peaks.resolution}
    _emit(spectrum.to_frame(), header, args.out)
    if args.peaks:
        write_csv(Path(args.peaks), peaks.to_frame(), header)
    for p in peaks:
        flag = " (flagged)" if p.flagged else ""
        logger.info(f"[Spectral] peak at {p.center:.5f} +- {p.sigma:.5f}{flag}")


def cmd_run(args: argparse.Namespace) -> None:
    result = run_experiment(_load(args))
    source = "cached" if result.cached else "computed"
    print(f"frequency = {result.frequency:.6f} +- {result.sigma:.6f} ({result.method}, {source})")
    print(f"directory = {result.directory}")


def cmd_sweep(args: argparse.Namespace) -> None:
    extra = {"sweep": {"g_values": _floats(args.g_values), "n_values": _floats(args.n_values),
                       "workers": args.workers}}
    if extra["sweep"]["n_values"] is not None:
        extra["sweep"]["n_values"] = [int(n) for n in extra["sweep"]["n_values"]]
    table = sweep(_load(args, extra))
    sys.stdout.write(format_csv(table.to_frame(), {}))


def cmd_overlay(args: argparse.Namespace) -> None:
    table = ContourTable.read(Path(args.table))
    levels = _floats(args.levels) or []
    overlay = gp_hyperbola_overlay(table, levels)
    curves, deviations = overlay.write(Path(args.out_dir), {"levels": args.levels, "table": args.table})
    print(f"curves = {curves}")
    print(f"deviation = {deviations}")


def cmd_config_init(args: argparse.Namespace) -> None:
    path = Path(args.path) if args.path else get_project_config_path(Path(args.project_root))
    if path.exists() and not args.force:
        raise FileExistsError(f"{path} exists; use --force to overwrite")
    write_config(path, load_config(Path(args.project_root)))
    print(path)


def cmd_validate(args: argparse.Namespace) -> None:
    for g, analytic, grid in validate_busch_relation():
        print(f"relation g={g}: analytic={analytic:.8f} grid={grid:.8f}")
    if args.coupling:
        m_list = [int(m) for m in _floats(args.m_list)]
        frame = validate_relative_coupling(orbital_counts=m_list)
        _emit(frame, {"check": "relative_coupling"}, args.out)


def _add_quench_flags(p: argparse.ArgumentParser) -> None:
    # unset flags leave the layered config untouched
    p.add_argument("--g", type=float, help="interaction strength g")
    p.add_argument("--n", type=int, help="particle number N")
    p.add_argument("--omega-pre", type=float, help="pre-quench trap frequency")
    p.add_argument("--omega-post", type=float, help="post-quench trap frequency")
    p.add_argument("--periods", type=float, help="post-quench trap periods")
    p.add_argument("--samples-per-period", type=int, help="samples per period")


def _add_ed_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--m", type=int, help="number of orbitals (ed)")
    p.add_argument("--truncation", choices=["orbitals", "quanta", "separable"], help="ed basis truncation")
    p.add_argument("--coupling", choices=["bare", "renormalized"], help="ed contact coupling")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    _add_quench_flags(p)
    p.add_argument("--engine", choices=["analytic", "ed", "gp"], help="engine selector")
    _add_ed_flags(p)
    p.add_argument("--output-dir", help="result cache directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="breathing-mode",
        description="Breathing-mode dynamics of contact-interacting bosons in a 1D harmonic trap",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="config file (INI), applied above user/project files")
    parser.add_argument("--project-root", default=".", help="directory holding .BreathingModeSetting.ini")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    busch = sub.add_parser("busch", help="analytic two-body levels and bands")
    busch_sub = busch.add_subparsers(dest="busch_command", required=True)
    p = busch_sub.add_parser("levels", help="even relative-motion levels")
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--n-levels", type=int, default=6)
    p.add_argument("--out")
    p.set_defaults(func=cmd_busch_levels)
    p = busch_sub.add_parser("bands", help="breathing band spectrum in units of omega_post")
    p.add_argument("--g", type=float, required=True)
    p.add_argument("--omega-post", type=float, default=DEFAULT_OMEGA_POST)
    p.add_argument("--max-quanta", type=int, default=8)
    p.add_argument("--out")
    p.set_defaults(func=cmd_busch_bands)

    p = sub.add_parser("ed-quench", help="exact-diagonalization quench series")
    _add_quench_flags(p)
    _add_ed_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_quench, engine="ed", output_dir=None)

    p = sub.add_parser("gp-quench", help="mean-field quench series")
    _add_quench_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_quench, engine="gp", m=None, truncation=None, coupling=None, output_dir=None)

    p = sub.add_parser("spectrum", help="spectrum and fitted peaks of a series file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out")
    p.add_argument("--peaks")
    p.add_argument("--window", choices=["hann", "none"], default="hann")
    p.add_argument("--zero-pad", type=int, default=4)
    p.add_argument("--min-prominence", type=float, default=0.05)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("run", help="single cached experiment")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="(g, N) sweep into a contour table")
    _add_config_flags(p)
    p.add_argument("--g-values", help="comma-separated g grid")
    p.add_argument("--n-values", help="comma-separated N grid")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("overlay", help="constant g(N-1) hyperbolas over a contour table")
    p.add_argument("--table", required=True)
    p.add_argument("--levels", required=True, help="comma-separated anchor frequency levels")
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_overlay)

    config = sub.add_parser("config", help="configuration files")
    config_sub = config.add_subparsers(dest="config_command", required=True)
    p = config_sub.add_parser("init", help="write the resolved configuration")
    p.add_argument("--path", help="target file (default: project config)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_config_init)

    p = sub.add_parser("validate", help="check the two-body relation and coupling normalization")
    p.add_argument("--coupling", action="store_true", help="also run the ED coupling check")
    p.add_argument("--m-list", default="10,14,18,26,34")
    p.add_argument("--out")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(levelname)s] %(message)s", stream=sys.stderr)
    try:
        args.func(args)
    except BreathingModeError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return e.exit_code
    except (FileNotFoundError, FileExistsError) as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"[ERROR] {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
