"""Experiment orchestration: single runs, (g, N) sweeps, overlays and coupling checks.

Every run is keyed by the content hash of its resolved config; its outputs live
in one cache directory and are never rewritten once published.
"""

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

try:
    from . import __version__
    from .busch_analytic import breathing_signal_analytic, even_level_energy
    from .config import ExperimentConfig, check_consistency
    from .data_models import ContourRow, FrequencyEstimate, TimeSeries
    from .fewbody_ed import build_fock_basis, build_hamiltonian, ed_dimension, ground_state, simulate_quench
    from .meanfield_gp import GPGrid, default_grid, gp_quench_series
    from .result_cache import ResultCache, write_json_atomic
    from .series_io import read_csv, write_csv, write_series
    from .spectral import extract_peaks, lowest_band_frequency, power_spectrum, single_mode_frequency
    from .trap_model import time_grid
except ImportError:
    from __init__ import __version__
    from busch_analytic import breathing_signal_analytic, even_level_energy
    from config import ExperimentConfig, check_consistency
    from data_models import ContourRow, FrequencyEstimate, TimeSeries
    from fewbody_ed import build_fock_basis, build_hamiltonian, ed_dimension, ground_state, simulate_quench
    from meanfield_gp import GPGrid, default_grid, gp_quench_series
    from result_cache import ResultCache, write_json_atomic
    from series_io import read_csv, write_csv, write_series
    from spectral import extract_peaks, lowest_band_frequency, power_spectrum, single_mode_frequency
    from trap_model import time_grid

logger = logging.getLogger(__name__)

SERIES_FILE = "series.csv"
SPECTRUM_FILE = "spectrum.csv"
PEAKS_FILE = "peaks.csv"
CONTOUR_FILE = "contour.csv"
SWEEP_MANIFEST = "sweep_manifest.json"

# Frequencies expected for the studied regime, in units of Omega_post
STUDIED_RANGE = (math.sqrt(3.0) - 0.05, 2.05)


@dataclass
class RunResult:
    """Outcome of one run_experiment call."""
    config_hash: str
    directory: Path
    frequency: float
    sigma: float
    method: str
    cached: bool
    manifest: Dict[str, Any] = field(default_factory=dict)

    @property
    def series_path(self) -> Path:
        return self.directory / SERIES_FILE

    @property
    def spectrum_path(self) -> Path:
        return self.directory / SPECTRUM_FILE

    @property
    def peaks_path(self) -> Path:
        return self.directory / PEAKS_FILE

    def peaks(self) -> pd.DataFrame:
        return read_csv(self.peaks_path)[0]


def _gp_grid(config: ExperimentConfig) -> GPGrid:
    engine, quench = config.engine, config.quench
    if engine.gp_half_width > 0:
        return GPGrid(engine.gp_half_width, engine.gp_nodes)
    lam = quench.g * (quench.n_particles - 1)
    return default_grid(lam, min(quench.omega_pre, quench.omega_post), engine.gp_nodes)


def compute_series(config: ExperimentConfig) -> TimeSeries:
    """Run the configured engine and return <X^2>(t)."""
    quench = config.quench_spec()
    engine, run = config.engine, config.run
    if engine.name == "analytic":
        t = time_grid(quench.omega_post, run.periods, run.samples_per_period)
        return breathing_signal_analytic(quench, engine.max_quanta, t, engine.grid_spacing)
    if engine.name == "ed":
        return simulate_quench(quench, engine.n_orbitals, run.periods, run.samples_per_period, engine.basis_cap,
                               engine.truncation, engine.coupling)
    return gp_quench_series(quench, _gp_grid(config), run.periods, run.samples_per_period,
                            engine.gp_steps_per_period)


def estimate_frequency(config: ExperimentConfig, series: TimeSeries, peaks) -> FrequencyEstimate:
    """Sine fit for mean-field runs, lowest-band peak otherwise."""
    omega = config.quench.omega_post
    if config.engine.name == "gp":
        return single_mode_frequency(series, omega, peaks)
    return lowest_band_frequency(peaks, omega)


def run_experiment(config: ExperimentConfig, cache: Optional[ResultCache] = None) -> RunResult:
    """Engine -> TimeSeries -> spectrum -> peaks -> CSV outputs in the cache.

    A cache hit returns the stored outputs untouched.
    """
    check_consistency(config)
    cache = cache or ResultCache(Path(config.output.directory))
    config_hash = config.content_hash()
    stored = cache.lookup(config_hash)
    if stored is not None:
        logger.info(f"[Run] Cache hit {config_hash[:16]}")
        return RunResult(config_hash, cache.path_for(config_hash), stored["frequency"], stored["sigma"],
                         stored["method"], cached=True, manifest=stored)

    start = time.perf_counter()
    spectral = config.spectral

    def writer(directory: Path) -> Dict[str, Any]:
        series = compute_series(config)
        provenance = {**config.provenance(), **series.provenance}
        series.provenance = provenance
        spectrum = power_spectrum(series, spectral.window, spectral.zero_pad_factor)
        peaks = extract_peaks(series, spectral.window, spectral.zero_pad_factor,
                              spectral.min_prominence, spectral.window_bins)
        estimate = estimate_frequency(config, series, peaks)
        header = {**provenance, "resolution": peaks.resolution}
        write_series(directory / SERIES_FILE, series)
        write_csv(directory / SPECTRUM_FILE, spectrum.to_frame(), header)
        write_csv(directory / PEAKS_FILE, peaks.to_frame(), header)
        return {
            "engine": config.engine.name,
            "frequency": estimate.frequency,
            "sigma": estimate.sigma,
            "method": estimate.method,
            "n_peaks": len(peaks),
            "resolution": peaks.resolution,
            "config": config.model_dump(mode="json"),
        }

    manifest = cache.publish(config_hash, writer)
    logger.info(
        f"[Run] {config.engine.name} g={config.quench.g} N={config.quench.n_particles}: "
        f"omega_br/Omega = {manifest['frequency']:.5f} +- {manifest['sigma']:.5f} "
        f"in {time.perf_counter() - start:.1f}s"
    )
    return RunResult(config_hash, cache.path_for(config_hash), manifest["frequency"], manifest["sigma"],
                     manifest["method"], cached=False, manifest=manifest)


# --- sweeps ------------------------------------------------------------------

@dataclass
class ContourTable:
    """One row per (g, N, engine)."""
    rows: List[ContourRow] = field(default_factory=list)

    COLUMNS = ["g", "n_particles", "engine", "frequency", "sigma", "lambda", "metadata", "status", "error"]

    def __post_init__(self) -> None:
        keys = [r.key() for r in self.rows]
        if len(keys) != len(set(keys)):
            raise ValueError("contour table holds duplicate (engine, g, N) rows")
        self.rows = sorted(self.rows, key=lambda r: (r.engine, r.n_particles, r.g))

    def __len__(self) -> int:
        return len(self.rows)

    def ok_rows(self) -> List[ContourRow]:
        return [r for r in self.rows if r.status == "ok" and math.isfinite(r.frequency)]

    def get(self, g: float, n_particles: int, engine: str) -> ContourRow:
        key = (engine, round(g, 12), int(n_particles))
        for r in self.rows:
            if r.key() == key:
                return r
        raise KeyError(key)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in self.rows], columns=self.COLUMNS)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ContourTable":
        return cls([ContourRow.from_dict(rec) for rec in frame.to_dict("records")])

    def write(self, path: Path, provenance: Optional[Dict[str, Any]] = None) -> Path:
        return write_csv(path, self.to_frame(), provenance or {})

    @classmethod
    def read(cls, path: Path) -> "ContourTable":
        frame, _ = read_csv(path)
        if frame.empty:
            return cls([])
        return cls.from_frame(frame)


def _metadata(config: ExperimentConfig) -> str:
    engine = config.engine
    if engine.name == "ed":
        return f"M={engine.n_orbitals}"
    if engine.name == "gp":
        return f"nodes={engine.gp_nodes}"
    return f"max_quanta={engine.max_quanta}"


def _point_key(g: float, n_particles: int) -> str:
    return f"{float(g)!r}|{int(n_particles)}"


def _run_point(job: Tuple[str, str, float, int]) -> Dict[str, Any]:
    """Worker entry: (config json, cache root, g, N) -> contour row dict."""
    config_json, cache_root, g, n_particles = job
    config = ExperimentConfig.model_validate_json(config_json).for_point(g, n_particles)
    row = ContourRow(g=float(g), n_particles=int(n_particles), engine=config.engine.name, metadata=_metadata(config))
    try:
        result = run_experiment(config, ResultCache(Path(cache_root)))
        row.frequency, row.sigma = float(result.frequency), float(result.sigma)
    except Exception as e:
        row.status = "failed"
        row.error = f"{type(e).__name__}: {e}"
    return row.to_dict()


def estimate_runtime(config: ExperimentConfig, points: Optional[Sequence[Tuple[float, int]]] = None) -> float:
    """Crude wall-clock estimate (s) for the given points on the configured workers."""
    if points is None:
        points = [(g, n) for n in config.sweep.n_values for g in config.sweep.g_values]
    engine, run = config.engine, config.run
    samples = run.periods * run.samples_per_period
    total = 0.0
    for _, n in points:
        if engine.name == "analytic":
            cost = 1.0
        elif engine.name == "ed":
            dim = ed_dimension(n, engine.n_orbitals, engine.truncation)
            if dim <= 4000:
                cost = 2e-9 * dim ** 3 + 4e-9 * samples * dim ** 2
            else:
                cost = 3e-8 * samples * dim * engine.n_orbitals ** 2
        else:
            steps = run.periods * engine.gp_steps_per_period
            cost = 5.0 + 3e-8 * steps * engine.gp_nodes * math.log2(engine.gp_nodes)
        total += cost + 0.2
    workers = config.sweep.workers or os.cpu_count() or 1
    return total / max(1, min(workers, len(points)))


def sweep_directory(config: ExperimentConfig) -> Path:
    points = sorted((float(g), int(n)) for g in config.sweep.g_values for n in config.sweep.n_values)
    text = json.dumps({"config": config.content_hash(), "points": points}, sort_keys=True)
    sweep_id = hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
    return Path(config.output.directory) / "sweeps" / sweep_id


def sweep(config: ExperimentConfig, workers: Optional[int] = None) -> ContourTable:
    """Run every (g, N) point of the sweep grid on a bounded process pool.

    Finished points are persisted one by one into the sweep manifest; a rerun
    skips them. Failed points are recorded with their error.
    """
    check_consistency(config, require_sweep=True)
    directory = sweep_directory(config)
    manifest_path = directory / SWEEP_MANIFEST
    manifest = {"config_hash": config.content_hash(), "code_version": __version__, "points": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))

    points = [(float(g), int(n)) for n in sorted(set(config.sweep.n_values))
              for g in sorted(set(config.sweep.g_values))]
    todo = [p for p in points if _point_key(*p) not in manifest["points"]]
    estimate = estimate_runtime(config, todo)
    logger.info(
        f"[Sweep] {len(points)} points, {len(points) - len(todo)} already done; "
        f"estimated runtime {estimate:.0f}s"
    )

    cache_root = str(Path(config.output.directory))
    jobs = [(config.model_dump_json(), cache_root, g, n) for g, n in todo]
    workers = workers or config.sweep.workers or os.cpu_count() or 1
    workers = max(1, min(workers, len(jobs)))

    def record(row: Dict[str, Any]) -> None:
        manifest["points"][_point_key(row["g"], row["n_particles"])] = row
        write_json_atomic(manifest_path, manifest)
        if row["status"] != "ok":
            logger.warning(f"[Sweep] Point g={row['g']} N={row['n_particles']} failed: {row['error']}")
        else:
            logger.info(f"[Sweep] g={row['g']} N={row['n_particles']}: {row['frequency']:.5f}")

    if jobs:
        directory.mkdir(parents=True, exist_ok=True)
        if workers == 1:
            for job in jobs:
                record(_run_point(job))
        else:
            with Pool(workers) as pool:
                for row in pool.imap_unordered(_run_point, jobs):
                    record(row)

    table = ContourTable([ContourRow.from_dict(r) for r in manifest["points"].values()])
    for r in table.ok_rows():
        if not STUDIED_RANGE[0] < r.frequency < STUDIED_RANGE[1]:
            logger.warning(f"[Sweep] g={r.g} N={r.n_particles}: {r.frequency:.4f} outside the studied range")
    directory.mkdir(parents=True, exist_ok=True)
    table.write(directory / CONTOUR_FILE, config.provenance())
    logger.info(f"[Sweep] Contour table written to {directory / CONTOUR_FILE}")
    if config.sweep.overlay_levels:
        reference = mean_field_reference(config) if config.engine.name == "gp" else None
        overlay = gp_hyperbola_overlay(table, config.sweep.overlay_levels, reference)
        overlay.write(directory, config.provenance())
    return table


# --- overlay -----------------------------------------------------------------

@dataclass
class Overlay:
    """Constant-g(N-1) hyperbolas and the pointwise deviation from mean-field scaling."""
    curves: pd.DataFrame
    deviations: pd.DataFrame
    notes: List[str] = field(default_factory=list)

    def write(self, directory: Path, provenance: Optional[Dict[str, Any]] = None) -> Tuple[Path, Path]:
        directory = Path(directory)
        header = dict(provenance or {})
        if self.notes:
            header["notes"] = "; ".join(self.notes)
        return (write_csv(directory / "overlay_curves.csv", self.curves, header),
                write_csv(directory / "overlay_deviation.csv", self.deviations, header))


def _level_crossing(g: np.ndarray, f: np.ndarray, level: float) -> Optional[float]:
    diff = f - level
    for k in range(len(g)):
        if diff[k] == 0:
            return float(g[k])
        if k + 1 < len(g) and diff[k] * diff[k + 1] < 0:
            return float(g[k] + (g[k + 1] - g[k]) * diff[k] / (diff[k] - diff[k + 1]))
    return None


def mean_field_reference(config: ExperimentConfig) -> Callable[[float], float]:
    """Mean-field frequency at g(N-1) = lam, run as the point (g=lam, N=2) through the cache."""
    memo: Dict[float, float] = {}

    def reference(lam: float) -> float:
        if lam not in memo:
            memo[lam] = run_experiment(config.for_point(lam, 2)).frequency
        return memo[lam]

    return reference


def gp_hyperbola_overlay(
    table: ContourTable,
    levels: Iterable[float],
    reference: Optional[Callable[[float], float]] = None,
) -> Overlay:
    """Hyperbolas g(N-1) = c anchored at the largest N, plus deviation columns.

    A mean-field row is compared with the mean-field frequency at exactly its
    own g(N-1): `reference(lam)` when given, otherwise the largest-N row of the
    table at the same g(N-1). Other engines interpolate their anchor column in
    g(N-1) and leave rows outside that column as NaN with a note.
    """
    curve_cols = ["engine", "level", "lambda", "n_particles", "g"]
    dev_cols = ["engine", "g", "n_particles", "lambda", "frequency", "scaled_frequency", "deviation"]
    curves, deviations, notes = [], [], []
    rows = table.ok_rows()
    for engine in sorted({r.engine for r in rows}):
        mine = [r for r in rows if r.engine == engine]
        n_values = sorted({r.n_particles for r in mine})
        n_max = n_values[-1]
        anchor = sorted((r for r in mine if r.n_particles == n_max), key=lambda r: r.g)
        g_col = np.array([r.g for r in anchor])
        f_col = np.array([r.frequency for r in anchor])
        lam_col = g_col * (n_max - 1)

        for level in levels:
            g_star = _level_crossing(g_col, f_col, float(level))
            if g_star is None:
                notes.append(f"{engine}: level {level} outside the anchor column at N={n_max}, skipped")
                continue
            lam = g_star * (n_max - 1)
            for n in n_values:
                if n > 1:
                    curves.append([engine, float(level), lam, n, lam / (n - 1)])

        if engine == "gp":
            same_lambda: Dict[float, ContourRow] = {}
            for r in sorted(mine, key=lambda r: r.n_particles):
                same_lambda[r.gp_parameter] = r
            for r in mine:
                lam = r.gp_parameter
                scaled = reference(lam) if reference else same_lambda[lam].frequency
                deviations.append([engine, r.g, r.n_particles, lam, r.frequency, scaled, r.frequency - scaled])
            continue

        outside = 0
        for r in mine:
            lam = r.gp_parameter
            scaled = float("nan")
            if n_max > 1 and lam_col.size and lam_col[0] <= lam <= lam_col[-1]:
                scaled = float(np.interp(lam, lam_col, f_col))
            else:
                outside += 1
            deviations.append([engine, r.g, r.n_particles, lam, r.frequency, scaled, r.frequency - scaled])
        if outside:
            notes.append(f"{engine}: {outside} rows outside the anchor column at N={n_max}, deviation NaN")

    overlay = Overlay(pd.DataFrame(curves, columns=curve_cols), pd.DataFrame(deviations, columns=dev_cols), notes)
    for note in notes:
        logger.info(f"[Overlay] {note}")
    return overlay


# --- coupling normalization check ---------------------------------------------

def _limit_in_orbitals(n_orbitals: np.ndarray, values: np.ndarray) -> Tuple[float, float]:
    """Intercept a and rms misfit of values = a + b / sqrt(M)."""
    x = 1.0 / np.sqrt(n_orbitals.astype(float))
    slope, intercept = np.polyfit(x, values, 1)
    misfit = float(np.sqrt(np.mean((intercept + slope * x - values) ** 2)))
    return float(intercept), misfit


def validate_relative_coupling(
    couplings: Sequence[float] = (0.5, 2.0, 8.0),
    orbital_counts: Sequence[int] = (10, 14, 18, 26, 34),
) -> pd.DataFrame:
    """Two-body ED ground energy against 1/2 + E_rel(g / sqrt(2)).

    `alternative_difference` uses g_rel = g instead. The contact truncation error
    decays like M^-1/2, so each difference is extrapolated in M per coupling
    (`difference_limit`, `alternative_limit`) and `preferred` names the
    normalization whose limit is closer to zero.
    """
    if len(set(orbital_counts)) < 2:
        raise ValueError("the M extrapolation needs at least two orbital counts")
    rows = []
    for g in couplings:
        analytic = 0.5 + even_level_energy(g / math.sqrt(2.0), 0)
        alternative = 0.5 + even_level_energy(g, 0)
        quench = ExperimentConfig().quench_spec().with_(g=float(g)).pre_quench()
        group = []
        for m in sorted(set(orbital_counts)):
            basis = build_fock_basis(2, m)
            energy, _ = ground_state(build_hamiltonian(basis, quench), basis)
            group.append({
                "g": float(g),
                "n_orbitals": int(m),
                "ed_energy": energy,
                "analytic_energy": analytic,
                "difference": energy - analytic,
                "alternative_difference": energy - alternative,
            })
        m_col = np.array([r["n_orbitals"] for r in group])
        limit, misfit = _limit_in_orbitals(m_col, np.array([r["difference"] for r in group]))
        alt_limit, _ = _limit_in_orbitals(m_col, np.array([r["alternative_difference"] for r in group]))
        preferred = "g/sqrt2" if abs(limit) < abs(alt_limit) else "g"
        for r in group:
            r.update(difference_limit=limit, alternative_limit=alt_limit, fit_misfit=misfit, preferred=preferred)
        rows.extend(group)
        logger.info(
            f"[Run] Coupling check g={g}: extrapolated ED-analytic {limit:+.3e} "
            f"(g_rel=g: {alt_limit:+.3e}), prefers {preferred}"
        )
    return pd.DataFrame(rows)
