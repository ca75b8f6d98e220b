import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.busch_analytic import (
    band_spectrum,
    beating_minimum,
    beating_period,
    breathing_signal_analytic,
    breathing_terms,
    busch_relation,
    cm_overlaps,
    delta_shift,
    even_level_energy,
    large_coupling_gap,
    max_band_separation,
    rel_eigensolve_grid,
    rel_spectrum,
    relative_breathing_frequency,
    validate_busch_relation,
)
from src.data_models import QuenchSpec
from src.errors import RelationValidationError
from src.spectral import extract_peaks
from src.trap_model import time_grid


def test_relation_vanishes_at_unperturbed_levels():
    assert busch_relation(0.5) == pytest.approx(0.0, abs=1e-14)
    assert busch_relation(2.5) == pytest.approx(0.0, abs=1e-14)


@given(st.floats(1e-3, 1e3), st.integers(0, 8))
def test_level_solves_relation_inside_bracket(g, n):
    e = even_level_energy(g, n)
    assert 2 * n + 0.5 < e < 2 * n + 1.5
    assert busch_relation(e) == pytest.approx(g, rel=1e-8)


@given(st.floats(0.01, 50), st.floats(0.01, 50), st.integers(0, 5))
def test_levels_increase_with_coupling(g1, g2, n):
    lo, hi = sorted((g1, g2))
    assert even_level_energy(lo, n) <= even_level_energy(hi, n)


def test_limits():
    assert even_level_energy(0.0, 3) == 6.5
    assert even_level_energy(math.inf, 3) == 7.5
    with pytest.raises(ValueError):
        even_level_energy(-1.0, 0)
    with pytest.raises(ValueError):
        even_level_energy(1.0, -1)


def test_weak_coupling_first_order_shift():
    g = 1e-4
    assert even_level_energy(g, 0) - 0.5 == pytest.approx(g / math.sqrt(math.pi), rel=1e-3)


@pytest.mark.parametrize("n", [0, 1, 4])
def test_strong_coupling_gap(n):
    g = 1e4
    gap = 2 * n + 1.5 - even_level_energy(g, n)
    assert gap == pytest.approx(large_coupling_gap(g, n), rel=0.02)


def test_rel_spectrum_levels_and_shifts():
    spectrum = rel_spectrum(2.0, 1.0, 4)
    assert spectrum.levels.shape == (4,)
    assert np.all(np.diff(spectrum.levels) > 0)
    assert np.allclose(spectrum.levels, 2 * np.arange(4) + 0.5 + spectrum.shifts)
    assert spectrum.levels[0] == pytest.approx(even_level_energy(2.0 / math.sqrt(2), 0))
    frame = spectrum.to_frame()
    assert list(frame.columns) == ["level_index", "g", "energy"]


def test_rel_spectrum_scales_with_trap():
    omega = 0.5
    spectrum = rel_spectrum(1.0, omega, 2)
    coupling = 1.0 / math.sqrt(2) / math.sqrt(omega)
    assert spectrum.levels[0] == pytest.approx(omega * even_level_energy(coupling, 0))


def test_delta_shift_sign_and_validation():
    q = QuenchSpec(g=2.0)
    assert delta_shift(1, 0, q) > 0
    assert delta_shift(1, 0, q.with_(g=0.0)) == 0.0
    with pytest.raises(ValueError):
        delta_shift(0, 1, q)


def test_band_spectrum_structure():
    q = QuenchSpec(g=0.0)
    bands = band_spectrum(q, 6)
    assert len(bands.entries) == 1 + 3 * 4 // 2
    assert len(bands.lines("cm")) == 1
    assert bands.lines("cm")[0].frequency == 2.0
    assert np.allclose(sorted(bands.frequencies), sorted([2, 2, 4, 6, 2, 4, 2]))
    with pytest.raises(ValueError):
        band_spectrum(q, 5)


def test_band_spectrum_relative_lines_below_integers():
    bands = band_spectrum(QuenchSpec(g=1.5), 8)
    assert np.all(np.diff(bands.frequencies) >= 0)
    for line in bands.lines("relative"):
        assert line.frequency < 2 * (line.i - line.j)
        assert line.quanta == (2 * line.i, 2 * line.j)
    assert list(bands.to_frame().columns) == ["kind", "i", "j", "frequency_over_omega"]


def test_relative_frequency_endpoints_and_minimum():
    q = QuenchSpec()
    assert relative_breathing_frequency(q.with_(g=0.0)) == pytest.approx(2.0)
    assert abs(relative_breathing_frequency(q.with_(g=1e3)) - 2.0) < 0.01
    g_star, f_min = beating_minimum(q)
    assert g_star == pytest.approx(2.0, abs=0.5)
    assert math.sqrt(3) < f_min < 2.0


def test_band_separation_bound():
    _, fraction = max_band_separation(QuenchSpec())
    assert fraction == pytest.approx(0.075, abs=0.01)


def test_beating_period():
    q = QuenchSpec(g=2.0)
    period = beating_period(q, 100.0)
    assert period == pytest.approx(2.0 / (100.0 * delta_shift(1, 0, q) / 2.0))
    assert beating_period(q.with_(g=0.0), 100.0) == math.inf


def test_grid_eigensolver_matches_relation():
    grid = rel_eigensolve_grid(1.0, 1.0, n_levels=3, spacing=0.005)
    exact = [even_level_energy(1.0, j) for j in range(3)]
    assert grid.energies == pytest.approx(exact, abs=1e-3)
    assert grid.max_error < 1e-3
    norms = grid.states ** 2 @ grid.weights
    assert norms == pytest.approx(np.ones(3), abs=1e-8)
    assert np.allclose(grid.states, grid.states[:, ::-1])


@pytest.mark.parametrize("g_rel", [0.0, 2.0, 20.0])
@pytest.mark.parametrize("omega", [1.0, 0.9])
def test_contact_leaves_odd_grid_levels_unshifted(g_rel, omega):
    grid = rel_eigensolve_grid(g_rel, omega, n_levels=3)
    assert grid.odd_energies == pytest.approx([omega * (2 * n + 1.5) for n in range(3)], abs=1e-4)


def test_grid_eigensolver_rejects_small_box():
    with pytest.raises(ValueError):
        rel_eigensolve_grid(1.0, 1.0, n_levels=2, extent=5.0)


def test_validation_passes_and_reports_failures():
    rows = validate_busch_relation()
    assert [r[0] for r in rows] == [0.5, 2.0, 8.0]
    with pytest.raises(RelationValidationError):
        validate_busch_relation(couplings=(2.0,), tolerance=1e-14)


def test_cm_overlaps():
    assert cm_overlaps(1.0, 1.0, 4) == pytest.approx([1, 0, 0, 0])
    overlaps = cm_overlaps(1.0, math.sqrt(0.3), 30)
    assert np.sum(overlaps ** 2) == pytest.approx(1.0, abs=1e-10)
    kappa = (1 - math.sqrt(0.3)) / (1 + math.sqrt(0.3))
    assert overlaps[0] == pytest.approx((1 - kappa ** 2) ** 0.25)


def test_null_quench_is_static():
    q = QuenchSpec(omega_post=1.0, g=0.0)
    terms = breathing_terms(q, max_quanta=6, spacing=0.02)
    assert terms.const == pytest.approx(1.0, abs=1e-3)
    assert np.max(np.abs(terms.amplitudes)) < 1e-3


def test_free_particles_closed_form():
    omega = math.sqrt(0.9)
    q = QuenchSpec(omega_post=omega, g=0.0)
    t = time_grid(omega, 4, 16)
    series = breathing_signal_analytic(q, 8, t)
    expected = np.cos(omega * t) ** 2 + np.sin(omega * t) ** 2 / omega ** 2
    assert np.allclose(series.samples, expected, atol=1e-3)
    assert series.provenance["engine"] == "analytic"


def test_terms_require_two_particles():
    with pytest.raises(ValueError):
        breathing_terms(QuenchSpec(n_particles=3))
    with pytest.raises(ValueError):
        breathing_terms(QuenchSpec(), max_quanta=3)


def test_truncation_note_for_strong_quench():
    terms = breathing_terms(QuenchSpec(omega_post=math.sqrt(0.3), g=0.4), max_quanta=2, spacing=0.02)
    assert terms.discarded_weight > 1e-4
    assert terms.notes


def test_sidebands_of_strong_quench():
    omega = math.sqrt(0.3)
    q = QuenchSpec(omega_post=omega, g=0.4)
    series = breathing_signal_analytic(q, 20, time_grid(omega, 400, 32))
    peaks = extract_peaks(series, min_prominence=0.02)
    centers = peaks.centers / omega
    for expected in (1.916, 1.975, 2.000):
        assert np.min(np.abs(centers - expected)) < 0.01
