import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from src import spectral
from src.data_models import QuenchSpec
from src.errors import BoxTooSmallError, SolverConvergenceError, SpectralFitError
from src.meanfield_gp import (
    BOUNDARY_NORM,
    GPGrid,
    boundary_norm,
    default_grid,
    gp_energy,
    gp_evolve,
    gp_ground_state,
    gp_propagate,
    gp_quench_series,
    mf_breathing_frequency,
    thomas_fermi_chemical_potential,
    thomas_fermi_radius,
    thomas_fermi_x2,
)
from src.trap_model import time_grid

SMALL_GRID = GPGrid(12.0, 256)


@pytest.mark.parametrize("lam, omega", [(10.0, 1.0), (200.0, math.sqrt(0.9))])
def test_thomas_fermi_profile_is_normalized(lam, omega):
    mu = thomas_fermi_chemical_potential(lam, omega)
    radius = thomas_fermi_radius(lam, omega)
    x = np.linspace(-radius, radius, 20001)
    density = (mu - 0.5 * omega ** 2 * x ** 2) / lam
    assert trapezoid(density, x) == pytest.approx(1.0, rel=1e-6)
    assert thomas_fermi_x2(lam, omega) == pytest.approx(trapezoid(x ** 2 * density, x), rel=1e-6)


def test_grid_validation_and_defaults():
    with pytest.raises(ValueError):
        GPGrid(10.0, 101)
    with pytest.raises(ValueError):
        GPGrid(0.0, 128)
    assert default_grid(0.0).half_width == pytest.approx(12.0)
    assert default_grid(200.0).half_width == pytest.approx(3 * thomas_fermi_radius(200.0))
    grid = GPGrid(4.0, 16)
    assert grid.x[0] == -4.0
    assert grid.spacing == pytest.approx(0.5)


def test_noninteracting_ground_state():
    field = gp_ground_state(0.0, 1.0, SMALL_GRID)
    assert field.norm == pytest.approx(1.0, abs=1e-12)
    assert field.x2 == pytest.approx(0.5, abs=1e-7)
    assert field.energy() == pytest.approx(0.5, abs=1e-7)


def test_interacting_ground_state_approaches_thomas_fermi():
    lam = 50.0
    field = gp_ground_state(lam, 1.0, default_grid(lam, 1.0, 512))
    assert field.x2 == pytest.approx(thomas_fermi_x2(lam), rel=0.05)
    assert field.x2 > thomas_fermi_x2(lam)


def test_strong_coupling_ground_state_matches_thomas_fermi_width():
    lam = 100.0
    field = gp_ground_state(lam, 1.0, default_grid(lam, 1.0, 512))
    assert field.x2 == pytest.approx(thomas_fermi_x2(lam), rel=0.02)


def test_imaginary_time_energy_never_increases():
    field = gp_ground_state(5.0, 1.0, SMALL_GRID)
    history = np.array(field.energy_history)
    assert history.size > 2
    assert np.all(np.diff(history) <= 1e-10 * abs(history[-1]))
    assert history[-1] < history[0]


def test_ground_state_rejects_attractive_coupling():
    with pytest.raises(ValueError):
        gp_ground_state(-1.0)


def test_small_box_detected():
    with pytest.raises(BoxTooSmallError):
        gp_ground_state(0.0, 1.0, GPGrid(2.0, 64))


def test_box_check_ignores_a_uniform_noise_floor():
    grid = default_grid(0.0)
    psi = np.exp(-0.5 * grid.x ** 2) / math.pi ** 0.25
    # edge density 1e-8 of the peak, as left behind by wrapped split-step noise
    noisy = (psi + 1e-4 * psi.max()).astype(complex)
    assert abs(noisy[0]) ** 2 > 0.5e-8 * np.max(np.abs(noisy) ** 2)
    assert boundary_norm(noisy, grid) < 0.1 * BOUNDARY_NORM

    tight = GPGrid(2.0, 64)
    assert boundary_norm(np.exp(-0.5 * tight.x ** 2) / math.pi ** 0.25, tight) > 1e3 * BOUNDARY_NORM


def test_convergence_budget():
    with pytest.raises(SolverConvergenceError):
        gp_ground_state(0.0, 1.0, SMALL_GRID, max_time=0.05)


def test_real_time_evolution_is_reversible():
    field = gp_ground_state(5.0, 1.0, SMALL_GRID)
    forward = gp_propagate(field, math.sqrt(0.9), 3.0, 300)
    back = gp_propagate(forward, math.sqrt(0.9), -3.0, 300)
    assert np.allclose(back.psi, field.psi, atol=1e-10)


def test_evolution_conserves_norm_and_records_drifts():
    omega = math.sqrt(0.9)
    field = gp_ground_state(5.0, 1.0, SMALL_GRID)
    series = gp_evolve(field, 5.0, omega, time_grid(omega, 3, 32), steps_per_period=500)
    assert series.provenance["norm_drift"] < 1e-12
    assert series.provenance["energy_drift"] < 1e-4
    assert series.provenance["engine"] == "gp"
    assert series.samples[0] == pytest.approx(field.x2)


def test_ideal_gas_breathes_at_twice_the_trap_frequency():
    run = mf_breathing_frequency(QuenchSpec(g=0.0), SMALL_GRID, periods=20)
    assert run.estimate.frequency == pytest.approx(2.0, abs=1e-4)


def test_frequency_depends_only_on_gp_parameter():
    a = mf_breathing_frequency(QuenchSpec(g=1.0, n_particles=3), SMALL_GRID, periods=10)
    b = mf_breathing_frequency(QuenchSpec(g=2.0, n_particles=2), SMALL_GRID, periods=10)
    assert a.estimate.frequency == b.estimate.frequency
    assert np.array_equal(a.series.samples, b.series.samples)
    assert math.sqrt(3) < a.estimate.frequency < 2.0


def test_quench_series_provenance():
    series = gp_quench_series(QuenchSpec(g=0.5, n_particles=3), SMALL_GRID, periods=2, samples_per_period=32)
    assert series.provenance["lambda"] == pytest.approx(1.0)
    assert series.provenance["n_particles"] == 3
    assert series.count == 64


@pytest.mark.parametrize("lam", [0.0, 3.0])
def test_energy_of_a_gaussian(lam):
    omega = 1.3
    grid = GPGrid(10.0, 512)
    psi = (omega / math.pi) ** 0.25 * np.exp(-0.5 * omega * grid.x ** 2)
    expected = 0.5 * omega + lam * math.sqrt(omega / (2 * math.pi)) / 2
    assert gp_energy(psi.astype(complex), grid, lam, omega) == pytest.approx(expected, rel=1e-10)


def test_rejected_sine_fit_falls_back_to_the_spectral_band(monkeypatch):
    def reject(series, omega):
        raise SpectralFitError("two modes")

    monkeypatch.setattr(spectral, "sine_frequency", reject)
    run = mf_breathing_frequency(QuenchSpec(g=0.0), SMALL_GRID, periods=20)
    assert run.estimate.method == "lorentzian"
    assert run.estimate.frequency == pytest.approx(2.0, abs=1.0 / 20)


def test_sine_estimate_is_never_sharper_than_the_resolution():
    run = mf_breathing_frequency(QuenchSpec(g=0.0), SMALL_GRID, periods=20)
    assert run.estimate.method == "sine"
    assert run.estimate.sigma >= 1.0 / 20 * (1 - 1e-9)


@pytest.mark.slow
@pytest.mark.parametrize("lam", [0.0, 1.0, 5.0, 20.0, 50.0, 200.0])
def test_default_grid_holds_the_breathing_cloud(lam):
    quench = QuenchSpec(g=lam, n_particles=2)
    series = gp_quench_series(quench, periods=20)
    assert series.provenance["grid_half_width"] >= 12.0
    assert np.all(np.isfinite(series.samples))
