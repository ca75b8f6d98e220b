import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import windows

from src.data_models import PeakSet, TimeSeries
from src.errors import SpectralFitError
from src.spectral import (
    extract_peaks,
    find_peaks,
    fit_lorentzian,
    fit_sine,
    lowest_band_frequency,
    power_spectrum,
    sine_frequency,
    single_mode_frequency,
)


def test_spectrum_axis_and_resolution(make_series):
    series = make_series([1.3], [0.2], periods=50)
    spectrum = power_spectrum(series)
    assert spectrum.resolution == pytest.approx(2 * math.pi / series.duration)
    assert spectrum.n_fft == 4 * series.count
    assert spectrum.bin_width == pytest.approx(spectrum.resolution / 4)
    assert spectrum.omega[0] == 0.0
    assert abs(spectrum.omega[np.argmax(spectrum.magnitude)] - 1.3) < spectrum.resolution
    assert list(spectrum.to_frame().columns) == ["omega", "magnitude"]


@pytest.mark.parametrize("window", ["hann", None])
def test_parseval(make_series, window):
    series = make_series([0.7, 2.1], [1.0, 0.3], periods=20)
    spectrum = power_spectrum(series, window, zero_pad_factor=2)
    x = series.samples - series.samples.mean()
    if window == "hann":
        x = x * windows.hann(x.size, sym=False)
    assert spectrum.energy() == pytest.approx(np.sum(x ** 2) * series.dt, rel=1e-10)


def test_invalid_spectrum_options(make_series):
    series = make_series([1.0], [1.0], periods=10)
    with pytest.raises(ValueError):
        power_spectrum(series, window="blackman")
    with pytest.raises(ValueError):
        power_spectrum(series, zero_pad_factor=0)
    with pytest.raises(ValueError):
        find_peaks(power_spectrum(series), min_prominence=1.5)


def test_constant_series_has_no_peaks():
    series = TimeSeries(0.0, 0.1, np.full(256, 2.0))
    assert find_peaks(power_spectrum(series)) == []
    assert len(extract_peaks(series)) == 0


def test_candidates_strongest_first(make_series):
    series = make_series([1.0, 2.0], [0.3, 1.0], periods=100)
    spectrum = power_spectrum(series)
    indices = find_peaks(spectrum)
    assert len(indices) == 2
    assert spectrum.omega[indices[0]] == pytest.approx(2.0, abs=spectrum.resolution)
    assert spectrum.omega[indices[1]] == pytest.approx(1.0, abs=spectrum.resolution)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.2, 2.8))
def test_lorentzian_center_within_resolution(frequency):
    dt = 2 * math.pi / 32
    t = dt * np.arange(200 * 32)
    series = TimeSeries(0.0, dt, 1.0 + 0.1 * np.cos(frequency * t))
    peaks = extract_peaks(series)
    assert len(peaks) == 1
    peak = peaks.peaks[0]
    assert abs(peak.center - frequency) < peaks.resolution
    assert peak.sigma >= peaks.resolution
    assert not peak.flagged


def test_lorentzian_window_bins_bound(make_series):
    spectrum = power_spectrum(make_series([1.0], [1.0], periods=20))
    with pytest.raises(ValueError):
        fit_lorentzian(spectrum, int(np.argmax(spectrum.magnitude)), window_bins=3)


def test_close_lines_resolved(make_series):
    series = make_series([1.9, 2.0], [1.0, 0.6], periods=200, omega=1.0)
    peaks = extract_peaks(series)
    assert peaks.centers == pytest.approx([1.9, 2.0], abs=peaks.resolution)
    assert [p.center for p in peaks.strongest(1)] == pytest.approx([1.9], abs=peaks.resolution)


def test_lowest_band_picks_lower_dominant_line(make_series):
    omega = math.sqrt(0.9)
    series = make_series([1.9 * omega, 2.0 * omega, 4.0 * omega], [0.4, 1.0, 0.5], periods=200, omega=omega)
    estimate = lowest_band_frequency(extract_peaks(series), omega)
    assert estimate.frequency == pytest.approx(1.9, abs=0.005)
    assert estimate.method == "lorentzian"
    with pytest.raises(SpectralFitError):
        lowest_band_frequency(PeakSet([], 0.01), omega)


def test_sine_fit_single_mode(make_series):
    omega = math.sqrt(0.9)
    series = make_series([1.87 * omega], [0.05], periods=20, omega=omega, offset=0.9)
    fit = fit_sine(series)
    assert fit.frequency == pytest.approx(1.87 * omega, rel=1e-8)
    assert fit.amplitude == pytest.approx(0.05, rel=1e-6)
    assert fit.offset == pytest.approx(0.9, rel=1e-8)
    assert fit.residual < 1e-6
    estimate = sine_frequency(series, omega)
    assert estimate.frequency == pytest.approx(1.87, rel=1e-8)
    assert estimate.method == "sine"


def test_sine_fit_rejects_beating_signal(make_series):
    series = make_series([1.85, 2.0], [1.0, 0.8], periods=20)
    with pytest.raises(SpectralFitError, match="spectral peak pipeline"):
        fit_sine(series)


def test_sine_fit_rejects_flat_signal():
    series = TimeSeries(0.0, 0.1, np.zeros(128))
    with pytest.raises(SpectralFitError):
        fit_sine(series)


@settings(max_examples=10, deadline=None)
@given(st.floats(0.1, 10.0), st.floats(-10.0, 10.0))
def test_offset_and_scale_leave_frequencies_unchanged(scale, offset):
    dt = 2.0 * math.pi / 32
    base = TimeSeries(0.0, dt, 1.0 + 0.1 * np.cos(1.93 * dt * np.arange(50 * 32)))
    moved = base.with_samples(scale * base.samples + offset)
    assert extract_peaks(moved).centers == pytest.approx(extract_peaks(base).centers, rel=1e-6)
    assert fit_sine(moved).frequency == pytest.approx(fit_sine(base).frequency, rel=1e-6)


def test_zero_padding_does_not_move_the_peak(make_series):
    series = make_series([1.93], [0.1], periods=200)
    centers = [extract_peaks(series, zero_pad_factor=pad).strongest(1)[0].center for pad in (2, 4, 8)]
    resolution = power_spectrum(series).resolution
    assert max(centers) - min(centers) < 0.1 * resolution


def test_lorentzian_center_is_sub_bin_accurate(make_series):
    series = make_series([1.93], [0.1], periods=200)
    spectrum = power_spectrum(series)
    peaks = extract_peaks(series)
    assert abs(peaks.strongest(1)[0].center - 1.93) < 0.1 * spectrum.bin_width


def test_sine_and_lorentzian_agree_within_resolution(make_series):
    omega = math.sqrt(0.9)
    series = make_series([1.93 * omega], [0.05], periods=20, omega=omega)
    sine = sine_frequency(series, omega)
    lorentzian = lowest_band_frequency(extract_peaks(series), omega)
    assert sine.frequency == pytest.approx(lorentzian.frequency, abs=1.0 / 20)
    assert sine.sigma >= 1.0 / 20 - 1e-12


def test_single_mode_estimate_prefers_the_sine_fit(make_series):
    single = single_mode_frequency(make_series([1.93], [0.1], periods=40), 1.0)
    assert single.method == "sine"
    assert single.frequency == pytest.approx(1.93, abs=1e-4)
    beating = single_mode_frequency(make_series([1.85, 2.0], [1.0, 0.8], periods=40), 1.0)
    assert beating.method == "lorentzian"
    assert beating.frequency == pytest.approx(1.85, abs=1.0 / 40)
