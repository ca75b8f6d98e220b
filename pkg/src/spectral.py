"""Frequency extraction from <X^2>(t).

Power spectrum with optional Hann window and zero padding, prominence-based
peak candidates, local Lorentzian fits and a single-mode sine fit. Angular
frequencies are used throughout; callers divide by Omega_post for reporting.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pandas as pd
from scipy import optimize, signal

try:
    from .data_models import FrequencyEstimate, Peak, PeakSet, TimeSeries
    from .errors import SpectralFitError
except ImportError:
    from data_models import FrequencyEstimate, Peak, PeakSet, TimeSeries
    from errors import SpectralFitError

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = "hann"
DEFAULT_ZERO_PAD = 4
DEFAULT_MIN_PROMINENCE = 0.05
DEFAULT_WINDOW_BINS = 7

# Normalized rms misfit above which a Lorentzian fit is flagged
LORENTZIAN_RESIDUAL_THRESHOLD = 0.25

# Normalized rms misfit above which a sine fit is rejected
SINE_RESIDUAL_THRESHOLD = 0.05

# Spectra whose maximum sits below this fraction of the signal scale carry no peaks
SPECTRAL_FLOOR = 1e-9

# Band searched for the lowest breathing line, in units of Omega_post
BREATHING_BAND = (1.5, 2.5)


@dataclass
class Spectrum:
    """One-sided magnitude spectrum |dt * FFT| on an angular-frequency axis.

    Attributes:
        omega: angular frequencies of the (padded) bins
        magnitude: spectral magnitude per bin
        resolution: 2 pi / (count * dt) of the unpadded series
        n_fft: transform length after padding
        dt: sampling interval
        scale: rms of the raw samples times the duration, for the noise floor
    """
    omega: np.ndarray
    magnitude: np.ndarray
    resolution: float
    n_fft: int
    dt: float
    window: str = DEFAULT_WINDOW
    zero_pad_factor: int = DEFAULT_ZERO_PAD
    scale: float = 1.0

    @property
    def bin_width(self) -> float:
        return 2.0 * math.pi / (self.n_fft * self.dt)

    def energy(self) -> float:
        """sum |x|^2 dt of the detrended (windowed) series, from the spectrum alone."""
        weights = np.full(self.magnitude.size, 2.0)
        weights[0] = 1.0
        if self.n_fft % 2 == 0:
            weights[-1] = 1.0
        return float(self.bin_width / (2.0 * math.pi) * np.sum(weights * self.magnitude ** 2))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"omega": self.omega, "magnitude": self.magnitude})


def power_spectrum(
    series: TimeSeries,
    window: Optional[str] = DEFAULT_WINDOW,
    zero_pad_factor: int = DEFAULT_ZERO_PAD,
) -> Spectrum:
    """Mean-detrended one-sided magnitude spectrum."""
    if zero_pad_factor < 1:
        raise ValueError(f"zero_pad_factor must be at least 1, got {zero_pad_factor}")
    x = series.samples - series.samples.mean()
    n = x.size
    window = (window or "none").lower()
    if window == "hann":
        x = x * signal.windows.hann(n, sym=False)
    elif window != "none":
        raise ValueError(f"unknown window {window!r}, expected 'hann' or 'none'")
    n_fft = n * int(zero_pad_factor)
    magnitude = np.abs(np.fft.rfft(x, n=n_fft)) * series.dt
    omega = 2.0 * math.pi * np.fft.rfftfreq(n_fft, series.dt)
    scale = float(np.sqrt(np.mean(series.samples ** 2)) * series.duration)
    return Spectrum(
        omega=omega,
        magnitude=magnitude,
        resolution=2.0 * math.pi / (n * series.dt),
        n_fft=n_fft,
        dt=series.dt,
        window=window,
        zero_pad_factor=int(zero_pad_factor),
        scale=scale,
    )


def find_peaks(spectrum: Spectrum, min_prominence: float = DEFAULT_MIN_PROMINENCE) -> List[int]:
    """Bin indices of local maxima with prominence above a fraction of the maximum, strongest first."""
    if not 0 < min_prominence < 1:
        raise ValueError(f"min_prominence must lie in (0, 1), got {min_prominence}")
    mag = spectrum.magnitude
    top = float(mag.max()) if mag.size else 0.0
    if top <= SPECTRAL_FLOOR * max(spectrum.scale, 1e-300):
        return []
    indices, _ = signal.find_peaks(mag, prominence=min_prominence * top)
    indices = [int(i) for i in indices if i > 0]
    return sorted(indices, key=lambda i: mag[i], reverse=True)


def lorentzian(omega, center, width, amplitude):
    return amplitude / (1.0 + ((omega - center) / width) ** 2)


def fit_lorentzian(spectrum: Spectrum, index: int, window_bins: int = DEFAULT_WINDOW_BINS) -> Peak:
    """Least-squares Lorentzian on the bins index +- window_bins.

    A fit whose normalized residual exceeds LORENTZIAN_RESIDUAL_THRESHOLD, or
    that fails outright, comes back flagged with the bin center.
    """
    if window_bins < 5:
        raise ValueError(f"window_bins must be at least 5, got {window_bins}")
    lo = max(index - window_bins, 0)
    hi = min(index + window_bins + 1, spectrum.magnitude.size)
    x = spectrum.omega[lo:hi]
    y = spectrum.magnitude[lo:hi]
    peak_height = float(spectrum.magnitude[index])
    bin_width = spectrum.bin_width
    p0 = [spectrum.omega[index], 2.0 * bin_width, peak_height]
    bounds = ([x[0], 1e-6 * bin_width, 0.0], [x[-1], np.inf, np.inf])
    try:
        popt, pcov = optimize.curve_fit(lorentzian, x, y, p0=p0, bounds=bounds, maxfev=5000)
    except (RuntimeError, ValueError) as exc:
        logger.warning(f"[Spectral] Lorentzian fit failed near omega={p0[0]:.5f}: {exc}")
        return Peak(center=float(p0[0]), width=float(p0[1]), amplitude=peak_height,
                    residual=math.inf, sigma=max(bin_width, spectrum.resolution), flagged=True)

    center, width, amplitude = (float(v) for v in popt)
    residual = float(np.sqrt(np.mean((lorentzian(x, *popt) - y) ** 2)) / max(peak_height, 1e-300))
    fit_sigma = float(np.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else math.inf
    flagged = residual > LORENTZIAN_RESIDUAL_THRESHOLD
    if flagged:
        logger.warning(
            f"[Spectral] Lorentzian residual {residual:.3f} above {LORENTZIAN_RESIDUAL_THRESHOLD} "
            f"at omega={center:.5f}"
        )
    return Peak(
        center=center,
        width=width,
        amplitude=amplitude,
        residual=residual,
        sigma=max(fit_sigma, spectrum.resolution),
        flagged=flagged,
    )


def extract_peaks(
    series: TimeSeries,
    window: Optional[str] = DEFAULT_WINDOW,
    zero_pad_factor: int = DEFAULT_ZERO_PAD,
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    window_bins: int = DEFAULT_WINDOW_BINS,
) -> PeakSet:
    """Spectrum -> candidates -> Lorentzian fits, sorted by center."""
    spectrum = power_spectrum(series, window, zero_pad_factor)
    peaks = [fit_lorentzian(spectrum, i, window_bins) for i in find_peaks(spectrum, min_prominence)]
    peaks.sort(key=lambda p: p.center)
    logger.debug(f"[Spectral] {len(peaks)} peaks, resolution {spectrum.resolution:.5f}")
    return PeakSet(peaks, spectrum.resolution)


def lowest_band_frequency(peaks: PeakSet, omega: float) -> FrequencyEstimate:
    """Lower of the two dominant peaks in the lowest breathing band, in units of omega.

    Raises:
        SpectralFitError: no peak in the band
    """
    band = peaks.in_range(BREATHING_BAND[0] * omega, BREATHING_BAND[1] * omega)
    if len(band) == 0:
        raise SpectralFitError(f"no spectral peak between {BREATHING_BAND[0]} and {BREATHING_BAND[1]} Omega")
    chosen = min(band.strongest(2), key=lambda p: p.center)
    return FrequencyEstimate(chosen.center / omega, chosen.sigma / omega, method="lorentzian")


@dataclass(frozen=True)
class SineFit:
    """offset + amplitude * cos(frequency * (t - t0) + phase)"""
    frequency: float
    amplitude: float
    phase: float
    offset: float
    residual: float
    sigma: float
    resolution: float


def _sine(t, frequency, amplitude, phase, offset):
    return offset + amplitude * np.cos(frequency * t + phase)


def fit_sine(series: TimeSeries, residual_threshold: float = SINE_RESIDUAL_THRESHOLD) -> SineFit:
    """Nonlinear least-squares sine seeded from the spectrum's maximum bin.

    Raises:
        SpectralFitError: residual above threshold, i.e. more than one mode
    """
    spectrum = power_spectrum(series, window="hann", zero_pad_factor=DEFAULT_ZERO_PAD)
    mag = spectrum.magnitude
    k = int(np.argmax(mag[1:]) + 1)
    seed = float(spectrum.omega[k])
    if 0 < k < mag.size - 1:
        # parabolic interpolation of the log-magnitude around the maximum
        a, b, c = np.log(mag[k - 1: k + 2] + 1e-300)
        denom = a - 2 * b + c
        if denom < 0:
            seed += 0.5 * (a - c) / denom * spectrum.bin_width

    t = series.times - series.t0
    y = series.samples
    design = np.column_stack([np.cos(seed * t), np.sin(seed * t), np.ones_like(t)])
    (ca, sa, offset0), *_ = np.linalg.lstsq(design, y, rcond=None)
    amp0 = math.hypot(ca, sa)
    phase0 = math.atan2(-sa, ca)
    if amp0 == 0:
        raise SpectralFitError("series has no oscillating component")
    try:
        popt, pcov = optimize.curve_fit(_sine, t, y, p0=[seed, amp0, phase0, offset0], maxfev=20000)
    except RuntimeError as exc:
        raise SpectralFitError(f"sine fit did not converge: {exc}; use the spectral peak pipeline") from exc

    frequency, amplitude, phase, offset = (float(v) for v in popt)
    if amplitude < 0:
        amplitude, phase = -amplitude, phase + math.pi
    phase = (phase + math.pi) % (2 * math.pi) - math.pi
    residual = float(np.sqrt(np.mean((_sine(t, *popt) - y) ** 2)) / (amplitude / math.sqrt(2.0)))
    if residual > residual_threshold:
        raise SpectralFitError(
            f"sine residual {residual:.3f} above {residual_threshold}; "
            "signal has more than one mode, use the spectral peak pipeline"
        )
    sigma = float(np.sqrt(pcov[0, 0])) if np.isfinite(pcov[0, 0]) else math.inf
    return SineFit(frequency, amplitude, phase, offset, residual, sigma, spectrum.resolution)


def sine_frequency(series: TimeSeries, omega: float) -> FrequencyEstimate:
    """Sine-fit frequency in units of omega; sigma is max(fit uncertainty, resolution)."""
    fit = fit_sine(series)
    return FrequencyEstimate(fit.frequency / omega, max(fit.sigma, fit.resolution) / omega, method="sine")


def single_mode_frequency(
    series: TimeSeries,
    omega: float,
    peaks: Optional[PeakSet] = None,
    window: Optional[str] = DEFAULT_WINDOW,
    zero_pad_factor: int = DEFAULT_ZERO_PAD,
    min_prominence: float = DEFAULT_MIN_PROMINENCE,
    window_bins: int = DEFAULT_WINDOW_BINS,
) -> FrequencyEstimate:
    """Sine fit for a single dominant mode, the lowest spectral band when it is rejected.

    `peaks` skips recomputing the peak set when the caller already has it.

    Raises:
        SpectralFitError: sine rejected and no peak in the breathing band
    """
    try:
        return sine_frequency(series, omega)
    except SpectralFitError as e:
        logger.warning(f"[Spectral] {e}; falling back to the lowest spectral band")
    if peaks is None:
        peaks = extract_peaks(series, window, zero_pad_factor, min_prominence, window_bins)
    return lowest_band_frequency(peaks, omega)
