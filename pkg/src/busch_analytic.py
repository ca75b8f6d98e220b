"""Analytic two-body core.

Relative-motion levels of two contact-interacting particles in a harmonic trap,
their interaction shifts, the full breathing band spectrum and the exact
two-body <X^2>(t) after a trap quench.

Coordinates are R = (x1 + x2)/sqrt(2), r = (x1 - x2)/sqrt(2), so the lab
coupling g enters the relative Hamiltonian as g/sqrt(2) * delta(r).
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize, special

try:
    from .data_models import BandLine, BandSpectrum, QuenchSpec, RelSpectrum, TimeSeries
    from .errors import RelationValidationError, RootBracketError
    from .trap_model import uniform_spacing, x2_matrix_element
except ImportError:
    from data_models import BandLine, BandSpectrum, QuenchSpec, RelSpectrum, TimeSeries
    from errors import RelationValidationError, RootBracketError
    from trap_model import uniform_spacing, x2_matrix_element

logger = logging.getLogger(__name__)

# Distance kept from the bracket endpoints, where the relation has a zero and a pole
BRACKET_MARGIN = 1e-12

# Discarded spectral weight above which the analytic signal asks for more quanta
DISCARDED_WEIGHT_WARNING = 1e-4

# Couplings used to check the relation against the grid eigensolver
VALIDATION_COUPLINGS = (0.5, 2.0, 8.0)


def busch_relation(energy):
    """Coupling that makes `energy` an even level of -1/2 d^2 + 1/2 y^2 + g delta(y).

    g(E) = -2 Gamma(3/4 - E/2) / Gamma(1/4 - E/2); increasing from 0 to +inf on
    every bracket (2n + 1/2, 2n + 3/2).
    """
    e = np.asarray(energy, dtype=float)
    return -2.0 * special.gamma(0.75 - 0.5 * e) * special.rgamma(0.25 - 0.5 * e)


def _busch_derivative(energy: float) -> float:
    return busch_relation(energy) * 0.5 * (
        special.digamma(0.25 - 0.5 * energy) - special.digamma(0.75 - 0.5 * energy)
    )


def even_level_energy(g: float, n: int) -> float:
    """n-th even relative level (unit-frequency oscillator units) at coupling g.

    Bisection on (2n + 1/2, 2n + 3/2) followed by a Newton polish.

    Raises:
        RootBracketError: the relation does not change sign on the bracket
    """
    if n < 0:
        raise ValueError(f"level index must be non-negative, got {n}")
    if g < 0 or math.isnan(g):
        raise ValueError(f"coupling must be non-negative, got {g}")
    lower = 2 * n + 0.5
    upper = 2 * n + 1.5
    if g == 0:
        return lower
    if math.isinf(g):
        return upper

    lo = lower + BRACKET_MARGIN
    hi = upper - BRACKET_MARGIN
    g_lo = float(busch_relation(lo))
    g_hi = float(busch_relation(hi))
    if g <= g_lo:
        # root closer to the unperturbed level than the margin
        return lower + BRACKET_MARGIN * g / g_lo
    if not (g_hi > g and np.isfinite(g_lo)):
        raise RootBracketError(
            f"relation not bracketed for g={g}, n={n}: g(lo)={g_lo:.3e}, g(hi)={g_hi:.3e}"
        )

    def residual(e: float) -> float:
        return float(busch_relation(e)) - g

    guess = optimize.bisect(residual, lo, hi, xtol=1e-10, maxiter=200)
    try:
        root = optimize.newton(residual, guess, fprime=_busch_derivative, tol=1e-15, maxiter=30)
    except (RuntimeError, OverflowError):
        root = guess
    if not lo <= root <= hi or abs(residual(root)) > abs(residual(guess)):
        root = optimize.brentq(residual, lo, hi, xtol=1e-15, maxiter=500)
    return float(root)


def large_coupling_gap(g: float, n: int) -> float:
    """Leading large-g distance of level n below 2n + 3/2: 4 Gamma(n + 3/2) / (n! pi g)."""
    return 4.0 * math.exp(math.lgamma(n + 1.5) - math.lgamma(n + 1)) / (math.pi * g)


@lru_cache(maxsize=65536)
def _unitfree_shift(coupling: float, n: int) -> float:
    return even_level_energy(coupling, n) - (2 * n + 0.5)


def _unitfree_coupling(g_rel: float, omega: float) -> float:
    # r -> y / sqrt(omega) maps g_rel delta(r) onto omega * (g_rel / sqrt(omega)) delta(y)
    return g_rel / math.sqrt(omega)


def rel_spectrum(g_lab: float, omega: float, n_levels: int) -> RelSpectrum:
    """Even relative-motion levels E_{2j}(g) and shifts for trap frequency omega."""
    ensure_relation_validated()
    coupling = _unitfree_coupling(g_lab / math.sqrt(2.0), omega)
    shifts = np.array([omega * _unitfree_shift(coupling, j) for j in range(n_levels)])
    levels = omega * (2 * np.arange(n_levels) + 0.5) + shifts
    return RelSpectrum(g_lab=g_lab, omega=omega, levels=levels, shifts=shifts)


def delta_shift(i: int, j: int, quench: QuenchSpec) -> float:
    """Delta_{2i,2j}(g) = [eps_{2j} - eps_{2i}] / Omega with the post-quench trap."""
    if not i > j >= 0:
        raise ValueError(f"delta_shift needs i > j >= 0, got i={i}, j={j}")
    ensure_relation_validated()
    coupling = _unitfree_coupling(quench.g_rel, quench.omega_post)
    return _unitfree_shift(coupling, j) - _unitfree_shift(coupling, i)


def band_spectrum(quench: QuenchSpec, max_quanta: int) -> BandSpectrum:
    """CM line at 2 plus every relative line (2i - 2j) - Delta_{2i,2j}, in units of Omega_post."""
    if max_quanta < 2 or max_quanta % 2:
        raise ValueError(f"max_quanta must be even and at least 2, got {max_quanta}")
    top = max_quanta // 2
    entries = [BandLine(frequency=2.0, kind="cm", i=1, j=0)]
    for i in range(1, top + 1):
        for j in range(i):
            freq = 2.0 * (i - j) - delta_shift(i, j, quench)
            entries.append(BandLine(frequency=freq, kind="relative", i=i, j=j))
    entries.sort(key=lambda e: (e.frequency, e.kind, e.i, e.j))
    return BandSpectrum(entries=entries, g=quench.g, omega=quench.omega_post, max_quanta=max_quanta)


def relative_breathing_frequency(quench: QuenchSpec) -> float:
    """Lowest relative breathing line 2 - Delta_{2,0}(g), in units of Omega_post."""
    return 2.0 - delta_shift(1, 0, quench)


def beating_minimum(quench: QuenchSpec, g_bounds: Tuple[float, float] = (0.05, 20.0)) -> Tuple[float, float]:
    """(g, frequency) at the minimum of the relative breathing frequency over g."""
    result = optimize.minimize_scalar(
        lambda g: relative_breathing_frequency(quench.with_(g=float(g))),
        bounds=g_bounds,
        method="bounded",
        options={"xatol": 1e-6},
    )
    return float(result.x), float(result.fun)


def max_band_separation(quench: QuenchSpec, g_bounds: Tuple[float, float] = (0.05, 20.0)) -> Tuple[float, float]:
    """(g, fraction) of the largest CM/relative splitting as a fraction of 2 Omega."""
    g_star, freq = beating_minimum(quench, g_bounds)
    return g_star, (2.0 - freq) / 2.0


def beating_period(quench: QuenchSpec, breathing_frequency_hz: float) -> float:
    """Lab duration (s) of one beat cycle for a breathing mode at `breathing_frequency_hz`.

    The beat envelope oscillates with half the separation of the CM line and
    the lowest relative line.
    """
    separation_hz = breathing_frequency_hz * delta_shift(1, 0, quench) / 2.0
    if separation_hz == 0:
        return math.inf
    return 2.0 / separation_hz


# --- grid eigensolver -------------------------------------------------------

@dataclass
class RelEigenGrid:
    """Even-parity eigenpairs of the discretized relative Hamiltonian.

    Attributes:
        r: grid nodes, symmetric with a node at r = 0
        spacing: grid spacing h
        g_rel: contact coupling in the relative Hamiltonian
        omega: relative trap frequency
        energies: Richardson-extrapolated even energies (h, h/2)
        grid_energies: raw energies on this grid
        states: eigenfunctions, shape (n_levels, len(r)), unit norm under the trapezoidal rule
        max_error: largest deviation of `energies` from the analytic roots
        odd_energies: Richardson-extrapolated odd energies, untouched by the contact
    """
    r: np.ndarray
    spacing: float
    g_rel: float
    omega: float
    energies: np.ndarray
    grid_energies: np.ndarray
    states: np.ndarray
    max_error: float = 0.0
    odd_energies: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def weights(self) -> np.ndarray:
        w = np.full(self.r.size, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        return w

    @property
    def extent(self) -> float:
        return float(self.r[-1])

    def overlaps(self, other: np.ndarray) -> np.ndarray:
        """<phi_{2i}|other> for every stored level."""
        return self.states @ (self.weights * other)

    def matrix(self, values: np.ndarray) -> np.ndarray:
        """<phi_{2i}| f(r) |phi_{2j}> for a function sampled on the grid."""
        return (self.states * (self.weights * values)) @ self.states.T


def default_rel_extent(omega: float, n_levels: int) -> float:
    return max(10.0, math.sqrt(2.0 * (4 * n_levels + 2)) + 6.0) / math.sqrt(omega)


def _eigenpairs(g_rel: float, omega: float, spacing: float, half_nodes: int, n_levels: int):
    r = spacing * np.arange(-half_nodes, half_nodes + 1)
    diag = 1.0 / spacing ** 2 + 0.5 * omega ** 2 * r ** 2
    diag[half_nodes] += g_rel / spacing
    off = np.full(r.size - 1, -0.5 / spacing ** 2)
    count = min(2 * n_levels + 2, r.size)
    values, vectors = linalg.eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
    even, odd = [], []
    for k in range(values.size):
        v = vectors[:, k]
        if np.linalg.norm(v - v[::-1]) < np.linalg.norm(v + v[::-1]):
            even.append(k)
        else:
            odd.append(k)
    even = even[:n_levels]
    if len(even) < n_levels:
        raise ValueError(f"grid resolves only {len(even)} even levels, {n_levels} requested")
    states = vectors[:, even].T / math.sqrt(spacing)
    centre = states[:, half_nodes]
    signs = np.where(np.abs(centre) > 1e-8 * np.abs(states).max(axis=1),
                     np.sign(centre), np.sign(states.sum(axis=1)))
    signs[signs == 0] = 1.0
    return r, values[even], states * signs[:, None], values[odd[:n_levels]]


def rel_eigensolve_grid(
    g_rel: float,
    omega: float = 1.0,
    n_levels: int = 6,
    spacing: float = 0.01,
    extent: Optional[float] = None,
    tolerance: float = 1e-5,
) -> RelEigenGrid:
    """Even eigenpairs of -1/2 d^2 + 1/2 omega^2 r^2 + g_rel delta(r) on a finite-difference grid.

    The contact term is the diagonal bump g_rel / h at the r = 0 node. Energies
    are extrapolated from h and h/2; a warning reports the measured deviation
    from the analytic roots when it exceeds `tolerance`.
    """
    if g_rel < 0:
        raise ValueError(f"g_rel must be non-negative, got {g_rel}")
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if not spacing > 0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if extent is None:
        extent = default_rel_extent(omega, n_levels)
    if extent * math.sqrt(omega) < 8.0:
        raise ValueError(
            f"grid extent {extent} covers fewer than 8 oscillator lengths of omega={omega}"
        )
    half_nodes = int(round(extent / spacing))
    coupling = g_rel if math.isfinite(g_rel) else 1e12

    r, coarse, states, odd_coarse = _eigenpairs(coupling, omega, spacing, half_nodes, n_levels)
    _, fine, _, odd_fine = _eigenpairs(coupling, omega, spacing / 2.0, 2 * half_nodes, n_levels)
    energies = (4.0 * fine - coarse) / 3.0
    size = min(odd_coarse.size, odd_fine.size)
    odd_energies = (4.0 * odd_fine[:size] - odd_coarse[:size]) / 3.0

    unitfree = _unitfree_coupling(g_rel, omega)
    exact = np.array([omega * even_level_energy(unitfree, j) for j in range(n_levels)])
    max_error = float(np.max(np.abs(energies - exact)))
    if max_error > tolerance:
        logger.warning(
            f"[Busch] Grid h={spacing} too coarse for g_rel={g_rel}, omega={omega}: "
            f"max energy error {max_error:.2e} > {tolerance:.1e}"
        )
    return RelEigenGrid(
        r=r, spacing=spacing, g_rel=g_rel, omega=omega,
        energies=energies, grid_energies=coarse, states=states, max_error=max_error,
        odd_energies=odd_energies,
    )


def validate_busch_relation(
    couplings: Sequence[float] = VALIDATION_COUPLINGS,
    tolerance: float = 1e-3,
    spacing: float = 0.005,
) -> List[Tuple[float, float, float]]:
    """Check the relation's prefactor against the grid eigensolver.

    Returns:
        (g, analytic, grid) for the ground level at each coupling

    Raises:
        RelationValidationError: any deviation above `tolerance`
    """
    rows = []
    for g in couplings:
        grid = rel_eigensolve_grid(g, 1.0, n_levels=2, spacing=spacing, tolerance=math.inf)
        analytic = even_level_energy(g, 0)
        rows.append((float(g), analytic, float(grid.energies[0])))
    bad = [row for row in rows if abs(row[1] - row[2]) > tolerance]
    if bad:
        detail = ", ".join(f"g={g}: analytic={a:.6f} grid={b:.6f}" for g, a, b in bad)
        raise RelationValidationError(f"Busch relation disagrees with the grid eigensolver: {detail}")
    logger.debug(f"[Busch] Relation validated at g={list(couplings)}")
    return rows


@lru_cache(maxsize=1)
def ensure_relation_validated() -> bool:
    validate_busch_relation()
    return True


# --- analytic two-body signal ----------------------------------------------

def cm_overlaps(omega_pre: float, omega_post: float, n_levels: int) -> np.ndarray:
    """<Phi_{2I}(omega_post)|Phi_0(omega_pre)> for I = 0..n_levels-1 (squeezed Gaussian)."""
    kappa = (omega_pre - omega_post) / (omega_pre + omega_post)
    out = np.empty(n_levels)
    out[0] = (1.0 - kappa * kappa) ** 0.25
    for k in range(n_levels - 1):
        out[k + 1] = out[k] * (-kappa) * math.sqrt((2 * k + 1) * (2 * k + 2)) / (2.0 * (k + 1))
    return out


@dataclass
class AnalyticTerms:
    """<X^2>(t) = const + sum amplitude * cos(frequency * t)."""
    const: float
    frequencies: np.ndarray
    amplitudes: np.ndarray
    kinds: List[str]
    pairs: List[Tuple[int, int]]
    discarded_weight: float
    notes: List[str] = field(default_factory=list)

    def evaluate(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.const + np.cos(np.outer(t, self.frequencies)) @ self.amplitudes


def breathing_terms(
    quench: QuenchSpec,
    max_quanta: int = 20,
    spacing: float = 0.01,
    extent: Optional[float] = None,
) -> AnalyticTerms:
    """Expand the interacting two-body ground state of the pre-quench trap in post-quench eigenstates."""
    if quench.n_particles != 2:
        raise ValueError(f"analytic signal is defined for two particles, got N={quench.n_particles}")
    if max_quanta < 2 or max_quanta % 2:
        raise ValueError(f"max_quanta must be even and at least 2, got {max_quanta}")
    ensure_relation_validated()
    omega0, omega = quench.omega_pre, quench.omega_post
    n_levels = max_quanta // 2 + 1
    if extent is None:
        extent = default_rel_extent(min(omega0, omega), n_levels)

    post = rel_eigensolve_grid(quench.g_rel, omega, n_levels, spacing, extent, tolerance=math.inf)
    pre = rel_eigensolve_grid(quench.g_rel, omega0, 1, spacing, extent, tolerance=math.inf)
    a = post.overlaps(pre.states[0])
    f = post.matrix(post.r ** 2)
    big_a = cm_overlaps(omega0, omega, n_levels)
    big_f = np.array([[x2_matrix_element(2 * i, 2 * j, omega) for j in range(n_levels)]
                      for i in range(n_levels)])

    const = float(np.sum(big_a ** 2 * np.diag(big_f)) + np.sum(a ** 2 * np.diag(f)))
    frequencies, amplitudes, kinds, pairs = [], [], [], []
    for k in range(n_levels - 1):
        frequencies.append(2.0 * omega)
        amplitudes.append(2.0 * big_f[k, k + 1] * big_a[k] * big_a[k + 1])
        kinds.append("cm")
        pairs.append((k + 1, k))
    coupling = _unitfree_coupling(quench.g_rel, omega)
    for i in range(1, n_levels):
        for j in range(i):
            shift = _unitfree_shift(coupling, j) - _unitfree_shift(coupling, i)
            frequencies.append(omega * (2.0 * (i - j) - shift))
            amplitudes.append(2.0 * f[i, j] * a[i] * a[j])
            kinds.append("relative")
            pairs.append((i, j))

    discarded = float(max(1.0 - np.sum(big_a ** 2), 1.0 - np.sum(a ** 2), 0.0))
    terms = AnalyticTerms(
        const=const,
        frequencies=np.array(frequencies),
        amplitudes=np.array(amplitudes),
        kinds=kinds,
        pairs=pairs,
        discarded_weight=discarded,
    )
    if discarded > DISCARDED_WEIGHT_WARNING:
        note = (f"discarded spectral weight {discarded:.2e} above {DISCARDED_WEIGHT_WARNING:.0e}; "
                f"increase max_quanta beyond {max_quanta}")
        terms.notes.append(note)
        logger.warning(f"[Busch] {note}")
    return terms


def breathing_signal_analytic(
    quench: QuenchSpec,
    max_quanta: int,
    t_grid,
    spacing: float = 0.01,
) -> TimeSeries:
    """Exact two-body <X^2>(t) after the quench, sampled on a uniform grid."""
    t0, dt = uniform_spacing(t_grid)
    terms = breathing_terms(quench, max_quanta, spacing)
    samples = terms.evaluate(np.asarray(t_grid, dtype=float))
    provenance = {
        "engine": "analytic",
        **quench.to_dict(),
        "max_quanta": max_quanta,
        "grid_spacing": spacing,
        "const": terms.const,
        "discarded_weight": terms.discarded_weight,
    }
    return TimeSeries(t0=t0, dt=dt, samples=samples, provenance=provenance)
