"""Harmonic-oscillator basis mathematics shared by every engine.

All quantities are in pre-quench oscillator units (hbar = m = omega_pre = 1).
"""

import logging
import math
from functools import lru_cache
from typing import Sequence, Tuple

import numpy as np

try:
    from .data_models import HOBasisSpec, QuenchSpec
    from .errors import OrbitalIndexError
except ImportError:
    from data_models import HOBasisSpec, QuenchSpec
    from errors import OrbitalIndexError

logger = logging.getLogger(__name__)

# Highest oscillator index accepted by the orbital recurrence
HO_MAX_INDEX = 60


def _check_index(n: int) -> None:
    if n < 0:
        raise ValueError(f"oscillator index must be non-negative, got {n}")
    if n > HO_MAX_INDEX:
        raise OrbitalIndexError(
            f"oscillator index {n} above the stability bound {HO_MAX_INDEX}"
        )


def _check_omega(omega: float) -> None:
    if not omega > 0:
        raise ValueError(f"oscillator frequency must be positive, got {omega}")


def ho_orbital_table(n_max: int, x, omega: float = 1.0) -> np.ndarray:
    """Evaluate orbitals 0..n_max at x; shape (n_max + 1, *x.shape).

    Uses the three-term recurrence of the normalized Hermite functions, so no
    factorials or raw Hermite polynomials appear.
    """
    _check_index(n_max)
    _check_omega(omega)
    y = math.sqrt(omega) * np.asarray(x, dtype=float)
    table = np.empty((n_max + 1,) + y.shape, dtype=float)
    table[0] = omega ** 0.25 * math.pi ** -0.25 * np.exp(-0.5 * y * y)
    if n_max >= 1:
        table[1] = math.sqrt(2.0) * y * table[0]
    for k in range(1, n_max):
        table[k + 1] = (
            math.sqrt(2.0 / (k + 1)) * y * table[k] - math.sqrt(k / (k + 1.0)) * table[k - 1]
        )
    return table


def ho_orbital_eval(n: int, x, omega: float = 1.0):
    """n-th normalized oscillator eigenfunction of frequency omega at x.

    Raises:
        OrbitalIndexError: n above HO_MAX_INDEX
    """
    value = ho_orbital_table(n, x, omega)[n]
    if np.ndim(x) == 0:
        return float(value)
    return value


def x2_matrix_element(n: int, m: int, omega: float = 1.0) -> float:
    """<n|x^2|m> for the oscillator of frequency omega."""
    _check_omega(omega)
    if n < 0 or m < 0:
        raise ValueError(f"oscillator indices must be non-negative, got ({n}, {m})")
    if m == n:
        return (2 * n + 1) / (2.0 * omega)
    lo, hi = min(n, m), max(n, m)
    if hi == lo + 2:
        return math.sqrt((lo + 1) * (lo + 2)) / (2.0 * omega)
    return 0.0


def x_matrix_element(n: int, m: int, omega: float = 1.0) -> float:
    """<n|x|m> for the oscillator of frequency omega."""
    _check_omega(omega)
    if n < 0 or m < 0:
        raise ValueError(f"oscillator indices must be non-negative, got ({n}, {m})")
    if abs(n - m) != 1:
        return 0.0
    return math.sqrt(max(n, m) / (2.0 * omega))


def x2_matrix(n_orbitals: int, omega: float = 1.0) -> np.ndarray:
    return np.array(
        [[x2_matrix_element(n, m, omega) for m in range(n_orbitals)] for n in range(n_orbitals)]
    )


def x_matrix(n_orbitals: int, omega: float = 1.0) -> np.ndarray:
    return np.array(
        [[x_matrix_element(n, m, omega) for m in range(n_orbitals)] for n in range(n_orbitals)]
    )


def one_body_hamiltonian_matrix(basis: HOBasisSpec, quench: QuenchSpec) -> np.ndarray:
    """-1/2 d^2 + 1/2 omega_post^2 x^2 in the orbital basis of omega_basis.

    h = diag((n + 1/2) omega_b) + 1/2 (omega_post^2 - omega_b^2) <n|x^2|m>,
    which is exactly diagonal when omega_post equals the basis frequency.
    """
    wb = basis.omega_basis
    m = basis.n_orbitals
    h = np.diag((np.arange(m) + 0.5) * wb)
    if quench.omega_post != wb:
        h = h + 0.5 * (quench.omega_post ** 2 - wb ** 2) * x2_matrix(m, wb)
    return h


def gauss_hermite_integral(indices: Sequence[int], omega: float = 1.0, n_nodes: int = None) -> float:
    """Integral of a product of oscillator orbitals over the real line.

    The product of k orbitals is a polynomial of degree sum(indices) times
    exp(-k y^2 / 2); after rescaling it is integrated exactly by Gauss-Hermite
    quadrature with at least sum(indices)/2 + 1 nodes.
    """
    _check_omega(omega)
    indices = [int(i) for i in indices]
    k = len(indices)
    if k == 0:
        raise ValueError("need at least one orbital index")
    for i in indices:
        _check_index(i)
    if n_nodes is None:
        n_nodes = sum(indices) + 1
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    scale = math.sqrt(k / 2.0)
    table = ho_orbital_table(max(indices), nodes / scale)
    product = np.prod([table[i] for i in indices], axis=0)
    value = np.sum(weights * np.exp(nodes * nodes) * product) / scale
    return float(omega ** (k / 4.0 - 0.5) * value)


@lru_cache(maxsize=4096)
def _contact_sorted(key: Tuple[int, int, int, int], omega: float) -> float:
    return gauss_hermite_integral(key, omega)


def contact_tensor(a: int, b: int, c: int, d: int, omega: float = 1.0) -> float:
    """g-independent contact integral of four orbitals, int phi_a phi_b phi_c phi_d dx."""
    if (a + b + c + d) % 2:
        return 0.0
    return _contact_sorted(tuple(sorted((a, b, c, d))), float(omega))


@lru_cache(maxsize=16)
def contact_table(n_orbitals: int, omega: float = 1.0) -> np.ndarray:
    """Read-only M^4 table of contact integrals.

    Built once per (M, omega); later readers only see the frozen array, so the
    table can be shared between sweep workers.
    """
    _check_omega(omega)
    m = int(n_orbitals)
    _check_index(m - 1)
    n_nodes = 4 * (m - 1) + 1
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    scale = math.sqrt(2.0)
    psi = ho_orbital_table(m - 1, nodes / scale)
    pairs = (psi[:, None, :] * psi[None, :, :]).reshape(m * m, n_nodes)
    wk = weights * np.exp(nodes * nodes)
    table = (pairs * wk) @ pairs.T
    table = 0.5 * (table + table.T) * math.sqrt(omega) / scale
    table = table.reshape(m, m, m, m)
    idx = np.arange(m)
    parity = (idx[:, None, None, None] + idx[None, :, None, None]
              + idx[None, None, :, None] + idx[None, None, None, :]) % 2
    table[parity == 1] = 0.0
    table.setflags(write=False)
    logger.debug(f"[Trap] Built contact table M={m} omega={omega} with {n_nodes} nodes")
    return table


def time_grid(omega: float, periods: float, samples_per_period: int, t0: float = 0.0) -> np.ndarray:
    """Uniform time grid covering `periods` oscillations of frequency omega."""
    _check_omega(omega)
    if samples_per_period < 2:
        raise ValueError(f"samples_per_period must be at least 2, got {samples_per_period}")
    count = int(round(periods * samples_per_period))
    dt = 2.0 * math.pi / omega / samples_per_period
    return t0 + dt * np.arange(count)


def uniform_spacing(t_grid) -> Tuple[float, float]:
    """Return (t0, dt) of a uniform grid or raise ValueError."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ValueError("time grid must be one-dimensional with at least two points")
    dt = float(t[1] - t[0])
    if not dt > 0:
        raise ValueError("time grid must be increasing")
    if not np.allclose(np.diff(t), dt, rtol=1e-9, atol=1e-12 * max(1.0, abs(t[-1]))):
        raise ValueError("time grid is not uniform")
    return float(t[0]), dt
