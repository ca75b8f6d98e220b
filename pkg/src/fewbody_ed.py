"""Exact diagonalization of N contact-interacting bosons in static oscillator orbitals.

The basis orbitals are the pre-quench eigenfunctions for every run; the quench
enters only through the one-body matrix. Second-quantized operators are built
from stacked annihilation matrices, so a one-body operator is
E^T (h kron 1) E and a two-body operator is B^T (W kron 1) B.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, sparse, special
from scipy.sparse import linalg as sparse_linalg

try:
    from .busch_analytic import even_level_energy
    from .data_models import HOBasisSpec, QuenchSpec, TimeSeries
    from .errors import BasisSizeError, KrylovToleranceError, NumericalError, SolverConvergenceError
    from .spectral import extract_peaks, lowest_band_frequency
    from .trap_model import (
        contact_table,
        one_body_hamiltonian_matrix,
        time_grid,
        uniform_spacing,
        x2_matrix,
        x_matrix,
    )
except ImportError:
    from busch_analytic import even_level_energy
    from data_models import HOBasisSpec, QuenchSpec, TimeSeries
    from errors import BasisSizeError, KrylovToleranceError, NumericalError, SolverConvergenceError
    from spectral import extract_peaks, lowest_band_frequency
    from trap_model import (
        contact_table,
        one_body_hamiltonian_matrix,
        time_grid,
        uniform_spacing,
        x2_matrix,
        x_matrix,
    )

logger = logging.getLogger(__name__)

DEFAULT_BASIS_CAP = 2_000_000

# Dimension up to which propagation uses a full eigendecomposition
EIGEN_PROPAGATOR_LIMIT = 4000

# Dimension up to which the ground state comes from a dense eigensolver
DENSE_GROUND_STATE_LIMIT = 2000

KRYLOV_TOLERANCE = 1e-10
KRYLOV_DIM = 30

TRUNCATIONS = ("orbitals", "quanta", "separable")
COUPLINGS = ("bare", "renormalized")

# Centre-of-mass quanta kept by the separable truncation
CM_QUANTA = 8

DEFAULT_PERIODS = 200
DEFAULT_SAMPLES_PER_PERIOD = 32


def fock_dimension(n_particles: int, n_orbitals: int, max_quanta: Optional[int] = None) -> int:
    """Number of occupation vectors; with `max_quanta` only those with sum_k k n_k <= max_quanta."""
    if max_quanta is None:
        return math.comb(n_particles + n_orbitals - 1, n_orbitals - 1)
    # ways[p][q]: p particles placed in the orbitals seen so far, carrying q quanta
    ways = [[0] * (max_quanta + 1) for _ in range(n_particles + 1)]
    ways[0][0] = 1
    for orbital in range(min(n_orbitals, max_quanta + 1)):
        grown = [[0] * (max_quanta + 1) for _ in range(n_particles + 1)]
        for p in range(n_particles + 1):
            for q in range(max_quanta + 1):
                if not ways[p][q]:
                    continue
                for extra in range(n_particles - p + 1):
                    total = q + extra * orbital
                    if total > max_quanta:
                        break
                    grown[p + extra][total] += ways[p][q]
        ways = grown
    return sum(ways[n_particles])


def _occupations(n: int, m: int, budget: Optional[int] = None, orbital: int = 0) -> Iterator[Tuple[int, ...]]:
    # lexicographically descending: the first orbital takes as many particles as possible
    if m == 1:
        if budget is None or n * orbital <= budget:
            yield (n,)
        return
    for first in range(n, -1, -1):
        left = None
        if budget is not None:
            left = budget - first * orbital
            # the remaining particles cost at least (orbital + 1) quanta each
            if left < (n - first) * (orbital + 1):
                continue
        for rest in _occupations(n - first, m - 1, left, orbital + 1):
            yield (first,) + rest


class FockBasis:
    """Bosonic occupation-number basis of N particles in M orbitals.

    Attributes:
        n_particles: N
        n_orbitals: M
        omega_basis: frequency of the oscillator orbitals
        max_quanta: cap on the total excitation sum_k k n_k, None for the full product space
        states: int array (size, M) of occupation vectors in enumeration order
    """

    def __init__(
        self, n_particles: int, n_orbitals: int, omega_basis: float = 1.0, max_quanta: Optional[int] = None
    ):
        self.n_particles = int(n_particles)
        self.n_orbitals = int(n_orbitals)
        self.omega_basis = float(omega_basis)
        self.max_quanta = None if max_quanta is None else int(max_quanta)
        self.states = np.array(
            list(_occupations(self.n_particles, self.n_orbitals, self.max_quanta)), dtype=np.int64
        )
        self.states = self.states.reshape(-1, self.n_orbitals)
        if math.log2(self.n_particles + 1) * self.n_orbitals < 62:
            self._radix = (self.n_particles + 1) ** np.arange(self.n_orbitals, dtype=np.int64)
            codes = self.states @ self._radix
            self._order = np.argsort(codes)
            self._sorted_codes = codes[self._order]
            self._lookup = None
        else:
            self._radix = None
            self._lookup = {tuple(s): i for i, s in enumerate(self.states.tolist())}

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        cap = "" if self.max_quanta is None else f", max_quanta={self.max_quanta}"
        return f"FockBasis(N={self.n_particles}, M={self.n_orbitals}{cap}, size={self.size})"

    def state(self, index: int) -> Tuple[int, ...]:
        return tuple(int(n) for n in self.states[index])

    def index(self, occupation: Sequence[int]) -> int:
        found = self.lookup(np.asarray([occupation], dtype=np.int64))[0]
        if found < 0:
            raise KeyError(f"occupation {tuple(occupation)} not in {self!r}")
        return int(found)

    def lookup(self, occupations: np.ndarray) -> np.ndarray:
        """Indices of many occupation vectors at once; -1 for vectors outside the basis."""
        occupations = np.asarray(occupations, dtype=np.int64).reshape(-1, self.n_orbitals)
        if self._lookup is not None:
            return np.array([self._lookup.get(tuple(o), -1) for o in occupations.tolist()], dtype=np.int64)
        codes = occupations @ self._radix
        pos = np.searchsorted(self._sorted_codes, codes)
        pos = np.minimum(pos, self.size - 1)
        hit = self._sorted_codes[pos] == codes
        valid = hit & (occupations.sum(axis=1) == self.n_particles) & (occupations >= 0).all(axis=1)
        return np.where(valid, self._order[pos], -1)

    @cached_property
    def lower(self) -> "FockBasis":
        return FockBasis(self.n_particles - 1, self.n_orbitals, self.omega_basis, self.max_quanta)

    @cached_property
    def annihilators(self) -> sparse.csr_matrix:
        """Stacked a_m blocks, shape (M * size(N-1), size(N))."""
        lower = self.lower
        rows, cols, data = [], [], []
        idx = np.arange(self.size)
        for m in range(self.n_orbitals):
            mask = self.states[:, m] > 0
            target = self.states[mask].copy()
            target[:, m] -= 1
            rows.append(m * lower.size + lower.lookup(target))
            cols.append(idx[mask])
            data.append(np.sqrt(self.states[mask, m].astype(float)))
        return sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n_orbitals * lower.size, self.size),
        )

    @cached_property
    def pairs(self) -> List[Tuple[int, int]]:
        return [(c, d) for c in range(self.n_orbitals) for d in range(c, self.n_orbitals)]

    @cached_property
    def pair_annihilators(self) -> sparse.csr_matrix:
        """Stacked a_d a_c blocks for c <= d, shape (P * size(N-2), size(N))."""
        lower = self.lower.lower
        rows, cols, data = [], [], []
        idx = np.arange(self.size)
        for p, (c, d) in enumerate(self.pairs):
            nc = self.states[:, c]
            if c == d:
                mask = nc >= 2
                amp = np.sqrt((nc * (nc - 1))[mask].astype(float))
            else:
                nd = self.states[:, d]
                mask = (nc > 0) & (nd > 0)
                amp = np.sqrt((nc * nd)[mask].astype(float))
            target = self.states[mask].copy()
            target[:, c] -= 1
            target[:, d] -= 1
            rows.append(p * lower.size + lower.lookup(target))
            cols.append(idx[mask])
            data.append(amp)
        return sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(self.pairs) * lower.size, self.size),
        )


def _reduction_hint(n_particles: int, n_orbitals: int, cap: int, max_quanta: Optional[int] = None) -> str:
    def size(n: int, m: int) -> int:
        return fock_dimension(n, m, None if max_quanta is None else min(max_quanta, m - 1))

    n_ok = next((n for n in range(n_particles, 0, -1) if size(n, n_orbitals) <= cap), None)
    m_ok = next((m for m in range(n_orbitals, 0, -1) if size(n_particles, m) <= cap), None)
    hints = []
    if n_ok is not None:
        hints.append(f"n_particles <= {n_ok}")
    if m_ok is not None:
        hints.append(f"n_orbitals <= {m_ok}")
    return " or ".join(hints) if hints else "smaller N and M"


def build_fock_basis(
    n_particles: int,
    n_orbitals: int,
    cap: Optional[int] = DEFAULT_BASIS_CAP,
    omega_basis: float = 1.0,
    max_quanta: Optional[int] = None,
) -> FockBasis:
    """Enumerate all occupation vectors with sum N over M orbitals.

    `max_quanta` keeps only vectors whose total excitation sum_k k n_k stays
    at or below it.

    Raises:
        BasisSizeError: dimension above `cap`
    """
    if n_particles < 1 or n_orbitals < 1:
        raise ValueError(f"need N >= 1 and M >= 1, got N={n_particles}, M={n_orbitals}")
    if max_quanta is not None and max_quanta < 0:
        raise ValueError(f"max_quanta must be non-negative, got {max_quanta}")
    size = fock_dimension(n_particles, n_orbitals, max_quanta)
    if cap is not None and size > cap:
        raise BasisSizeError(
            f"Fock dimension {size} for N={n_particles}, M={n_orbitals} exceeds cap {cap}; "
            f"reduce to {_reduction_hint(n_particles, n_orbitals, cap, max_quanta)}"
        )
    return FockBasis(n_particles, n_orbitals, omega_basis, max_quanta)


@dataclass
class EdSpace:
    """Fock basis of a truncation scheme, with an optional isometry onto the kept subspace.

    Attributes:
        basis: underlying occupation-number basis
        truncation: scheme name
        internal_quanta: quanta budget of the relative motion, None without one
        embedding: (basis.size, dimension) orthonormal columns, None when the whole basis is kept
        labels: (dimension, 2) centre-of-mass and internal quanta of each column
    """
    basis: FockBasis
    truncation: str
    internal_quanta: Optional[int] = None
    embedding: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    @property
    def dimension(self) -> int:
        return self.basis.size if self.embedding is None else int(self.embedding.shape[1])


def _internal_quanta(truncation: str, n_orbitals: int) -> Optional[int]:
    if truncation not in TRUNCATIONS:
        raise ValueError(f"unknown truncation {truncation!r}, expected one of {TRUNCATIONS}")
    return None if truncation == "orbitals" else n_orbitals - 1


def ed_dimension(n_particles: int, n_orbitals: int, truncation: str = "orbitals") -> int:
    """Size of the Fock basis a truncation scheme diagonalizes in."""
    budget = _internal_quanta(truncation, n_orbitals)
    if budget is None:
        return fock_dimension(n_particles, n_orbitals)
    if truncation == "separable":
        budget += CM_QUANTA
    return fock_dimension(n_particles, budget + 1, budget)


def cm_lowering_operator(basis: FockBasis) -> sparse.csr_matrix:
    """B = N^(-1/2) sum_n sqrt(n+1) a_n^dagger a_(n+1), the centre-of-mass ladder at the basis frequency."""
    m = basis.n_orbitals
    lowering = np.diag(np.sqrt(np.arange(1, m, dtype=float)), k=1) / math.sqrt(basis.n_particles)
    return one_body_operator(basis, lowering)


def separable_embedding(basis: FockBasis, internal_quanta: int, cm_quanta: int) -> Tuple[np.ndarray, np.ndarray]:
    """Orthonormal span of the states with at most `cm_quanta` centre-of-mass and
    `internal_quanta` internal quanta.

    B^dagger B is exact inside a quanta-truncated basis and conserves the total
    excitation, so it is diagonalized level by level. Returns (columns, labels).

    Raises:
        NumericalError: a centre-of-mass occupation is not an integer
    """
    if basis.max_quanta is None or basis.max_quanta < internal_quanta + cm_quanta:
        raise ValueError(
            f"separable subspace needs a basis with at least {internal_quanta + cm_quanta} quanta, got {basis!r}"
        )
    lowering = cm_lowering_operator(basis)
    cm_number = (lowering.T @ lowering).tocsr()
    total = basis.states @ np.arange(basis.n_orbitals)
    columns, labels = [], []
    for level in range(basis.max_quanta + 1):
        idx = np.flatnonzero(total == level)
        if idx.size == 0:
            continue
        values, vectors = linalg.eigh(cm_number[idx][:, idx].toarray())
        counts = np.rint(values).astype(int)
        if np.max(np.abs(values - counts)) > 1e-8:
            raise NumericalError(f"centre-of-mass quanta at excitation {level} are not integers")
        for k in np.flatnonzero((counts <= cm_quanta) & (level - counts <= internal_quanta)):
            column = np.zeros(basis.size)
            column[idx] = vectors[:, k]
            columns.append(column)
            labels.append((counts[k], level - counts[k]))
    return np.column_stack(columns), np.array(labels, dtype=int)


def ed_space(
    n_particles: int,
    n_orbitals: int,
    omega_basis: float = 1.0,
    truncation: str = "orbitals",
    cap: Optional[int] = DEFAULT_BASIS_CAP,
) -> EdSpace:
    """Basis for a truncation scheme.

    "orbitals" keeps every occupation of the M orbitals. "quanta" keeps those
    with at most M - 1 excitation quanta, which leaves the centre of mass and
    the relative motion nearly separable. "separable" caps the internal quanta
    at M - 1 and the centre-of-mass quanta at CM_QUANTA independently, so the
    two motions decouple exactly.
    """
    budget = _internal_quanta(truncation, n_orbitals)
    if truncation == "orbitals":
        return EdSpace(build_fock_basis(n_particles, n_orbitals, cap, omega_basis), truncation)
    if truncation == "quanta":
        return EdSpace(build_fock_basis(n_particles, n_orbitals, cap, omega_basis, budget), truncation, budget)
    total = budget + CM_QUANTA
    basis = build_fock_basis(n_particles, total + 1, cap, omega_basis, total)
    embedding, labels = separable_embedding(basis, budget, CM_QUANTA)
    logger.debug(f"[ED] Separable subspace {embedding.shape[1]} of {basis!r}")
    return EdSpace(basis, truncation, budget, embedding, labels)


def effective_coupling(g: float, max_quanta: int, omega_basis: float = 1.0) -> float:
    """Contact strength that puts the truncated two-body ground level on the exact one.

    In a basis of at most K relative quanta the contact term is rank one on the
    even levels, so the truncated ground level E solves 1/g_rel = -S_K(E) with
    S_K(E) = sum_{n even <= K} phi_n(0)^2 / (n + 1/2 - E). Evaluating S_K at the
    exact level gives the coupling directly; its leading truncation error is
    common to all levels and cancels in level differences.
    """
    if g < 0 or not math.isfinite(g):
        raise ValueError(f"renormalization needs a finite non-negative coupling, got {g}")
    if g == 0:
        return 0.0
    unitfree = g / math.sqrt(2.0) / math.sqrt(omega_basis)
    exact = even_level_energy(unitfree, 0)
    k = np.arange(max_quanta // 2 + 1)
    # phi_{2k}(0)^2 of the unit oscillator
    weights = np.exp(special.gammaln(k + 0.5) - special.gammaln(k + 1.0)) / math.pi
    s = float(np.sum(weights / (2.0 * k + 0.5 - exact)))
    return -math.sqrt(2.0) * math.sqrt(omega_basis) / s


def one_body_operator(basis: FockBasis, matrix: np.ndarray) -> sparse.csr_matrix:
    """sum_nm h_nm a_n^dagger a_m for a real M x M matrix."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (basis.n_orbitals, basis.n_orbitals):
        raise ValueError(f"one-body matrix must be {basis.n_orbitals}x{basis.n_orbitals}")
    e = basis.annihilators
    kernel = sparse.kron(sparse.csr_matrix(matrix), sparse.identity(basis.lower.size), format="csr")
    return (e.T @ kernel @ e).tocsr()


def two_body_operator(basis: FockBasis, tensor: np.ndarray) -> sparse.csr_matrix:
    """sum_abcd V_abcd a_a^dagger a_b^dagger a_d a_c for a real M^4 tensor."""
    if basis.n_particles < 2:
        return sparse.csr_matrix((basis.size, basis.size))
    v = np.asarray(tensor, dtype=float)
    v = 0.5 * (v + v.transpose(1, 0, 2, 3))
    v = 0.5 * (v + v.transpose(0, 1, 3, 2))
    pairs = np.array(basis.pairs)
    mult = np.where(pairs[:, 0] == pairs[:, 1], 1.0, 2.0)
    w = v[pairs[:, 0][:, None], pairs[:, 1][:, None], pairs[:, 0][None, :], pairs[:, 1][None, :]]
    w = w * mult[:, None] * mult[None, :]
    b = basis.pair_annihilators
    kernel = sparse.kron(sparse.csr_matrix(w), sparse.identity(basis.lower.lower.size), format="csr")
    return (b.T @ kernel @ b).tocsr()


def _symmetrized(op: sparse.spmatrix) -> sparse.csr_matrix:
    op = ((op + op.T) * 0.5).tocsr()
    op.eliminate_zeros()
    return op


def build_hamiltonian(basis: FockBasis, quench: QuenchSpec, coupling: Optional[float] = None) -> sparse.csr_matrix:
    """H = sum h_nm a_n^dagger a_m + (g/2) sum I_abcd a_a^dagger a_b^dagger a_d a_c.

    `coupling` replaces quench.g in the contact term when given.
    """
    g = quench.g if coupling is None else coupling
    if not math.isfinite(g):
        raise ValueError("exact diagonalization needs a finite coupling")
    start = time.perf_counter()
    h1 = one_body_hamiltonian_matrix(HOBasisSpec(basis.n_orbitals, basis.omega_basis), quench)
    h = one_body_operator(basis, h1)
    if g > 0:
        tensor = 0.5 * g * contact_table(basis.n_orbitals, basis.omega_basis)
        h = h + two_body_operator(basis, tensor)
    h = _symmetrized(h)
    logger.debug(
        f"[ED] Hamiltonian dim={basis.size} nnz={h.nnz} g={g} "
        f"omega_post={quench.omega_post:.6f} in {time.perf_counter() - start:.2f}s"
    )
    return h


@dataclass
class ManyBodyState:
    """Coefficient vector over a Fock basis."""
    basis: FockBasis
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=complex).reshape(-1)
        if self.coefficients.size != self.basis.size:
            raise ValueError(f"state has {self.coefficients.size} coefficients, basis has {self.basis.size}")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))

    def normalized(self) -> "ManyBodyState":
        return ManyBodyState(self.basis, self.coefficients / self.norm)

    @classmethod
    def from_occupation(cls, basis: FockBasis, occupation: Sequence[int]) -> "ManyBodyState":
        coefficients = np.zeros(basis.size, dtype=complex)
        coefficients[basis.index(occupation)] = 1.0
        return cls(basis, coefficients)


def _reduced(op: sparse.spmatrix, embedding: np.ndarray) -> sparse.csr_matrix:
    """V^T op V for real orthonormal columns V."""
    return _symmetrized(sparse.csr_matrix(embedding.T @ (op @ embedding)))


def ground_state(
    h: sparse.spmatrix,
    basis: FockBasis,
    residual_tolerance: float = 1e-8,
    embedding: Optional[np.ndarray] = None,
) -> Tuple[float, ManyBodyState]:
    """Lowest eigenpair of a pre-quench Hamiltonian, restricted to the columns of `embedding` if given.

    Raises:
        SolverConvergenceError: iterative solver failed or residual too large
    """
    if embedding is not None:
        h = _reduced(h, embedding)
    dim = h.shape[0]
    if dim <= DENSE_GROUND_STATE_LIMIT:
        values, vectors = linalg.eigh(h.toarray(), subset_by_index=[0, 0])
    else:
        v0 = np.full(dim, 1.0 / math.sqrt(dim))
        try:
            values, vectors = sparse_linalg.eigsh(h, k=1, which="SA", v0=v0, tol=1e-12, maxiter=20 * dim)
        except sparse_linalg.ArpackNoConvergence as exc:
            residual = float("nan")
            if exc.eigenvalues.size:
                vec = exc.eigenvectors[:, 0]
                residual = float(np.linalg.norm(h @ vec - exc.eigenvalues[0] * vec))
            raise SolverConvergenceError("ground-state eigensolver did not converge", residual) from exc
    energy = float(values[0])
    vec = vectors[:, 0]
    vec = vec * np.sign(vec[np.argmax(np.abs(vec))])
    residual = float(np.linalg.norm(h @ vec - energy * vec))
    if residual > residual_tolerance:
        raise SolverConvergenceError("ground-state residual above tolerance", residual)
    if embedding is not None:
        vec = embedding @ vec
    return energy, ManyBodyState(basis, vec)


# --- observables -------------------------------------------------------------

@dataclass
class OneBodyDensity:
    """Reduced one-body density rho_nm = <a_m^dagger a_n> / N."""
    matrix: np.ndarray
    n_particles: int

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.matrix, self.matrix.conj().T, atol=atol))

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))

    def expectation(self, one_body_matrix: np.ndarray) -> float:
        """N tr(o rho) for a one-body matrix o."""
        return float(self.n_particles * np.real(np.trace(one_body_matrix @ self.matrix)))


def one_body_density(state: ManyBodyState) -> OneBodyDensity:
    basis = state.basis
    v = (basis.annihilators @ state.coefficients).reshape(basis.n_orbitals, basis.lower.size)
    gram = v.conj() @ v.T
    return OneBodyDensity(gram.T / basis.n_particles, basis.n_particles)


def natural_occupations(rho: OneBodyDensity) -> np.ndarray:
    """Eigenvalues of rho_1 in descending order."""
    return rho.eigenvalues()[::-1]


def x2_expectation(state: ManyBodyState) -> float:
    """<X^2> = N tr(x^2 rho_1) with x^2 at the basis frequency."""
    basis = state.basis
    return one_body_density(state).expectation(x2_matrix(basis.n_orbitals, basis.omega_basis))


def cm_x2_operator(basis: FockBasis) -> sparse.csr_matrix:
    """R^2 with R = (1/N) sum_k x_k, as a sparse operator."""
    x = x_matrix(basis.n_orbitals, basis.omega_basis)
    op = one_body_operator(basis, x @ x)
    if basis.n_particles > 1:
        op = op + two_body_operator(basis, np.einsum("ac,bd->abcd", x, x))
    return _symmetrized(op / basis.n_particles ** 2)


# --- propagation -------------------------------------------------------------

@dataclass
class QuenchTrajectory:
    """Observables streamed along a post-quench propagation."""
    times: np.ndarray
    x2: np.ndarray
    x_mean: np.ndarray
    norm: np.ndarray
    energy: np.ndarray
    propagator: str
    extra: Dict[str, np.ndarray] = field(default_factory=dict)
    states: Optional[List[ManyBodyState]] = None

    @property
    def norm_drift(self) -> float:
        return float(np.max(np.abs(self.norm - 1.0)))

    @property
    def energy_drift(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.energy - e0)) / max(abs(e0), 1e-300))

    def series(self, name: str = "x2", provenance: Optional[Dict] = None) -> TimeSeries:
        samples = self.x2 if name == "x2" else self.extra[name]
        t0, dt = uniform_spacing(self.times)
        return TimeSeries(t0, dt, samples, dict(provenance or {}))


def _expectations(ops: Dict[str, sparse.spmatrix], block: np.ndarray) -> Dict[str, np.ndarray]:
    return {name: np.real(np.sum(block.conj() * (op @ block), axis=0)) for name, op in ops.items()}


def _lanczos_step(h, psi: np.ndarray, dt: float, dim: int) -> Tuple[np.ndarray, float]:
    """exp(-i h dt) psi in a Krylov space of size `dim`, with its error estimate."""
    norm = np.linalg.norm(psi)
    basis = np.zeros((psi.size, dim), dtype=complex)
    alpha = np.zeros(dim)
    beta = np.zeros(dim)
    basis[:, 0] = psi / norm
    size = dim
    for j in range(dim):
        w = h @ basis[:, j]
        if j > 0:
            w = w - beta[j - 1] * basis[:, j - 1]
        alpha[j] = np.real(np.vdot(basis[:, j], w))
        w = w - alpha[j] * basis[:, j]
        # full reorthogonalization keeps the small basis orthonormal
        w = w - basis[:, : j + 1] @ (basis[:, : j + 1].conj().T @ w)
        beta[j] = np.linalg.norm(w)
        if beta[j] < 1e-14:
            size = j + 1
            break
        if j + 1 < dim:
            basis[:, j + 1] = w / beta[j]
    theta, q = linalg.eigh_tridiagonal(alpha[:size], beta[: size - 1])
    y = q @ (np.exp(-1j * theta * dt) * q[0, :])
    error = 0.0 if size < dim or beta[size - 1] < 1e-14 else float(beta[size - 1] * abs(y[-1]))
    return norm * (basis[:, :size] @ y), error


def propagate_quench(
    psi0: ManyBodyState,
    h_post: sparse.spmatrix,
    t_grid,
    observables: Optional[Dict[str, sparse.spmatrix]] = None,
    keep_states: bool = False,
    method: str = "auto",
    krylov_tolerance: float = KRYLOV_TOLERANCE,
    krylov_dim: int = KRYLOV_DIM,
    embedding: Optional[np.ndarray] = None,
) -> QuenchTrajectory:
    """psi(t) = exp(-i H_post t) psi0 on a uniform grid, streaming observables.

    Full eigendecomposition up to EIGEN_PROPAGATOR_LIMIT, Lanczos-Krylov stepping above.
    With `embedding` the propagation runs in the span of its columns; stored
    states are mapped back to the Fock basis.

    Raises:
        KrylovToleranceError: the adaptive Krylov step shrank below its floor
    """
    t = np.asarray(t_grid, dtype=float)
    t0, dt = uniform_spacing(t)
    basis = psi0.basis
    m = basis.n_orbitals
    ops = {
        "x2": one_body_operator(basis, x2_matrix(m, basis.omega_basis)),
        "x": one_body_operator(basis, x_matrix(m, basis.omega_basis)),
        "energy": h_post,
    }
    for name, op in (observables or {}).items():
        ops[name] = op
    psi = psi0.coefficients.astype(complex)
    if embedding is not None:
        ops = {name: _reduced(op, embedding) for name, op in ops.items()}
        h_post = ops["energy"]
        psi = embedding.T @ psi
    dim = psi.size

    def full(vec: np.ndarray) -> np.ndarray:
        return vec if embedding is None else embedding @ vec

    if method == "auto":
        method = "eigen" if dim <= EIGEN_PROPAGATOR_LIMIT else "krylov"
    if method not in ("eigen", "krylov"):
        raise ValueError(f"unknown propagator {method!r}")

    start = time.perf_counter()
    values = {name: np.empty(t.size) for name in ops}
    norm = np.empty(t.size)
    states: Optional[List[ManyBodyState]] = [] if keep_states else None

    if method == "eigen":
        energies, vectors = linalg.eigh(h_post.toarray())
        coeff = vectors.T @ psi
        chunk = 256
        for lo in range(0, t.size, chunk):
            ts = t[lo: lo + chunk]
            block = vectors @ (coeff[:, None] * np.exp(-1j * np.outer(energies, ts)))
            for name, vals in _expectations(ops, block).items():
                values[name][lo: lo + ts.size] = vals
            norm[lo: lo + ts.size] = np.sqrt(np.sum(np.abs(block) ** 2, axis=0))
            if states is not None:
                states.extend(ManyBodyState(basis, full(block[:, k])) for k in range(ts.size))
    else:
        if t0 != 0.0:
            psi, _ = _lanczos_step(h_post, psi, t0, krylov_dim)
        sub = dt
        floor = dt * 1e-6
        for k in range(t.size):
            if k > 0:
                remaining = dt
                while remaining > 0:
                    step = min(sub, remaining)
                    candidate, error = _lanczos_step(h_post, psi, step, krylov_dim)
                    if error > krylov_tolerance:
                        sub = step / 2.0
                        if sub < floor:
                            raise KrylovToleranceError(
                                f"Krylov step shrank to {sub:.3e} (floor {floor:.3e}) at t={t[k]:.4f} "
                                f"with error estimate {error:.2e} > {krylov_tolerance:.1e}"
                            )
                        continue
                    psi = candidate
                    remaining -= step
                    if error < 0.01 * krylov_tolerance:
                        sub = min(2.0 * sub, dt)
            block = psi[:, None]
            for name, vals in _expectations(ops, block).items():
                values[name][k] = vals[0]
            norm[k] = np.linalg.norm(psi)
            if states is not None:
                states.append(ManyBodyState(basis, full(psi.copy())))

    trajectory = QuenchTrajectory(
        times=t,
        x2=values.pop("x2"),
        x_mean=values.pop("x"),
        norm=norm,
        energy=values.pop("energy"),
        propagator=method,
        extra=values,
        states=states,
    )
    if trajectory.norm_drift > 1e-10:
        logger.warning(f"[ED] Norm drift {trajectory.norm_drift:.2e} above 1e-10")
    if trajectory.energy_drift > 1e-9:
        logger.warning(f"[ED] Energy drift {trajectory.energy_drift:.2e} above 1e-9")
    logger.info(
        f"[ED] Propagated dim={dim} over {t.size} samples with {method} "
        f"in {time.perf_counter() - start:.2f}s"
    )
    return trajectory


# --- pipelines ---------------------------------------------------------------

def scheme_interaction(quench: QuenchSpec, n_orbitals: int, truncation: str = "orbitals", coupling: str = "bare") -> float:
    """Contact strength entering H for a truncation and coupling scheme.

    "renormalized" returns the two-body matched strength for the internal quanta
    budget M - 1 and needs a truncation that has one.
    """
    if coupling not in COUPLINGS:
        raise ValueError(f"unknown coupling scheme {coupling!r}, expected one of {COUPLINGS}")
    budget = _internal_quanta(truncation, n_orbitals)
    if coupling == "bare":
        return quench.g
    if budget is None:
        raise ValueError(f"renormalized coupling needs a quanta budget, {truncation!r} has none")
    return effective_coupling(quench.g, budget, quench.omega_pre)


def quench_trajectory(
    quench: QuenchSpec,
    n_orbitals: int,
    t_grid,
    observables: Optional[Dict[str, str]] = None,
    keep_states: bool = False,
    cap: Optional[int] = DEFAULT_BASIS_CAP,
    truncation: str = "orbitals",
    coupling: str = "bare",
) -> Tuple[float, QuenchTrajectory]:
    """Basis -> pre-quench ground state -> post-quench propagation.

    `observables` maps output names to "cm_x2"; returns (ground energy, trajectory).
    """
    space = ed_space(quench.n_particles, n_orbitals, quench.omega_pre, truncation, cap)
    basis = space.basis
    g = scheme_interaction(quench, n_orbitals, truncation, coupling)
    e0, psi0 = ground_state(build_hamiltonian(basis, quench.pre_quench(), g), basis, embedding=space.embedding)
    h_post = build_hamiltonian(basis, quench, g)
    ops = {}
    for name, kind in (observables or {}).items():
        if kind != "cm_x2":
            raise ValueError(f"unknown observable {kind!r}")
        ops[name] = cm_x2_operator(basis)
    return e0, propagate_quench(psi0, h_post, t_grid, ops, keep_states, embedding=space.embedding)


def simulate_quench(
    quench: QuenchSpec,
    n_orbitals: int,
    periods: float = DEFAULT_PERIODS,
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD,
    cap: Optional[int] = DEFAULT_BASIS_CAP,
    truncation: str = "orbitals",
    coupling: str = "bare",
) -> TimeSeries:
    """<X^2>(t) after the quench, with provenance for the CSV header."""
    t = time_grid(quench.omega_post, periods, samples_per_period)
    e0, traj = quench_trajectory(quench, n_orbitals, t, cap=cap, truncation=truncation, coupling=coupling)
    provenance = {
        "engine": "ed",
        **quench.to_dict(),
        "n_orbitals": n_orbitals,
        "truncation": truncation,
        "coupling": coupling,
        "interaction": scheme_interaction(quench, n_orbitals, truncation, coupling),
        "dimension": ed_dimension(quench.n_particles, n_orbitals, truncation),
        "ground_energy": e0,
        "propagator": traj.propagator,
        "norm_drift": traj.norm_drift,
        "energy_drift": traj.energy_drift,
    }
    return traj.series("x2", provenance)


def ground_energy(
    quench: QuenchSpec,
    n_orbitals: int,
    truncation: str = "orbitals",
    coupling: str = "bare",
    cap: Optional[int] = DEFAULT_BASIS_CAP,
) -> Tuple[float, ManyBodyState]:
    """Pre-quench ground state in a truncation and coupling scheme."""
    space = ed_space(quench.n_particles, n_orbitals, quench.omega_pre, truncation, cap)
    g = scheme_interaction(quench, n_orbitals, truncation, coupling)
    return ground_state(build_hamiltonian(space.basis, quench.pre_quench(), g), space.basis, embedding=space.embedding)


def convergence_table(
    quench: QuenchSpec,
    orbital_counts: Sequence[int],
    with_frequency: bool = True,
    periods: float = DEFAULT_PERIODS,
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD,
    truncation: str = "orbitals",
    coupling: str = "bare",
) -> pd.DataFrame:
    """Ground energy and lowest-band frequency versus M.

    Columns: n_orbitals, dimension, ground_energy, frequency, sigma.
    """
    rows = []
    for m in orbital_counts:
        e0, state = ground_energy(quench, m, truncation, coupling)
        freq = sigma = float("nan")
        if with_frequency:
            series = simulate_quench(quench, m, periods, samples_per_period,
                                     truncation=truncation, coupling=coupling)
            estimate = lowest_band_frequency(extract_peaks(series), quench.omega_post)
            freq, sigma = estimate.frequency, estimate.sigma
        rows.append({"n_orbitals": m, "dimension": state.basis.size, "ground_energy": e0,
                     "frequency": freq, "sigma": sigma})
        logger.info(f"[ED] Convergence M={m}: E0={e0:.8f} frequency={freq:.5f}")
    return pd.DataFrame(rows, columns=["n_orbitals", "dimension", "ground_energy", "frequency", "sigma"])


def cm_breathing_amplitude(
    quench: QuenchSpec,
    n_orbitals: int,
    periods: float = 4,
    samples_per_period: int = 64,
    truncation: str = "orbitals",
    coupling: str = "bare",
) -> float:
    """Half peak-to-peak of <R^2>(t) with R = (1/N) sum_k x_k."""
    t = time_grid(quench.omega_post, periods, samples_per_period)
    _, traj = quench_trajectory(quench, n_orbitals, t, observables={"cm_x2": "cm_x2"},
                                truncation=truncation, coupling=coupling)
    signal = traj.extra["cm_x2"]
    return float(0.5 * (signal.max() - signal.min()))


@dataclass(frozen=True)
class CmMixingRow:
    g: float
    n_orbitals: int
    center: float
    drift: float
    resolution: float
    note: str = ""


@dataclass
class CmMixingReport:
    """Drift of the nominal CM line from 2 Omega_post versus M and g."""
    rows: List[CmMixingRow]
    omega_post: float

    @property
    def largest_m(self) -> int:
        return max(r.n_orbitals for r in self.rows) if self.rows else 0

    @property
    def passed(self) -> bool:
        final = [r for r in self.rows if r.n_orbitals == self.largest_m]
        return bool(final) and all(
            math.isfinite(r.drift) and abs(r.drift) < r.resolution for r in final
        )

    def drift(self, g: float, n_orbitals: int) -> float:
        for r in self.rows:
            if r.n_orbitals == n_orbitals and math.isclose(r.g, g):
                return r.drift
        raise KeyError((g, n_orbitals))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.__dict__ for r in self.rows],
                            columns=["g", "n_orbitals", "center", "drift", "resolution", "note"])

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"CM line drift at M={self.largest_m}: {status}"


def cm_mixing_diagnostic(
    quench: QuenchSpec,
    orbital_counts: Sequence[int],
    couplings: Optional[Sequence[float]] = None,
    periods: float = DEFAULT_PERIODS,
    samples_per_period: int = DEFAULT_SAMPLES_PER_PERIOD,
    truncation: str = "orbitals",
    coupling: str = "bare",
) -> CmMixingReport:
    """Fit the CM line of <R^2>(t) for every (g, M); drifts are in units of Omega_post.

    Numerical failures of individual points become rows with a note.
    """
    if quench.n_particles != 2:
        raise ValueError(f"CM mixing diagnostic is defined for two particles, got N={quench.n_particles}")
    omega = quench.omega_post
    t = time_grid(omega, periods, samples_per_period)
    rows = []
    for g in couplings if couplings is not None else [quench.g]:
        point = quench.with_(g=float(g))
        for m in orbital_counts:
            try:
                _, traj = quench_trajectory(point, m, t, observables={"cm_x2": "cm_x2"},
                                            truncation=truncation, coupling=coupling)
                peaks = extract_peaks(traj.series("cm_x2"))
                resolution = peaks.resolution / omega
                band = peaks.in_range(1.5 * omega, 2.5 * omega)
                if len(band) == 0:
                    rows.append(CmMixingRow(float(g), m, float("nan"), float("nan"), resolution,
                                            "no CM line in band"))
                    continue
                center = band.strongest()[0].center / omega
                rows.append(CmMixingRow(float(g), m, center, center - 2.0, resolution))
            except NumericalError as exc:
                rows.append(CmMixingRow(float(g), m, float("nan"), float("nan"), float("nan"), str(exc)))
            logger.info(f"[ED] CM line g={g} M={m}: {rows[-1].center:.5f} (drift {rows[-1].drift:+.5f})")
    report = CmMixingReport(rows, omega)
    logger.info(f"[ED] {report.summary()}")
    return report
