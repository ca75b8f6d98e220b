import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from src.data_models import HOBasisSpec, QuenchSpec
from src.errors import OrbitalIndexError
from src.trap_model import (
    HO_MAX_INDEX,
    contact_table,
    contact_tensor,
    gauss_hermite_integral,
    ho_orbital_eval,
    ho_orbital_table,
    one_body_hamiltonian_matrix,
    time_grid,
    uniform_spacing,
    x2_matrix,
    x2_matrix_element,
    x_matrix,
    x_matrix_element,
)


@given(st.integers(0, 25), st.integers(0, 25), st.floats(0.2, 3.0))
def test_orbitals_are_orthonormal(n, m, omega):
    value = gauss_hermite_integral([n, m], omega)
    assert value == pytest.approx(1.0 if n == m else 0.0, abs=1e-10)


def test_ground_orbital_closed_form():
    x = np.linspace(-3, 3, 13)
    expected = math.pi ** -0.25 * np.exp(-0.5 * x ** 2)
    assert np.allclose(ho_orbital_eval(0, x), expected)
    assert isinstance(ho_orbital_eval(2, 0.3), float)


def test_orbital_table_matches_single_evaluation():
    x = np.linspace(-4, 4, 9)
    table = ho_orbital_table(6, x, 0.7)
    for n in range(7):
        assert np.allclose(table[n], ho_orbital_eval(n, x, 0.7))


def test_orbital_parity():
    x = np.linspace(0.1, 3, 7)
    for n in range(8):
        assert np.allclose(ho_orbital_eval(n, -x), (-1) ** n * ho_orbital_eval(n, x))


def test_orbital_index_above_bound_rejected():
    with pytest.raises(OrbitalIndexError):
        ho_orbital_eval(HO_MAX_INDEX + 1, 0.0)
    with pytest.raises(ValueError):
        ho_orbital_eval(-1, 0.0)


def test_x2_elements():
    assert x2_matrix_element(0, 0) == pytest.approx(0.5)
    assert x2_matrix_element(3, 3, 2.0) == pytest.approx(7 / 4)
    assert x2_matrix_element(0, 2) == pytest.approx(math.sqrt(2) / 2)
    assert x2_matrix_element(2, 0) == x2_matrix_element(0, 2)
    assert x2_matrix_element(0, 4) == 0.0
    assert x_matrix_element(1, 0) == pytest.approx(math.sqrt(0.5))
    assert x_matrix_element(2, 0) == 0.0


def test_x_matrix_squares_to_x2_away_from_the_cutoff():
    x = x_matrix(8, 1.5)
    assert np.allclose(x, x.T)
    assert np.allclose((x @ x)[:7, :7], x2_matrix(8, 1.5)[:7, :7], atol=1e-13)


@given(st.integers(0, 12), st.integers(0, 12))
def test_x2_elements_match_quadrature(n, m):
    x, w = np.polynomial.hermite.hermgauss(40)
    table = ho_orbital_table(max(n, m), x)
    value = np.sum(w * np.exp(x * x) * table[n] * table[m] * x * x)
    assert x2_matrix_element(n, m) == pytest.approx(value, abs=1e-10)


def test_contact_tensor_ground_value_and_scaling():
    assert contact_tensor(0, 0, 0, 0) == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert contact_tensor(0, 0, 0, 0, 4.0) == pytest.approx(2 / math.sqrt(2 * math.pi))
    assert contact_tensor(0, 0, 0, 1) == 0.0


@given(st.permutations([0, 1, 2, 3]))
def test_contact_tensor_symmetric(perm):
    idx = [2, 1, 3, 4]
    permuted = [idx[p] for p in perm]
    assert contact_tensor(*permuted) == pytest.approx(contact_tensor(*idx))


def test_contact_table_matches_tensor_and_is_frozen():
    table = contact_table(6)
    for a, b, c, d in [(0, 0, 0, 0), (1, 1, 0, 0), (2, 3, 5, 0), (5, 5, 5, 5), (1, 2, 3, 4)]:
        assert table[a, b, c, d] == pytest.approx(contact_tensor(a, b, c, d), abs=1e-12)
    assert table[0, 0, 0, 1] == 0.0
    with pytest.raises(ValueError):
        table[0, 0, 0, 0] = 1.0
    assert contact_table(6) is table


def test_one_body_hamiltonian_diagonal_without_quench():
    h = one_body_hamiltonian_matrix(HOBasisSpec(5), QuenchSpec(omega_post=1.0))
    assert np.allclose(h, np.diag(np.arange(5) + 0.5))


def test_one_body_hamiltonian_quenched_trap():
    omega = math.sqrt(0.9)
    h = one_body_hamiltonian_matrix(HOBasisSpec(30), QuenchSpec(omega_post=omega))
    assert np.allclose(h, h.T)
    assert h[0, 2] == pytest.approx(0.5 * (0.9 - 1.0) * math.sqrt(2) / 2)
    levels = np.linalg.eigvalsh(h)
    assert levels[:4] == pytest.approx((np.arange(4) + 0.5) * omega, abs=1e-8)


def test_x2_matrix_shape():
    m = x2_matrix(4)
    assert m.shape == (4, 4)
    assert np.allclose(m, m.T)


@given(st.integers(0, 5), st.floats(0.3, 3.0))
def test_x2_rows_square_to_x4(n, omega):
    # sum_m <n|x^2|m>^2 = <n|x^4|n> once the row is complete
    row = x2_matrix(n + 3, omega)[n]
    assert row @ row == pytest.approx(3 * (2 * n * n + 2 * n + 1) / (4 * omega ** 2), rel=1e-12)
    assert x2_matrix(3, omega)[0] @ x2_matrix(3, omega)[0] == pytest.approx(3 / (4 * omega ** 2), rel=1e-12)


def test_time_grid_and_spacing():
    t = time_grid(2.0, 3, 8)
    assert t.size == 24
    t0, dt = uniform_spacing(t)
    assert t0 == 0.0
    assert dt == pytest.approx(math.pi / 8)
    with pytest.raises(ValueError):
        uniform_spacing(np.array([0.0, 1.0, 3.0]))
    with pytest.raises(ValueError):
        time_grid(1.0, 1, 1)
