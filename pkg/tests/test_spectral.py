import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from nilflow_lab.heis import stable_generator
from nilflow_lab.spectral import (
    ResolutionError,
    SpectralError,
    band_comparison,
    band_radius,
    build_basis,
    cell_grid,
    classify_band,
    doubling_change,
    escape_weight,
    hermite_functions,
    quantum_propagator,
    required_grid,
    resonances_exact,
    resonances_numeric,
    spectral_decomposition,
    transfer_matrix,
)

A = stable_generator(2, 1, 3, 2)
LAM = 2 + math.sqrt(3)
BAND0 = 1.9318516525781366  # lam^(1/2)


def test_hermite_functions_orthonormal():
    for i in range(6):
        for j in range(i, 6):
            val = quad(lambda s: float(hermite_functions(j, s)[i] * hermite_functions(j, s)[j]), -30, 30,
                       epsabs=1e-13, limit=400)[0]
            assert val == pytest.approx(float(i == j), abs=1e-10)


def test_hermite_ground_state():
    s = np.linspace(-3, 3, 7)
    assert np.allclose(hermite_functions(0, s)[0], math.pi ** -0.25 * np.exp(-s * s / 2))


@pytest.mark.parametrize("D", range(1, 9))
def test_propagator_unitary(D):
    U = quantum_propagator(A, D)
    assert np.abs(U.conj().T @ U - np.eye(D)).max() <= 1e-12


def test_propagator_frozen_values():
    assert quantum_propagator(A, 1)[0, 0] == pytest.approx(np.exp(-1j * math.pi / 4), abs=1e-14)
    U2 = (2j) ** -0.5 * np.array([[1, -1], [-1, -1]])
    assert np.allclose(quantum_propagator(A, 2), U2, atol=1e-14)


def test_propagator_rejects_parity_violation():
    with pytest.raises(SpectralError):
        quantum_propagator(stable_generator(2, 1, 1, 1), 1)


@pytest.mark.parametrize("N,E", [(1, 1), (2, 1), (3, 1), (1, 2), (-2, 1)])
def test_exact_resonances_structure(N, E):
    rs = resonances_exact(A, N, E, kmax=3)
    D = abs(N) * E
    for k in range(4):
        assert rs.count(k) == D
        assert np.allclose(np.abs(rs.values(k)), band_radius(LAM, k), rtol=1e-12)
    ph0 = np.sort(np.angle(rs.values(0)))
    ph2 = np.sort(np.angle(rs.values(2)))
    assert np.allclose(ph0, ph2, atol=1e-12)
    assert rs.spectral_radius == pytest.approx(BAND0, abs=1e-6)


def test_exact_phases_frozen():
    assert np.angle(resonances_exact(A, 1).values(0)) == pytest.approx([-math.pi / 4], abs=1e-12)
    ph = np.sort(np.angle(resonances_exact(A, 2).values(0)))
    assert ph == pytest.approx([-math.pi / 4, 3 * math.pi / 4], abs=1e-12)


def test_exact_rejects_zero_mode():
    with pytest.raises(SpectralError):
        resonances_exact(A, 0)


@given(st.integers(0, 10), st.floats(-0.1, 0.1), st.floats(-math.pi, math.pi))
def test_classify_band_on_radii(k, rel, phase):
    z = band_radius(LAM, k) * (1 + rel) * complex(math.cos(phase), math.sin(phase))
    assert classify_band(z, LAM, 0.15) == k


def test_classify_band_between_radii():
    assert classify_band(math.sqrt(band_radius(LAM, 0) * band_radius(LAM, 1)), LAM, 0.15) is None
    assert classify_band(0.0, LAM, 0.15) is None


def test_escape_weight_shape():
    assert escape_weight(8.0, 1, 0.0, 0.0) == 1.0
    assert escape_weight(8.0, 1, 10.0, 0.0) < 1e-10
    assert escape_weight(8.0, 1, 0.0, 10.0) > 1e10
    with pytest.raises(SpectralError):
        escape_weight(1.0, 1, 0.0, 0.0)


@pytest.mark.parametrize("D", [1, 2, 3])
def test_sections_orthonormal_and_quasi_periodic(D):
    basis = build_basis(D, 2)
    X, Y = cell_grid(64)
    b = basis.evaluate(X, Y).reshape(basis.size, -1)
    G = b.conj() @ b.T / X.size
    assert np.abs(G - np.eye(basis.size)).max() < 1e-10
    rng = np.random.default_rng(D)
    assert basis.quasi_periodicity_defect(rng.uniform(-2, 2, 30), rng.uniform(-2, 2, 30)) < 1e-10


def test_basis_validation():
    with pytest.raises(SpectralError):
        build_basis(0, 3)
    with pytest.raises(SpectralError):
        build_basis(1, 0)
    assert build_basis(2, 3).size == 14


# truncated transfer matrix

@pytest.fixture(scope="module")
def small_matrix():
    return transfer_matrix(A, 1, 1, build_basis(1, 12), 8.0)


def test_numeric_band0_close_to_exact(small_matrix):
    numeric = resonances_numeric(small_matrix)
    cmp = band_comparison(resonances_exact(A, 1), numeric)
    assert cmp["count_numeric"] == 1
    assert cmp["max_modulus_rel"] < 0.05
    assert cmp["max_phase"] < 0.05
    assert numeric.spectral_radius == pytest.approx(BAND0, rel=0.05)


def test_transfer_matrix_argument_checks():
    with pytest.raises(SpectralError):
        transfer_matrix(A, 0, 1, build_basis(1, 3))
    with pytest.raises(SpectralError):
        transfer_matrix(A, 1, 1, build_basis(2, 3))
    with pytest.raises(SpectralError):
        transfer_matrix(stable_generator(2, 1, 1, 1), 1, 1, build_basis(1, 3))
    basis = build_basis(1, 4)
    need = required_grid(A, basis, 8)
    coarse = type(need)(need.Gx // 2, need.Gy, need.s_max, need.s_points)
    with pytest.raises(ResolutionError):
        transfer_matrix(A, 1, 1, basis, 8.0, grid=coarse)


def test_doubling_change():
    rs = resonances_exact(A, 2)
    assert doubling_change(rs, rs) == 0.0
    assert doubling_change(resonances_exact(A, 1), rs) == math.inf


# spectral decomposition

def test_decomposition_of_small_matrix(small_matrix):
    dec = spectral_decomposition(small_matrix, 0.3)
    assert dec.identity_defect() < 1e-10
    assert dec.commutation_defect() < 1e-8
    assert abs(dec.eigenvalues[0]) == pytest.approx(BAND0, rel=0.05)


def test_decomposition_detects_jordan_block():
    M = np.diag([2.0, 2.0, 0.5, 0.05]).astype(complex)
    M[0, 1] = 1.0
    dec = spectral_decomposition(M, 0.1)
    assert dec.degrees == [1, 0]
    assert dec.eigenvalues[0] == pytest.approx(2.0)
    assert dec.identity_defect() < 1e-12
    assert dec.commutation_defect() < 1e-12
    assert dec.remainder_constant() == pytest.approx(1.0, abs=1e-9)


def test_decomposition_rejects_eta_on_spectrum():
    with pytest.raises(SpectralError):
        spectral_decomposition(np.diag([1.0, 0.5]), 0.5)
    with pytest.raises(SpectralError):
        spectral_decomposition(np.eye(2), 0.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_projectors_sum_to_identity_for_random_matrices(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    mods = np.abs(np.linalg.eigvals(M))
    eta = float(np.median(mods))
    if np.min(np.abs(mods - eta)) < 1e-3:
        eta *= 1.01
    try:
        dec = spectral_decomposition(M, eta)
    except SpectralError:
        return
    assert dec.identity_defect() < 1e-9
    assert dec.commutation_defect() < 1e-6 * max(1.0, np.linalg.norm(M, 2))
