import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilflow_lab.heis import HeisPoint, LatticeSpec, aut_arr, flow_arr, lattice_element, mul_arr, stable_generator
from nilflow_lab.observables import Observable, ThetaAtom, lagrange_reduce

A = stable_generator(2, 1, 3, 2)
ATOM = ThetaAtom((0.3, 0.6), ((1.0, 0.2), (0.2, 0.8)), 1 + 0.5j)
unit = st.floats(0, 1, exclude_max=True)
cell_point = st.tuples(unit, unit, unit).map(np.array)


def brute_force_theta(atom: ThetaAtom, D: int, g: np.ndarray, R: int = 9) -> complex:
    """sum over gamma_n of the Gaussian profile at gamma_n g, directly from the definition."""
    total = 0j
    c = np.array(atom.center)
    Q = np.array(atom.quad)
    for n1 in range(-R, R + 1):
        for n2 in range(-R, R + 1):
            gam = np.array([n1, n2, -0.5 * n1 * n2])
            x, y, z = mul_arr(gam, g)
            v = np.array([x, y]) - c
            total += atom.coeff * math.exp(-math.pi * v @ Q @ v) * np.exp(2j * math.pi * D * z)
    return complex(total)


@settings(max_examples=30, deadline=None)
@given(cell_point, st.integers(1, 3))
def test_theta_matches_brute_force_lattice_sum(g, N):
    h = Observable.theta(N, [ATOM])
    assert h(g) == pytest.approx(brute_force_theta(ATOM, N, g), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(cell_point, st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3))
def test_lattice_invariance_without_reduction(g, p, q, r):
    h = Observable.theta(1, [ATOM])
    gam = lattice_element(p, q, r, LatticeSpec(1)).as_array()
    moved = mul_arr(gam, g)
    assert h.eval(moved, reduce=False) == pytest.approx(h.eval(g, reduce=False), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(cell_point, st.floats(-1, 1))
def test_fibre_character(g, s):
    N = 2
    h = Observable.theta(N, [ATOM])
    shifted = g + np.array([0.0, 0.0, s])
    assert h(shifted) == pytest.approx(np.exp(2j * math.pi * N * s) * h(g), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(cell_point, st.integers(1, 3))
def test_transfer_is_pullback_times_lam(g, k):
    h = Observable.theta(1, [ATOM]) + Observable.trig({(1, 0): 0.5, (0, 1): 0.2j})
    Fk = h.transfer(A, k)
    expect = A.lam ** k * h(aut_arr(A.power(-k).astype(float), g))
    assert Fk(g) == pytest.approx(expect, rel=1e-9, abs=1e-9 * A.lam ** k)


def test_transfer_round_trip():
    h = Observable.theta(1, [ATOM])
    back = h.transfer(A, 3).transfer(A, -3)
    g = np.array([0.11, 0.72, 0.4])
    assert back(g) == pytest.approx(h(g), abs=1e-12)


def test_transfer_needs_lattice_preservation():
    golden = stable_generator(2, 1, 1, 1)
    with pytest.raises(ValueError):
        Observable.theta(1, [ATOM]).transfer(golden)
    # on the refined lattice it is fine
    Observable.theta(1, [ATOM], LatticeSpec(2)).transfer(golden)


@pytest.mark.parametrize("h", [
    Observable.theta(1, [ATOM]),
    Observable.trig({(1, 0): 0.7, (0, 1): -0.4j, (1, -2): 0.3 + 0.1j}),
    Observable.theta(2, [ThetaAtom((0.5, 0.5), ((2.0, 0.0), (0.0, 2.0)), 0.3)]),
])
def test_w_derivative_matches_finite_difference(h):
    Wh = h.w_derivative(A)
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, (20, 3))
    fd = h.wgrad(pts, A)
    assert np.allclose(Wh(pts), fd, atol=1e-7 * max(1.0, np.abs(fd).max()))


def test_wgrad_along_flow_is_derivative_of_orbit():
    h = Observable.trig({(2, 1): 1.0})
    g = np.array([0.2, 0.3, 0.0])
    d = 1e-5
    num = (h(flow_arr(g, d, A.W)) - h(flow_arr(g, -d, A.W))) / (2 * d)
    assert h.wgrad(HeisPoint(*g), A) == pytest.approx(num, rel=1e-6)


def test_means_and_constants():
    assert Observable.constant(2.5).mean() == 2.5
    assert Observable.theta(1, [ATOM]).mean() == 0
    assert Observable.trig({(0, 0): 1.0, (1, 0): 3.0}).mean() == 1.0
    assert Observable.zero().is_zero()


def test_algebra_is_pointwise():
    f = Observable.theta(1, [ATOM])
    g = Observable.trig({(1, 1): 2.0})
    pts = np.random.default_rng(0).uniform(0, 1, (10, 3))
    assert np.allclose((f + 2.0 * g)(pts), f(pts) + 2.0 * g(pts))
    assert np.allclose((f - f)(pts), 0.0)


def test_dict_round_trip():
    h = Observable.theta(1, [ATOM, ThetaAtom((0.1, 0.1), ((1.5, 0.0), (0.0, 1.5)), 0.2, (0.1, 0.3j))])
    h = h + Observable.trig({(1, 2): 0.5j})
    back = Observable.from_dict(h.to_dict())
    pts = np.random.default_rng(1).uniform(0, 1, (8, 3))
    assert np.allclose(back(pts), h(pts))


def test_atom_validation():
    with pytest.raises(ValueError):
        ThetaAtom((0.0, 0.0), ((1.0, 0.5), (0.0, 1.0)))
    with pytest.raises(ValueError):
        ThetaAtom((0.0, 0.0), ((-1.0, 0.0), (0.0, 1.0)))
    with pytest.raises(ValueError):
        ThetaAtom((0.0, 0.0), ((1.0, 0.0), (0.0, 1.0)), frame=((2, 0), (0, 1)))


def test_tail_bound_is_tiny_for_default_radius():
    assert Observable.theta(1, [ATOM]).tail_bound() < 1e-20


@given(st.floats(0.2, 5), st.floats(-3, 3), st.floats(0.2, 5))
def test_lagrange_reduction_preserves_form(a, b, c):
    Q = np.array([[a, b], [b, c]])
    if np.linalg.det(Q) <= 1e-3:
        return
    U, Qr = lagrange_reduce(Q)
    assert round(abs(np.linalg.det(U))) == 1
    assert np.allclose(U.T @ Q @ U, Qr)
    assert abs(2 * Qr[0, 1]) <= Qr[0, 0] + 1e-9 <= Qr[1, 1] + 2e-9
