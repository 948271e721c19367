import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nilflow_lab.ergodic import (
    ZoomPartition,
    decomposition_levels,
    deviation_fit,
    deviation_functional,
    ergodic_integral_direct,
    iterate_aut,
    log_cost_bound,
    loglog_fit,
    renormalized_integral,
    renormalized_smoothed,
    select_k,
    smooth_decomposition,
    smoothed_integral,
)
from nilflow_lab.heis import quotient_distance_arr, stable_generator
from nilflow_lab.io import fixture
from nilflow_lab.observables import Observable
from nilflow_lab.orbit import QuadratureSpec
from nilflow_lab.spectral import build_basis, spectral_decomposition, transfer_matrix
from nilflow_lab.windows import bump

A = stable_generator(2, 1, 3, 2)
LAM = 2 + math.sqrt(3)
X0 = np.array([0.1, 0.7, 0.3])


# renormalisation

@pytest.mark.parametrize("t,k", [(5.0, 0), (20.0, 1), (50.0, 2), (300.0, 3), (1000.0, 5)])
def test_renormalized_matches_direct(t, k):
    h = fixture("theta_n1")
    direct = ergodic_integral_direct(h, X0, t, A).value
    ren = renormalized_integral(h, X0, t, k, A).value
    assert abs(ren - direct) <= 1e-8 * max(1.0, abs(direct))


def test_renormalized_smoothed_two_sided():
    h = fixture("theta_n1") + fixture("toral_n0")
    phi = bump(2.0, 40.0)
    a = smoothed_integral(h, X0, phi, A).value
    b = renormalized_smoothed(h, X0, phi, 2, A).value
    assert b == pytest.approx(a, abs=1e-8 * max(1.0, abs(a)))
    assert renormalized_smoothed(h, X0, phi, 0, A).value == pytest.approx(
        smoothed_integral(h, X0, phi, A, method="terms").value, abs=1e-13)


def test_renormalization_is_linear():
    f, g = fixture("theta_n1"), fixture("toral_n0")
    a = renormalized_integral(f + 2.0 * g, X0, 30.0, 2, A).value
    b = renormalized_integral(f, X0, 30.0, 2, A).value + 2 * renormalized_integral(g, X0, 30.0, 2, A).value
    assert a == pytest.approx(b, abs=1e-12)


@given(st.floats(0.01, 1e8))
def test_select_k(t):
    k = select_k(t, LAM)
    assert k >= 0
    assert t * LAM ** (-k) < LAM * (1 + 1e-12)
    if k > 0:
        assert t * LAM ** (-(k - 1)) >= LAM * (1 - 1e-12)


def test_iterate_aut_inverts():
    y = iterate_aut(A, X0, 7)
    back = iterate_aut(A, y, -7)
    assert quotient_distance_arr(back, X0, 1) < 1e-9


def test_log_cost_budget_grows_logarithmically():
    ratios = [log_cost_bound(t, LAM) / math.log(t) for t in (1e2, 1e4, 1e8, 1e16)]
    assert max(ratios) < 1.5 * min(ratios)


def test_direct_integral_edge_cases():
    h = fixture("theta_n1")
    assert ergodic_integral_direct(h, X0, 0.0, A).value == 0
    with pytest.raises(ValueError):
        ergodic_integral_direct(h, X0, -1.0, A)
    with pytest.raises(ValueError):
        renormalized_integral(h, X0, 1.0, -1, A)


# zooming partition

@pytest.mark.parametrize("T,n", [(64.0, 3), (1e3, 4), (1e6, 9)])
def test_partition_of_unity(T, n):
    part = ZoomPartition(T, n)
    t = np.linspace(0, T, 10_000)
    assert np.abs(part.total(t) - 1.0).max() < 1e-12
    for k in range(-n, n + 1):
        lo, hi = part.support(k)
        assert hi - lo <= 4.0 ** (-abs(k)) * T * (1 + 1e-12)
        outside = (t < lo - 1e-9 * T) | (t > hi + 1e-9 * T)
        assert np.all(part.phi(k, t[outside]) == 0)
        assert np.all(part.phi(k, t) >= -1e-15)


def test_centre_piece_support():
    part = ZoomPartition(800.0, 3)
    assert part.support(0) == pytest.approx((100.0, 700.0))


def test_scaled_norms_independent_of_T():
    norms = [max(ZoomPartition(T, n).scaled_cq_norm(k, 2) for k in range(-n, n + 1))
             for T, n in [(64.0, 3), (1e4, 5)]]
    assert norms[0] == pytest.approx(norms[1], rel=0.05)


def test_partition_rejects_bad_input():
    with pytest.raises(ValueError):
        ZoomPartition(-1.0, 3)
    with pytest.raises(ValueError):
        ZoomPartition(10.0, 0)
    with pytest.raises(ValueError):
        ZoomPartition(10.0, 2).phi(3, 1.0)


# smooth decomposition

def test_decomposition_levels():
    N, m = decomposition_levels(1000.0, LAM)
    assert N == 4
    assert m[0] == 5 and m[2] == 3 and m[-2] == 3


@pytest.mark.parametrize("T", [10.0, 100.0, 1000.0])
@pytest.mark.parametrize("name", ["theta_n1", "toral_n0"])
def test_smooth_decomposition_bound(T, name):
    h = fixture(name)
    q = QuadratureSpec()
    dec = smooth_decomposition(h, X0, T, A, q)
    direct = ergodic_integral_direct(h, X0, T, A, q, method="terms").value
    assert abs(dec.value - direct) <= dec.boundary_bound + 10 * q.tol
    assert abs(dec.value + dec.remainder - direct) < 1e-8 * max(1.0, abs(direct))
    assert abs(dec.value - direct) <= dec.boundary_bound_strict + 10 * q.tol
    assert len(dec.pieces) == 2 * dec.N - 1


def test_smooth_decomposition_needs_long_orbit():
    with pytest.raises(ValueError):
        smooth_decomposition(fixture("theta_n1"), X0, 3.0, A)


# deviation fits

def test_loglog_fit_recovers_power():
    t = np.geomspace(1, 1e4, 12)
    slope, icpt, r2 = loglog_fit(t, 3 * t ** 0.37)
    assert slope == pytest.approx(0.37, abs=1e-12)
    assert icpt == pytest.approx(math.log(3), abs=1e-12)
    assert r2 == pytest.approx(1.0)


def test_constant_observable_has_slope_one():
    fit = deviation_fit(Observable.constant(1.0), X0, np.geomspace(10, 1e5, 13), A, subtract_mean=False)
    assert fit.slope == pytest.approx(1.0, abs=0.01)


def test_coboundary_has_bounded_integrals():
    pts = np.random.default_rng(0).uniform(0, 1, (16, 3))
    fit = deviation_fit(fixture("coboundary_trig"), pts, np.geomspace(10, 1e5, 49), A)
    assert fit.slope <= 0.05


def test_fit_rejects_short_grids():
    with pytest.raises(ValueError):
        deviation_fit(fixture("theta_n1"), X0, [10, 100, 1000], A)


def test_fit_rows_and_summary():
    fit = deviation_fit(fixture("toral_n0"), X0, np.geomspace(10, 1e3, 8), A)
    rows = list(fit.csv_rows())
    assert len(rows) == 8 and set(rows[0]) == {"t", "H_re", "H_im", "H_abs", "k_used", "evals"}
    assert set(fit.summary()) == {"slope", "intercept", "r2", "t_min", "t_max"}


# deviation functionals

@pytest.fixture(scope="module")
def decomposition():
    basis = build_basis(1, 12)
    M = transfer_matrix(A, 1, 1, basis, 8.0)
    return spectral_decomposition(M, 0.3)


def test_functional_vanishes_on_kernel(decomposition):
    dec = decomposition
    rng = np.random.default_rng(2)
    v = rng.normal(size=dec.P0.shape[0]) + 1j * rng.normal(size=dec.P0.shape[0])
    v_ker = v - dec.projectors[0] @ v
    val = deviation_functional(v_ker, X0, 100.0, 0, dec)
    ref = deviation_functional(dec.projectors[0] @ v, X0, 100.0, 0, dec)
    assert abs(val) <= 1e-8 * max(1.0, abs(ref))


def test_functional_is_linear(decomposition):
    dec = decomposition
    n = dec.P0.shape[0]
    rng = np.random.default_rng(5)
    u, w = rng.normal(size=n), rng.normal(size=n)
    a = deviation_functional(u + 2j * w, X0, 50.0, 0, dec)
    b = deviation_functional(u, X0, 50.0, 0, dec) + 2j * deviation_functional(w, X0, 50.0, 0, dec)
    assert a == pytest.approx(b, abs=1e-10 * max(1.0, abs(a)))


def test_functional_bounded_for_leading_cluster(decomposition):
    dec = decomposition
    v = dec.projectors[0] @ np.ones(dec.P0.shape[0])
    vals = [abs(deviation_functional(v, X0, t, 0, dec)) for t in (10.0, 100.0, 1000.0, 1e4)]
    assert max(vals) / min(vals) < 50


def test_functional_input_checks(decomposition):
    dec = decomposition
    with pytest.raises(ValueError):
        deviation_functional(np.ones(3), X0, 10.0, 0, dec)
    with pytest.raises(ValueError):
        deviation_functional(np.ones(dec.P0.shape[0]), X0, 2.0, 0, dec)
    with pytest.raises(ValueError):
        deviation_functional(np.ones(dec.P0.shape[0]), X0, 10.0, 99, dec)
