"""Acceptance suite.

Each criterion is a function returning a Verdict; the tests assert on it and print one
[PASS]/[FAIL] line.  Run ``python3 tests/test_acceptance.py`` (or ``pytest -s``) to see the
lines; every tolerance is pinned as a module constant below.
"""
import math
import sys
import time
from dataclasses import dataclass

import numpy as np
import pytest

from nilflow_lab import checks as chk
from nilflow_lab.cohomology import partial_sum_identity, solve, verify_coboundary
from nilflow_lab.config import ExperimentConfig, rng
from nilflow_lab.ergodic import (
    deviation_fit,
    ergodic_integral_direct,
    log_cost_bound,
    renormalized_integral,
    select_k,
    smooth_decomposition,
)
from nilflow_lab.heis import LatticeSpec, stable_generator
from nilflow_lab.io import fixture
from nilflow_lab.norms import anisotropic_norm, dual_pairing_bound, reconstruction_defect, smooth_family
from nilflow_lab.observables import Observable
from nilflow_lab.orbit import QuadratureSpec
from nilflow_lab.spectral import convergence_study, quantum_propagator, resonances_exact
from nilflow_lab.windows import bump

# pinned tolerances
ALGEBRA_TOL = 1e-12
ALGEBRA_CASES = 10_000
RENORM_TOL = 1e-9
RENORM_SAMPLES = 1000
RENORM_T = 10.0
UNITARY_TOL = 1e-12
BAND_RATIO_TOL = 1e-12
BAND0_MODULUS = 1.9318517
BAND0_TOL = 1e-6
DOUBLING_TOL = 0.01
SPECTRUM_MODULUS_TOL = 0.05
SPECTRUM_PHASE_TOL = 0.05
SPECTRUM_CUTOFFS = (20, 40)
SLOPE_RANGE = (0.40, 0.60)
R2_MIN = 0.9
CONSTANT_SLOPE_TOL = 0.01
COBOUNDARY_SLOPE_MAX = 0.05
TORAL_SLOPE_MAX = 0.2
RENORM_AGREEMENT = 1e-8
RENORM_T_VALUES = (10.0, 100.0, 1000.0)
RENORM_KMAX = 8
PARTITION_TOL = 1e-12
DECOMP_T_VALUES = (10.0, 100.0, 1000.0)
SUM_IDENTITY_TOL = 1e-8
SUM_IDENTITY_NMAX = 6
COB_SUP_TOL = 1e-3
COB_RESIDUAL_TOL = 1e-5
COB_RATIO_MAX = 0.95
COB_GRID = 16
COB_SAMPLES = 50
COB_TIMES = (0.1, 1.0, 10.0)
RECONSTRUCTION_TOL = 1e-6
NORM_MODES = tuple(range(1, 9))
PAIRING_SPREAD = 10.0

A = stable_generator(2, 1, 3, 2)
GOLDEN = stable_generator(2, 1, 1, 1)
BASE_POINTS = np.array([[0.1, 0.7, 0.3], [0.55, 0.2, 0.8], [0.9, 0.45, 0.05]])


@dataclass
class Verdict:
    label: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.label}: {self.detail} ({self.seconds:.1f} s)"


def timed(label):
    def wrap(fn):
        def run():
            t0 = time.perf_counter()
            ok, detail = fn()
            return Verdict(label, bool(ok), detail, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.label = label
        return run
    return wrap


@timed("C1 group and flow algebra")
def c1():
    res = chk.group_algebra(rng(0), ALGEBRA_CASES, ALGEBRA_TOL)
    worst = max(r.value for r in res)
    return all(r.passed for r in res), f"max defect {worst:.2e} < {ALGEBRA_TOL:g} over {ALGEBRA_CASES} cases each"


@timed("C2 renormalization identity")
def c2():
    r = chk.renormalization_identity(A, 1, rng(0), RENORM_SAMPLES, RENORM_T, RENORM_TOL)
    return r.passed, f"max quotient distance {r.value:.2e} < {RENORM_TOL:g}"


@timed("C3 lattice-preservation oracle")
def c3():
    res = chk.lattice_oracle()
    return all(r.passed for r in res), ", ".join(f"{r.name}: {r.detail}" for r in res)


@timed("C4 exact spectral oracle")
def c4():
    lam = A.lam
    worst_u = worst_ratio = worst_phase = 0.0
    counts_ok = True
    band0 = 0.0
    for D in range(1, 9):
        U = quantum_propagator(A, D)
        worst_u = max(worst_u, float(np.abs(U.conj().T @ U - np.eye(D)).max()))
        rs = resonances_exact(A, D, 1, kmax=3)
        counts_ok &= all(rs.count(k) == D for k in range(4))
        ref = np.sort(np.angle(rs.values(0)))
        for k in range(1, 4):
            worst_phase = max(worst_phase, float(np.abs(np.sort(np.angle(rs.values(k))) - ref).max()))
            ratio = abs(rs.values(k)[0]) / abs(rs.values(k - 1)[0])
            worst_ratio = max(worst_ratio, abs(ratio * lam - 1))
        band0 = max(band0, abs(abs(rs.values(0)[0]) - BAND0_MODULUS))
    ok = (worst_u <= UNITARY_TOL and counts_ok and worst_phase <= 1e-12 and worst_ratio <= BAND_RATIO_TOL
          and band0 <= BAND0_TOL)
    return ok, (f"unitarity {worst_u:.1e}, counts {'D per band' if counts_ok else 'wrong'}, "
                f"phase spread {worst_phase:.1e}, ratio defect {worst_ratio:.1e}, |band0 - {BAND0_MODULUS}| {band0:.1e}")


@timed("C5 numeric vs exact spectra")
def c5():
    parts, ok = [], True
    for D in (1, 2):
        st = convergence_study(A, D, 1, SPECTRUM_CUTOFFS, 8.0)
        cmp = st.comparison
        good = (st.changes[-1] < DOUBLING_TOL and cmp["count_numeric"] == D
                and cmp["max_modulus_rel"] <= SPECTRUM_MODULUS_TOL and cmp["max_phase"] <= SPECTRUM_PHASE_TOL)
        ok &= good
        parts.append(f"D={D}: doubling {st.changes[-1]:.2e}, count {cmp['count_numeric']}, "
                     f"modulus {cmp['max_modulus_rel']:.1e}, phase {cmp['max_phase']:.1e}")
    return ok, "; ".join(parts)


@timed("C6 deviation exponents")
def c6():
    cfg = ExperimentConfig()
    grid = np.geomspace(cfg.t_min, cfg.t_max, cfg.t_points)
    pts = rng(cfg.seed).uniform(0, 1, (cfg.ensemble, 3))
    theta = deviation_fit(fixture("theta_n1"), pts, grid, A)
    const = deviation_fit(Observable.constant(1.0), pts, grid, A, subtract_mean=False)
    cob = deviation_fit(fixture("coboundary_trig"), pts, grid, A)
    toral = deviation_fit(fixture("toral_n0"), pts, grid, A)
    ok = (SLOPE_RANGE[0] <= theta.slope <= SLOPE_RANGE[1] and theta.r_squared >= R2_MIN
          and abs(const.slope - 1) <= CONSTANT_SLOPE_TOL and cob.slope <= COBOUNDARY_SLOPE_MAX
          and toral.slope < TORAL_SLOPE_MAX)
    return ok, (f"N=1 slope {theta.slope:.3f} r2 {theta.r_squared:.3f}; constant {const.slope:.4f}; "
                f"coboundary {cob.slope:.3f}; toral {toral.slope:.3f}")


@timed("C7 logarithmic cost of renormalized evaluation")
def c7():
    h = fixture("theta_n1")
    x = BASE_POINTS[0]
    q = QuadratureSpec()
    worst_rel = 0.0
    cost = []
    for t in RENORM_T_VALUES:
        direct = ergodic_integral_direct(h, x, t, A, q, method="nodes").value
        for k in range(RENORM_KMAX + 1):
            r = renormalized_integral(h, x, t, k, A, q)
            worst_rel = max(worst_rel, abs(r.value - direct) / max(1.0, abs(direct)))
        kt = select_k(t, A.lam)
        cost.append((t, renormalized_integral(h, x, t, kt, A, q).evals, log_cost_bound(t, A.lam, q)))
    within = all(ev <= budget for _, ev, budget in cost)
    detail = ", ".join(f"t={t:g}: {ev} evals vs budget {b}" for t, ev, b in cost)
    return within and worst_rel <= RENORM_AGREEMENT, f"agreement {worst_rel:.1e}; {detail}"


@timed("C8 zooming partition")
def c8():
    res = chk.zoom_partition_checks(tol=PARTITION_TOL)
    sums = max(r.value for r in res if r.name.startswith("partition"))
    return all(r.passed for r in res), f"max |sum - 1| {sums:.1e}; {res[-1].detail}"


@timed("C9 smooth decomposition")
def c9():
    q = QuadratureSpec()
    ok, worst = True, []
    for name in ("theta_n1", "toral_n0"):
        h = fixture(name)
        bound = 2 * h.sup_norm() + 10 * q.tol
        for T in DECOMP_T_VALUES:
            dec = smooth_decomposition(h, BASE_POINTS[0], T, A, q)
            err = abs(dec.value - ergodic_integral_direct(h, BASE_POINTS[0], T, A, q).value)
            ok &= err <= bound
            worst.append(err / bound)
    return ok, f"max error / (2 sup|h| + 10 tol) = {max(worst):.3f}"


@timed("C10 partial sum identity")
def c10():
    worst = 0.0
    for name in ("theta_n1", "toral_n0", "coboundary_trig"):
        h = fixture(name)
        for x in BASE_POINTS:
            for n in range(SUM_IDENTITY_NMAX + 1):
                worst = max(worst, partial_sum_identity(h, x, n, A).defect)
    return worst <= SUM_IDENTITY_TOL, f"max defect {worst:.1e} <= {SUM_IDENTITY_TOL:g}"


@timed("C11 coboundary round trip")
def c11():
    h, g0 = fixture("coboundary_trig"), fixture("coboundary_g0")
    g = (np.arange(COB_GRID) + 0.5) / COB_GRID
    sites = np.stack(np.meshgrid(g, g, g, indexing="ij"), axis=-1).reshape(-1, 3)
    sol = solve(h, sites, A, kmax=14, tol=1e-10)
    d = sol.g_values - g0(sol.sites)
    sup = float(np.abs(d - d.mean()).max())
    pts = rng(1).uniform(0, 1, (COB_SAMPLES, 3))
    samples = [(p, COB_TIMES[i % 3]) for i, p in enumerate(pts)]
    resid = verify_coboundary(lambda P: solve(h, P, A, kmax=14, tol=1e-10).g_values, h, samples, A)
    obstruction = solve(fixture("obstruction_e2"), np.array([[0.3, 0.4, 0.1]]), GOLDEN, kmax=10, tol=1e-10)
    ok = (sol.verdict == "converged" and sup <= COB_SUP_TOL and resid <= COB_RESIDUAL_TOL
          and sol.ratio < COB_RATIO_MAX and obstruction.verdict == "diverged")
    return ok, (f"sup error {sup:.1e}, residual {resid:.1e}, ratio {sol.ratio:.3f}, "
                f"obstruction {obstruction.verdict} (ratio {obstruction.ratio:.3f})")


@timed("C12 norm machinery")
def c12():
    rec = reconstruction_defect(4)
    phi = bump(0.0, 1.0)
    norms, ratios = [], []
    for N in NORM_MODES:
        h = smooth_family(N)
        nr = anisotropic_norm(h, N, A)
        norms.append(nr.value)
        ratios.append(dual_pairing_bound(h, N, phi, A, grid=nr.grid).ratio)
    decreasing = all(b < a for a, b in zip(norms, norms[1:]))
    finite = all(math.isfinite(v) for v in norms)
    spread = max(ratios) / ratios[0]
    ok = rec <= RECONSTRUCTION_TOL and finite and decreasing and spread < PAIRING_SPREAD
    return ok, (f"reconstruction {rec:.1e}, norms {'finite, strictly decreasing' if finite and decreasing else 'bad'}, "
                f"max pairing ratio {spread:.2f} x first")


CRITERIA = [c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11, c12]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[c.__name__ for c in CRITERIA])
def test_criterion(criterion):
    v = criterion()
    print(v.line())
    assert v.passed, v.line()


def main() -> int:
    failed = 0
    for c in CRITERIA:
        v = c()
        print(v.line(), flush=True)
        failed += not v.passed
    print(f"{len(CRITERIA) - failed}/{len(CRITERIA)} criteria passed")
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
