"""Series solution of the cohomological equation g(Psi_t x) - g(x) = int_0^t h(Psi_r x) dr.

With a cutoff chi (1 on [0, 1/2], 0 on [1, inf)) and phi(t) = chi(t / lam) - chi(t),

    G~h(x)  = int chi(s) h(Psi_s x) ds,
    Kh(x)   = int phi(s) h(Psi_s x) ds,
    G_k h(x) = (K F^k h)(F^k x) = int phi(lam^-k u) h(Psi_u x) du,

the dilated cutoffs telescope:  int chi(lam^-n t) h(Psi_t x) dt = G~h(x) + sum_{k<n} G_k h(x).
When the series converges, g = -G~h - sum_k G_k h solves the equation up to an additive constant.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ergodic import ergodic_integral_direct, iterate_aut
from .heis import Automorphism, HeisPoint, ReducedPoint, flow_reduce_arr, reduce_arr
from .observables import Observable
from .orbit import QuadratureSpec, fourier_frequency, integrate, window_fourier
from .windows import Cutoff, FunctionWindow, ScaledWindow

MEAN_TOL = 1e-12
TAIL_RUN = 3          # consecutive small terms needed to stop
GROWTH_RUN = 5        # consecutive increases that signal divergence
GROWTH_FROM = 5       # increases are only counted from this k on
RATIO_MAX = 0.95      # fitted geometric ratio required for convergence

__all__ = [
    "BumpPair", "CoboundarySolution", "PartialSumCheck", "K_op", "G_tilde", "G_k", "G_k_unfolded",
    "partial_sum_identity", "solve", "verify_coboundary", "geometric_ratio", "classify",
]


@dataclass(frozen=True)
class BumpPair:
    """The cutoff chi and the bump phi(t) = chi(t / lam) - chi(t), supported in (1/2, lam)."""
    lam: float
    chi: Cutoff = field(default_factory=Cutoff)

    def __post_init__(self):
        if not self.lam >= 2.0:
            # phi = 1 on [1, lam/2] needs lam >= 2, which every hyperbolic A in SL(2, Z) satisfies
            raise ValueError(f"lam must be >= 2, got {self.lam!r}")

    @classmethod
    def for_automorphism(cls, A: Automorphism) -> "BumpPair":
        return cls(A.lam)

    def phi(self, t):
        t = np.asarray(t, dtype=float)
        return self.chi(t / self.lam) - self.chi(t)

    @property
    def chi_window(self) -> FunctionWindow:
        return self.chi.window(1.0)

    @property
    def phi_window(self) -> FunctionWindow:
        return FunctionWindow(self.phi, 0.5, self.lam, 1.0 / 16, (1.0, self.lam / 2))

    def phi_dilated(self, k: int) -> ScaledWindow:
        """u -> phi(lam^-k u), supported in (lam^k / 2, lam^(k+1))."""
        return ScaledWindow(self.phi_window, self.lam ** (-k))

    def mass_chi(self, q: QuadratureSpec = QuadratureSpec()) -> float:
        return window_fourier(self.chi_window, 0.0, q)[0].real

    def mass_phi(self, q: QuadratureSpec = QuadratureSpec()) -> float:
        return window_fourier(self.phi_window, 0.0, q)[0].real


def _arr(x) -> np.ndarray:
    return x.as_array() if isinstance(x, HeisPoint) else np.asarray(x, dtype=float)


def _bp(bp: BumpPair | None, A: Automorphism) -> BumpPair:
    return BumpPair.for_automorphism(A) if bp is None else bp


def K_op(h: Observable, x, A: Automorphism, bp: BumpPair | None = None,
         q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> complex:
    """(Kh)(x) = int phi(s) h(Psi_s x) ds."""
    return integrate(h, _arr(x), _bp(bp, A).phi_window, A, q, method).value


def G_tilde(h: Observable, x, A: Automorphism, bp: BumpPair | None = None,
            q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> complex:
    """G~h(x) = int chi(s) h(Psi_s x) ds over s >= 0."""
    return integrate(h, _arr(x), _bp(bp, A).chi_window, A, q, method).value


def G_k(h: Observable, A: Automorphism, k: int, x, bp: BumpPair | None = None,
        q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> complex:
    """(G_k h)(x) = (K F^k h)(F^k x), evaluated on the transferred observable."""
    if k < 0:
        raise ValueError("k must be >= 0")
    hk = h.transfer(A, k)
    xk = iterate_aut(A, _arr(x), k, h.E)
    return K_op(hk, xk, A, bp, q, method)


def G_k_unfolded(h: Observable, A: Automorphism, k: int, x, bp: BumpPair | None = None,
                 q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> complex:
    """The same quantity as G_k written on the original orbit: int phi(lam^-k u) h(Psi_u x) du."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return integrate(h, _arr(x), _bp(bp, A).phi_dilated(k), A, q, method).value


@dataclass(frozen=True)
class PartialSumCheck:
    lhs: complex
    rhs: complex
    defect: float


def partial_sum_identity(h: Observable, x, n: int, A: Automorphism, bp: BumpPair | None = None,
                         q: QuadratureSpec = QuadratureSpec(), lhs_method: str = "terms") -> PartialSumCheck:
    """Both sides of int chi(lam^-n t) h(Psi_t x) dt = G~h(x) + sum_{k<n} G_k h(x).

    The left side is one long orbit integral of h; the right side uses transferred observables
    on short windows.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    bp = _bp(bp, A)
    x = _arr(x)
    lhs = integrate(h, x, bp.chi.window(A.lam ** n), A, q, lhs_method).value
    rhs = G_tilde(h, x, A, bp, q) + sum(G_k(h, A, k, x, bp, q) for k in range(n))
    return PartialSumCheck(lhs, rhs, abs(lhs - rhs))


# ---------------------------------------------------------------- solver

@dataclass
class CoboundarySolution:
    sites: np.ndarray                 # (P, 3) reduced sample sites
    g_values: np.ndarray              # complex (P,)
    term_history: list[float]         # sup over sites of |G_k h|, k = 0, 1, ...
    verdict: str
    kmax_used: int
    ratio: float
    residual_max: float | None = None

    @property
    def grid(self) -> list[ReducedPoint]:
        _, wit = reduce_arr(self.sites)
        return [ReducedPoint(HeisPoint.from_array(s), tuple(int(v) for v in w))
                for s, w in zip(self.sites, wit)]

    def csv_rows(self) -> list[tuple]:
        return [(float(s[0]), float(s[1]), float(s[2]), float(g.real), float(g.imag))
                for s, g in zip(self.sites, self.g_values)]

    def diagnostics(self) -> dict:
        return {
            "terms": [float(t) for t in self.term_history],
            "verdict": self.verdict,
            "ratio": float(self.ratio),
            "kmax_used": int(self.kmax_used),
            "residual_max": None if self.residual_max is None else float(self.residual_max),
        }


def geometric_ratio(terms) -> float:
    """exp of the least-squares slope of log|term| against k over the numerically nonzero terms."""
    t = np.asarray(terms, dtype=float)
    if len(t) == 0 or t.max() <= 0:
        return 0.0
    k = np.nonzero(t > 1e-15 * t.max())[0]
    if len(k) < 2:
        return 0.0
    slope = np.polyfit(k.astype(float), np.log(t[k]), 1)[0]
    return float(math.exp(slope))


def _growth_run(terms) -> bool:
    run = 0
    for k in range(GROWTH_FROM + 1, len(terms)):
        run = run + 1 if terms[k] > terms[k - 1] else 0
        if run >= GROWTH_RUN:
            return True
    return False


def _tail_met(terms, tol: float) -> bool:
    return len(terms) >= TAIL_RUN and all(t < tol for t in terms[-TAIL_RUN:])


def classify(terms, tol: float) -> tuple[str, float]:
    """Verdict and fitted ratio for a sequence of sup-site term magnitudes."""
    ratio = geometric_ratio(terms)
    if _tail_met(terms, tol) and ratio < RATIO_MAX:
        return "converged", ratio
    if _growth_run(terms):
        return "diverged", ratio
    return "inconclusive", ratio


def _site_terms(args) -> tuple[complex, list[complex]]:
    """G~h and the G_k h of modes with N != 0 at one site, for k = 0 .. kmax."""
    h, x, A, bp, q, kmax = args
    gt = G_tilde(h, x, A, bp, q)
    return gt, [G_k(h, A, k, x, bp, q) for k in range(kmax + 1)]


def cutoff_derivative_fourier(bp: BumpPair, xi: float, q: QuadratureSpec = QuadratureSpec(),
                              chunk: int = 1 << 16) -> complex:
    """J(xi) = int chi'(s) exp(i xi s) ds over [1/2, 1], by panels resolving the phase."""
    glx, glw = np.polynomial.legendre.leggauss(q.order)
    hp = min(q.panel, 1.0 / 16, 4.0 / abs(xi) if xi != 0 else math.inf)
    npan = max(1, int(math.ceil(0.5 / hp)))
    width = 0.5 / npan
    total = 0j
    for s in range(0, npan, chunk):
        mid = 0.5 + width * (np.arange(s, min(npan, s + chunk)) + 0.5)
        u = (mid[:, None] + 0.5 * width * glx[None, :]).ravel()
        w = np.tile(0.5 * width * glw, len(mid))
        total += complex(np.sum(w * bp.chi.derivative(u) * np.exp(1j * xi * u)))
    return total


class _FourierSeries:
    """Vectorised G~ and G_k for the N = 0 part: a site phase times a site-independent integral."""

    def __init__(self, h: Observable, A: Automorphism, bp: BumpPair, q: QuadratureSpec, sites: np.ndarray):
        m = h.mode(0)
        self.coeffs = [] if m is None else [(k, c) for k, c in m.fourier.items() if c != 0]
        self.A, self.bp, self.q = A, bp, q
        if self.coeffs:
            ks = np.array([k for k, _ in self.coeffs], dtype=float)
            cs = np.array([c for _, c in self.coeffs])
            self.phase = cs[None, :] * np.exp(2j * math.pi * (sites[:, :2] @ ks.T))
        else:
            self.phase = np.zeros((len(sites), 0), dtype=complex)

    # Integrating by parts against the cutoff gives, for om != 0,
    #   int chi(s) e^{i om s} ds                = -(1 + J(om)) / (i om),
    #   int phi(lam^-k u) e^{i om u} du          = (J(lam^k om) - J(lam^(k+1) om)) / (i om),
    # which avoids summing a long oscillatory integrand whose total is tiny.

    def _apply(self, integral) -> np.ndarray:
        if not self.coeffs:
            return np.zeros(len(self.phase), dtype=complex)
        vals = np.array([integral(fourier_frequency(k[0], k[1], self.A)) for k, _ in self.coeffs])
        return self.phase @ vals

    def _J(self, xi: float) -> complex:
        return cutoff_derivative_fourier(self.bp, xi, self.q)

    def g_tilde(self) -> np.ndarray:
        def integral(om):
            if om == 0:
                return self.bp.mass_chi(self.q)
            return -(1.0 + self._J(om)) / (1j * om)
        return self._apply(integral)

    def term(self, k: int) -> np.ndarray:
        lam = self.bp.lam

        def integral(om):
            if om == 0:
                return lam ** k * self.bp.mass_phi(self.q)
            return (self._J(lam ** k * om) - self._J(lam ** (k + 1) * om)) / (1j * om)
        return self._apply(integral)


def solve(h: Observable, sites, A: Automorphism, kmax: int = 12, tol: float = 1e-9,
          bp: BumpPair | None = None, q: QuadratureSpec = QuadratureSpec(), jobs: int = 1) -> CoboundarySolution:
    """g = -G~h - sum_k G_k h at each site, with convergence diagnostics.

    Terms are added until the sup over sites of |G_k h| stays below ``tol`` for three
    consecutive k, five consecutive increases from k = 5 on are seen, or k = kmax.
    """
    if kmax < 0:
        raise ValueError("kmax must be >= 0")
    if not tol > 0:
        raise ValueError("tol must be positive")
    mu = h.mean()
    if abs(mu) > MEAN_TOL:
        raise ValueError(f"mean(h) = {mu:.3g} is a constant obstruction; only mean-zero observables are coboundaries")
    bp = _bp(bp, A)
    pts = np.atleast_2d(np.asarray([_arr(s) for s in sites], dtype=float))
    pts, _ = reduce_arr(pts, h.E)
    # the N = 0 part depends on (x, y) only
    fourier_only = all(m.N == 0 for m in h.modes)
    if fourier_only and len(pts):
        _, first, inverse = np.unique(pts[:, :2], axis=0, return_index=True, return_inverse=True)
        work = pts[first]
        inverse = inverse.ravel()
    else:
        work, inverse = pts, np.arange(len(pts))

    if h.is_zero():
        return CoboundarySolution(pts, np.zeros(len(pts), dtype=complex), [0.0], "converged", 0, 0.0)

    fs = _FourierSeries(h, A, bp, q, work)
    rest = Observable([m for m in h.modes if m.N != 0], h.lattice) if not fourier_only else None
    g = -fs.g_tilde()
    history: list[float] = []
    if rest is not None and rest.modes:
        # sites are independent: all terms up to kmax per site, then the stopping rule is
        # replayed on the combined history so the result does not depend on scheduling
        args = [(rest, s, A, bp, q, kmax) for s in work]
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                out = list(ex.map(_site_terms, args))
        else:
            out = [_site_terms(a) for a in args]
        g = g - np.array([o[0] for o in out])
        extra = np.array([o[1] for o in out]).reshape(len(work), kmax + 1)
    else:
        extra = None
    k_used = 0
    for k in range(kmax + 1):
        term = fs.term(k)
        if extra is not None:
            term = term + extra[:, k]
        g = g - term
        history.append(float(np.abs(term).max()) if len(term) else 0.0)
        k_used = k
        if _tail_met(history, tol) or _growth_run(history):
            break
    verdict, ratio = classify(history, tol)
    return CoboundarySolution(pts, g[inverse], history, verdict, k_used, ratio)


def verify_coboundary(g, h: Observable, samples, A: Automorphism,
                      q: QuadratureSpec = QuadratureSpec()) -> float:
    """max |g(Psi_t x) - g(x) - H_{x,t}(h)| over samples (x, t).

    ``g`` maps an (P, 3) array of points to complex values; passing a function that re-solves
    at the given points avoids interpolation error.
    """
    samples = list(samples)
    if not samples:
        return 0.0
    xs = np.array([_arr(x) for x, _ in samples])
    ts = np.array([float(t) for _, t in samples])
    ends = np.array([flow_reduce_arr(x, t, A.W, h.E, A.W_lo) for x, t in zip(xs, ts)])
    g0 = np.asarray(g(xs))
    g1 = np.asarray(g(ends))
    H = np.array([ergodic_integral_direct(h, x, t, A, q, method="terms").value for x, t in zip(xs, ts)])
    return float(np.abs(g1 - g0 - H).max())
