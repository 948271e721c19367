"""Ergodic integrals along the nilflow: direct, smoothed and renormalised evaluation,
the zooming partition of unity, and deviation-exponent fits.

Renormalisation rests on ``F o Psi_{lam t} = Psi_t o F``, which gives

    int_0^t h(Psi_r x) dr = int_0^{lam^-k t} (F^k h)(Psi_s F^k x) ds,

with ``F^k h = lam^k h o F^-k`` computed exactly on observable data.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .heis import Automorphism, HeisPoint, aut_arr, aut_reduce_exact, flow_reduce_arr
from .observables import Observable
from .orbit import OrbitIntegral, QuadratureError, QuadratureSpec, integrate
from .windows import FunctionWindow, Indicator, ScaledWindow, Window, smooth_step

__all__ = [
    "QuadratureSpec", "QuadratureError", "OrbitIntegral", "ergodic_integral_direct", "smoothed_integral",
    "renormalized_integral", "renormalized_smoothed", "select_k", "ZoomPartition", "zoom_partition",
    "smooth_decomposition", "SmoothDecomposition", "decomposition_levels", "iterate_aut", "DeviationFit", "deviation_fit", "log_cost_bound",
    "deviation_functional", "section_smoothed_integral",
]


def _arr(x) -> np.ndarray:
    return x.as_array() if isinstance(x, HeisPoint) else np.asarray(x, dtype=float)


def iterate_aut(A: Automorphism, x, k: int, E: int = 1) -> np.ndarray:
    """F^k x (k of either sign), reduced to the unit cell; single points are mapped exactly."""
    x = _arr(x)
    if x.ndim == 1:
        return aut_reduce_exact(A.power(k), x, E)
    return aut_arr(A.power(k).astype(float), x)


def ergodic_integral_direct(h: Observable, x, t: float, A: Automorphism,
                            q: QuadratureSpec = QuadratureSpec(), method: str = "nodes") -> OrbitIntegral:
    """H_{x,t}(h) = int_0^t h(Psi_r x) dr by quadrature of pointwise values."""
    if not t >= 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return OrbitIntegral(0j, 0.0, 0)
    return integrate(h, _arr(x), Indicator(0.0, float(t)), A, q, method)


def smoothed_integral(h: Observable, x, phi: Window, A: Automorphism,
                      q: QuadratureSpec = QuadratureSpec(), method: str = "nodes") -> OrbitIntegral:
    """H_{x,phi}(h) = int phi(t) h(Psi_t x) dt."""
    return integrate(h, _arr(x), phi, A, q, method)


def select_k(t: float, lam: float) -> int:
    """Smallest k >= 0 with lam^-k t < lam."""
    if t < lam:
        return 0
    k = max(0, int(math.floor(math.log(t) / math.log(lam))))
    while t * lam ** (-k) >= lam:
        k += 1
    while k > 0 and t * lam ** (-(k - 1)) < lam:
        k -= 1
    return k


def renormalized_integral(h: Observable, x, t: float, k: int, A: Automorphism,
                          q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> OrbitIntegral:
    """H_{F^k x, lam^-k t}(F^k h); equal to H_{x,t}(h)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if not t >= 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return OrbitIntegral(0j, 0.0, 0)
    hk = h.transfer(A, k)
    xk = iterate_aut(A, x, k, h.E)
    return integrate(hk, xk, Indicator(0.0, float(t) * A.lam ** (-k)), A, q, method)


def renormalized_smoothed(h: Observable, x, phi: Window, k: int, A: Automorphism,
                          q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> OrbitIntegral:
    """H_{F^k x, phi(lam^k .)}(F^k h); equal to H_{x,phi}(h)."""
    if k < 0:
        raise ValueError("k must be >= 0")
    return integrate(h.transfer(A, k), iterate_aut(A, x, k, h.E), ScaledWindow(phi, A.lam ** k), A, q, method)


def log_cost_bound(t: float, lam: float, q: QuadratureSpec = QuadratureSpec()) -> int:
    """Evaluation budget C log t for the logarithmic-cost contract.

    One piece of length < lam needs ``order * ceil(lam / panel)`` nodes; the budget allows one
    such piece per level of a dyadic zoom, ``2 floor(log_4 t) + 1`` levels in total.
    """
    per_piece = q.order * math.ceil(lam / q.panel)
    levels = 2 * int(math.floor(math.log(max(t, 4.0)) / math.log(4.0))) + 1
    return per_piece * levels


# ---------------------------------------------------------------- zooming partition

@dataclass(frozen=True)
class ZoomPartition:
    """Partition of unity on [0, T] with pieces phi_k, |k| <= n, concentrating at both end points.

    ``eta_j(t) = eta((8 t - 4^-j T) / (4^-j T))`` rises on ``[a_j, 2 a_j]`` with ``a_j = 4^-j T / 8``.
    The centre piece is ``phi_0 = eta_0(t) + eta_0(T - t) - 1``, then ``phi_k = eta_k - eta_{k-1}``
    for ``0 < k < n``, ``phi_n = 1 - eta_{n-1}``, and ``phi_{-k}(t) = phi_k(T - t)``.
    """
    T: float
    n: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError("n must be an integer >= 1")

    def a(self, j: int) -> float:
        return 4.0 ** (-j) * self.T / 8.0

    def eta(self, j: int, t):
        s = 4.0 ** (-j) * self.T
        return smooth_step((8.0 * np.asarray(t, dtype=float) - s) / s)

    def _phi_pos(self, k: int, t):
        t = np.asarray(t, dtype=float)
        if k == 0:
            return self.eta(0, t) + self.eta(0, self.T - t) - 1.0
        if k < self.n:
            return self.eta(k, t) - self.eta(k - 1, t)
        return 1.0 - self.eta(self.n - 1, t)

    def phi(self, k: int, t):
        if abs(k) > self.n:
            raise ValueError(f"piece index {k} outside [-{self.n}, {self.n}]")
        t = np.asarray(t, dtype=float)
        inside = (t >= 0) & (t <= self.T)
        val = self._phi_pos(k, t) if k >= 0 else self._phi_pos(-k, self.T - t)
        return np.where(inside, val, 0.0)

    def support(self, k: int) -> tuple[float, float]:
        j = abs(k)
        if j == 0:
            lo, hi = self.a(0), self.T - self.a(0)
        elif j < self.n:
            lo, hi = self.a(j), 2 * self.a(j - 1)
        else:
            lo, hi = 0.0, 2 * self.a(self.n - 1)
        return (lo, hi) if k >= 0 else (self.T - hi, self.T - lo)

    def kinks(self, k: int) -> tuple[float, ...]:
        j = abs(k)
        if j == 0:
            pts = (2 * self.a(0), self.T - 2 * self.a(0))
        elif j < self.n:
            pts = (2 * self.a(j), self.a(j - 1))
        else:
            pts = (self.a(self.n - 1),)
        return pts if k >= 0 else tuple(sorted(self.T - p for p in pts))

    def window(self, k: int) -> FunctionWindow:
        lo, hi = self.support(k)
        j = min(abs(k), self.n - 1)
        return FunctionWindow(lambda t, k=k: self.phi(k, t), lo, hi, self.a(j) / 8.0, self.kinks(k))

    def total(self, t):
        return sum(self.phi(k, t) for k in range(-self.n, self.n + 1))

    def scaled_cq_norm(self, k: int, q: int = 4, samples: int = 4001, h: float = 2e-3) -> float:
        """max_{q' <= q} sup |d^q'/ds^q' phi_k(s 4^-|k| T)| by nested central differences."""
        scale = 4.0 ** (-abs(k)) * self.T
        lo, hi = self.support(k)
        s = np.linspace(lo / scale - 0.05, hi / scale + 0.05, samples)
        s = s[(s * scale >= 0) & (s * scale <= self.T)]
        # one-sided end pieces equal 1 at the interval end; derivatives there are taken inside
        def f(u):
            return self.phi(k, np.clip(u, 0.0, self.T / scale) * scale)
        best = float(np.abs(f(s)).max())
        for order in range(1, q + 1):
            c = np.array([math.comb(order, i) * (-1) ** i for i in range(order + 1)], dtype=float)
            offs = (order / 2.0 - np.arange(order + 1)) * h
            d = sum(ci * f(s + oi) for ci, oi in zip(c, offs)) / h ** order
            best = max(best, float(np.abs(d).max()))
        return best


def zoom_partition(T: float, n: int) -> ZoomPartition:
    return ZoomPartition(float(T), int(n))


# ---------------------------------------------------------------- smooth decomposition

@dataclass
class DecompositionPiece:
    k: int
    m_k: int
    support: tuple[float, float]
    value: complex
    evals: int


@dataclass
class SmoothDecomposition:
    value: complex
    boundary_bound: float
    boundary_bound_strict: float
    remainder: complex
    N: int
    pieces: list = field(default_factory=list)


def decomposition_levels(T: float, lam: float) -> tuple[int, dict]:
    """N = floor(ln T / ln 4) and m_k = floor((ln T - |k| ln 4) / ln lam) for |k| <= N."""
    N = int(math.floor(math.log(T) / math.log(4.0) + 1e-12))
    m = {k: int(math.floor((math.log(T) - abs(k) * math.log(4.0)) / math.log(lam) + 1e-12))
         for k in range(-N, N + 1)}
    return N, m


def smooth_decomposition(h: Observable, x, T: float, A: Automorphism,
                         q: QuadratureSpec = QuadratureSpec(), method: str = "terms",
                         sup_norm: float | None = None) -> SmoothDecomposition:
    """Sum over |k| < N of renormalised smooth pieces; the two one-sided end pieces are the remainder."""
    if not T >= 4:
        raise ValueError("smooth decomposition needs T >= 4")
    N, m = decomposition_levels(T, A.lam)
    part = ZoomPartition(float(T), N)
    x = _arr(x)
    pieces = []
    total = 0j
    for k in range(-(N - 1), N):
        r = renormalized_smoothed(h, x, part.window(k), m[k], A, q, method)
        pieces.append(DecompositionPiece(k, m[k], part.support(k), r.value, r.evals))
        total += r.value
    rem = 0j
    for k in (-N, N):
        rem += integrate(h, x, part.window(k), A, q, method).value
    hsup = h.sup_norm() if sup_norm is None else sup_norm
    return SmoothDecomposition(total, 2.0 * hsup, 2.0 * 4.0 ** (-N) * T * hsup, rem, N, pieces)


# ---------------------------------------------------------------- deviation fit

@dataclass
class DeviationFit:
    """Log-log fit of |H_{x,t}| against t.

    ``samples`` rows are ``(t, H_mean, H_abs, k_used, evals)``.  For a single base point
    ``H_abs = |H|``; for an ensemble of base points ``H_abs`` is the root mean square of |H|
    over the ensemble and ``H_mean`` its average.
    """
    slope: float
    intercept: float
    r_squared: float
    t_window: tuple[float, float]
    samples: list

    def csv_rows(self):
        for t, H, Habs, k, ev in self.samples:
            yield {"t": t, "H_re": H.real, "H_im": H.imag, "H_abs": Habs, "k_used": k, "evals": ev}

    def summary(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r_squared,
                "t_min": self.t_window[0], "t_max": self.t_window[1]}


def loglog_fit(t: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line through (log t, log y); returns slope, intercept, r^2."""
    lt, ly = np.log(t), np.log(y)
    X = np.stack([lt, np.ones_like(lt)], axis=1)
    coef, *_ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(coef[0]), float(coef[1]), min(1.0, max(0.0, r2))


def deviation_fit(h: Observable, x, t_grid, A: Automorphism, q: QuadratureSpec = QuadratureSpec(),
                  subtract_mean: bool = True, fit_from: float | None = None,
                  method: str = "terms") -> DeviationFit:
    """Fit |H_{x,t}(h)| ~ C t^slope on a geometric t grid.

    ``x`` is one base point or an (P, 3) ensemble; with an ensemble the root mean square of
    |H| is fitted, which averages out the log-periodic oscillation of single orbits.
    Each integral is evaluated after renormalising by the smallest k with lam^-k t < lam.
    By default the smallest decade of the grid is excluded from the fit.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if len(t_grid) < 8 or np.any(np.diff(t_grid) <= 0) or t_grid[0] <= 0:
        raise ValueError("t_grid must be positive, increasing and have at least 8 points")
    if subtract_mean and h.mean() != 0:
        h = h - Observable.constant(h.mean(), h.lattice)
    X = _arr(x).reshape(-1, 3)
    samples = []
    for t in t_grid:
        k = select_k(t, A.lam)
        vals, ev = [], 0
        for xi in X:
            r = renormalized_integral(h, xi, t, k, A, q, method)
            vals.append(r.value)
            ev += r.evals
        vals = np.array(vals)
        samples.append((float(t), complex(vals.mean()), float(np.sqrt(np.mean(np.abs(vals) ** 2))), k, ev))
    t0 = 10.0 * t_grid[0] if fit_from is None else fit_from
    sel = [(s[0], s[2]) for s in samples if s[0] >= t0 * (1 - 1e-12)]
    tt = np.array([s[0] for s in sel])
    yy = np.array([s[1] for s in sel])
    if len(tt) < 2 or np.all(yy == 0):
        raise ValueError("ergodic integrals vanish on the fit window; slope undefined")
    if np.any(yy == 0):
        raise ValueError("an ergodic integral vanished exactly; log-log fit undefined")
    slope, icpt, r2 = loglog_fit(tt, yy)
    return DeviationFit(slope, icpt, r2, (float(tt[0]), float(tt[-1])), samples)


# ---------------------------------------------------------------- deviation functionals

def section_smoothed_integral(c: np.ndarray, D: int, N_sign: int, E: int, x, phi: Window, A: Automorphism,
                              q: QuadratureSpec = QuadratureSpec()) -> complex:
    """int phi(t) s(Psi_t x) dt for the mode function s with section coefficients c (composite Gauss-Legendre)."""
    from .spectral import section_values

    a, b = phi.support
    cuts = sorted({a, b, *[p for p in phi.breakpoints() if a < p < b]})
    u, w = np.polynomial.legendre.leggauss(q.order)
    ts, ws = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        n = max(1, int(math.ceil((hi - lo) / q.panel)))
        edges = np.linspace(lo, hi, n + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[:-1] + edges[1:])
        ts.append((mid[:, None] + half[:, None] * u[None, :]).ravel())
        ws.append((half[:, None] * w[None, :]).ravel())
    t = np.concatenate(ts)
    wt = np.concatenate(ws) * np.asarray(phi(t), dtype=float)
    x = _arr(x)
    pts = flow_reduce_arr(np.broadcast_to(x, (len(t), 3)).copy(), t, A.W, E, A.W_lo)
    return complex(np.sum(wt * section_values(c, D, N_sign, pts)))


def deviation_functional(v: np.ndarray, x, t: float, j: int, dec, q: QuadratureSpec = QuadratureSpec()) -> complex:
    """t^-alpha_j (ln t)^-d_j sum_k H_{x_k, phi~_k}((xi_j P_j + Q_j)^{m_k} v).

    ``v`` is a coefficient vector in the weighted representation of ``dec.source`` (see
    ``spectral.weighted_vector``).  The power acts on the range of P_j, so the power 0 is P_j
    itself.  The pieces are those of ``smooth_decomposition`` (|k| < N), with x_k = F^{m_k} x
    and phi~_k(s) = phi_k(lam^{m_k} s); alpha_j = ln|xi_j| / ln lam.
    """
    from .spectral import unweighted_coefficients

    M = dec.source
    if M is None:
        raise ValueError("the decomposition carries no transfer matrix; basis unknown")
    v = np.asarray(v, dtype=complex).reshape(-1)
    if v.shape[0] != M.dim:
        raise ValueError(f"coefficient vector has length {v.shape[0]}, basis has {M.dim}")
    if not t >= 4:
        raise ValueError("deviation functionals need t >= 4")
    if not 0 <= j < len(dec.eigenvalues):
        raise ValueError(f"no cluster {j}; decomposition has {len(dec.eigenvalues)}")
    A = M.A
    xi = dec.eigenvalues[j]
    P, Q = dec.projectors[j], dec.nilpotents[j]
    d = dec.degrees[j]
    alpha = math.log(abs(xi)) / math.log(A.lam)
    N, m = decomposition_levels(t, A.lam)
    part = ZoomPartition(float(t), N)
    L = xi * P + Q
    powers = {0: P @ v}
    total = 0j
    for k in range(-(N - 1), N):
        mk = m[k]
        if mk not in powers:
            top = max(powers)
            w = powers[top]
            for p in range(top + 1, mk + 1):
                w = L @ w
                powers[p] = w
        c = unweighted_coefficients(powers[mk], M)
        xk = iterate_aut(A, x, mk, M.E)
        phik = ScaledWindow(part.window(k), A.lam ** mk)
        total += section_smoothed_integral(c, M.basis.D, int(np.sign(M.N)), M.E, xk, phik, A, q)
    return complex(total * t ** (-alpha) * math.log(t) ** (-d))
