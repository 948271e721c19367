"""Weighted integrals of observables along nilflow orbits.

Two independent engines compute ``I = int w(u) h(Psi_u x) du`` for a compactly
supported weight ``w``:

* ``integrate_nodes`` evaluates ``h`` pointwise at composite Gauss-Legendre nodes and
  estimates its error by halving the panels.
* ``integrate_terms`` integrates the lattice sum term by term.  Along an orbit each
  theta term is a Gaussian in ``u`` times a linear phase, so only the lattice points
  in a thin parallelogram around the orbit contribute and each is integrated on a
  few panels covering its Gaussian core.

Both report the number of integrand evaluations they performed (pointwise
observable evaluations for the node engine, single term evaluations for the term
engine).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import wofz

from .heis import Automorphism, HeisPoint, flow_reduce_arr, reduce_arr, two_prod, two_sum
from .observables import Observable
from .windows import Indicator, Window

GAUSS_RHO = 37.0  # terms below exp(-GAUSS_RHO) of their peak are dropped


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuadratureSpec:
    order: int = 16
    panel: float = 0.25
    tol: float = 1e-10
    max_refine: int = 4

    def __post_init__(self):
        if self.order < 2:
            raise ValueError("quadrature order must be >= 2")
        if not self.panel > 0:
            raise ValueError("panel length must be positive")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True)
class OrbitIntegral:
    value: complex
    error: float
    evals: int


@lru_cache(maxsize=None)
def gl_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _segments(window: Window, lo: float | None = None, hi: float | None = None) -> list[tuple[float, float]]:
    a, b = window.support
    if lo is not None:
        a = max(a, lo)
    if hi is not None:
        b = min(b, hi)
    if not b > a:
        return []
    cuts = sorted({a, b, *[c for c in window.breakpoints() if a < c < b]})
    return list(zip(cuts[:-1], cuts[1:]))


def _panel_nodes(segs, panel: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = gl_rule(order)
    nodes, weights = [], []
    for a, b in segs:
        m = max(1, int(math.ceil((b - a) / panel - 1e-12)))
        edges = np.linspace(a, b, m + 1)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        nodes.append((mid[:, None] + half[:, None] * x[None, :]).ravel())
        weights.append((half[:, None] * w[None, :]).ravel())
    if not nodes:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(nodes), np.concatenate(weights)


@dataclass(frozen=True)
class _AtomGeometry:
    """Orbit geometry of one atom in its frame coordinates y = M^{-1} v - center."""
    Wy: np.ndarray      # flow direction in y
    a: float            # Wy^T Q Wy: exp(-pi a (u - u*)^2) along the orbit
    kappa: float        # transverse curvature: min over u of the exponent is kappa (phat . y)^2
    phat: np.ndarray    # unit normal to Wy
    sigma: float        # Gaussian core width along the orbit
    P: float            # transverse half-width of contributing strip
    delta: float        # half-length of contributing orbit segment per term
    om_max: float       # bound for |phase frequency| of any contributing term


def _geometry(at, D: int, A: Automorphism) -> _AtomGeometry:
    W = A.W
    p = np.array([-A.beta, A.alpha])
    Q = at.Q
    Wy = at.Minv.astype(float) @ W
    a = float(Wy @ Q @ Wy)
    what = Wy / np.linalg.norm(Wy)
    phat = np.array([-what[1], what[0]])
    kappa = float(np.linalg.det(Q)) / float(what @ Q @ what)
    P = math.sqrt(GAUSS_RHO / (math.pi * kappa))
    M = at.M.astype(float)
    # |p . (v + n)| over contributing terms, with v in the unit square
    om = math.pi * D * (P * abs(p @ M @ phat) + abs(p @ M @ at.c) + np.abs(p).sum())
    return _AtomGeometry(Wy, a, kappa, phat, 1.0 / math.sqrt(2 * math.pi * a), P,
                         math.sqrt(GAUSS_RHO / (math.pi * a)), om)


def feature_length(h: Observable, A: Automorphism) -> float:
    """Shortest length on which u -> h(Psi_u x) can vary: Gaussian core width or phase wavelength."""
    W = A.W
    ell = math.inf
    for m in h.modes:
        if m.N == 0:
            for (a, b) in m.fourier:
                om = 2 * math.pi * abs(a * W[0] + b * W[1])
                if om > 0:
                    ell = min(ell, 1.0 / om)
            continue
        for at in m.atoms:
            geo = _geometry(at, h.E * m.N, A)
            ell = min(ell, geo.sigma, 4.0 / geo.om_max)
    return ell


def integrate_nodes(h: Observable, x, window: Window, A: Automorphism,
                    q: QuadratureSpec = QuadratureSpec()) -> OrbitIntegral:
    """Composite Gauss-Legendre quadrature of w(u) h(Psi_u x) with panel-halving error estimate."""
    x = x.as_array() if isinstance(x, HeisPoint) else np.asarray(x, dtype=float)
    x, _ = reduce_arr(x, h.E)
    segs = _segments(window)
    if not segs:
        return OrbitIntegral(0j, 0.0, 0)
    panel = min(q.panel, 2.0 * feature_length(h, A), window.scale)
    evals = 0

    def run(pl):
        nonlocal evals
        u, wt = _panel_nodes(segs, pl, q.order)
        pts = flow_reduce_arr(x[None, :], u, A.W, h.E, A.W_lo)
        vals = h.eval(pts)
        evals += len(u)
        f = wt * window(u) * vals
        return complex(np.sum(f))

    coarse = run(panel)
    for _ in range(q.max_refine + 1):
        panel /= 2
        fine = run(panel)
        err = abs(fine - coarse)
        if err <= q.tol * max(1.0, abs(fine)):
            return OrbitIntegral(fine, err, evals)
        coarse = fine
    raise QuadratureError(f"orbit quadrature did not reach tol {q.tol:g} (last change {err:.3g})")


def _lattice_in_strips(G: np.ndarray, lo: np.ndarray, hi: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Integer n with lo <= G (shift + n) <= hi componentwise (G a 2x2 invertible matrix)."""
    Ginv = np.linalg.inv(G)
    corners = np.array([Ginv @ np.array([s, t]) for s in (lo[0], hi[0]) for t in (lo[1], hi[1])]) - shift
    box_lo = np.floor(corners.min(axis=0)).astype(np.int64)
    box_hi = np.ceil(corners.max(axis=0)).astype(np.int64)
    extent = box_hi - box_lo
    j = int(np.argmin(extent))
    o = 1 - j
    nj = np.arange(box_lo[j], box_hi[j] + 1)
    lo_o = np.full(len(nj), -np.inf)
    hi_o = np.full(len(nj), np.inf)
    for r in range(2):
        g = G[r]
        base = g[j] * (shift[j] + nj) + g[o] * shift[o]
        if abs(g[o]) < 1e-300:
            bad = (base < lo[r]) | (base > hi[r])
            lo_o[bad], hi_o[bad] = np.inf, -np.inf
            continue
        b1 = (lo[r] - base) / g[o]
        b2 = (hi[r] - base) / g[o]
        lo_o = np.maximum(lo_o, np.minimum(b1, b2))
        hi_o = np.minimum(hi_o, np.maximum(b1, b2))
    first = np.ceil(lo_o)
    last = np.floor(hi_o)
    cnt = np.where(last >= first, last - first + 1, 0).astype(np.int64)
    if cnt.sum() == 0:
        return np.zeros((0, 2), dtype=np.int64)
    rows = np.repeat(np.arange(len(nj)), cnt)
    starts = np.cumsum(cnt) - cnt
    within = np.arange(cnt.sum()) - np.repeat(starts, cnt)
    out = np.empty((cnt.sum(), 2), dtype=np.int64)
    out[:, j] = nj[rows]
    out[:, o] = first[rows].astype(np.int64) + within
    return out


def _erf_tail(s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """erf(s) = sgn + exp(-s^2) * rest, split so that the exponential factor can be cancelled."""
    pos = s.real >= 0
    sgn = np.where(pos, 1.0, -1.0)
    rest = np.where(pos, -wofz(1j * s), wofz(-1j * s))
    return sgn, rest


def gauss_phase_integrals(a: float, om: np.ndarray, ta: np.ndarray, tb: np.ndarray):
    """Closed forms of int_{ta}^{tb} tau^j exp(-pi a tau^2 + i om tau) d tau for j = 0, 1.

    Uses the Faddeeva function so that no exp(+om^2 / (4 pi a)) factor is ever formed.
    """
    ra = math.sqrt(math.pi * a)
    shift = 1j * om / (2 * math.pi * a)
    sa = ra * (ta - shift)
    sb = ra * (tb - shift)
    ga = np.exp(-math.pi * a * ta ** 2 + 1j * om * ta)
    gb = np.exp(-math.pi * a * tb ** 2 + 1j * om * tb)
    sga, rga = _erf_tail(sa)
    sgb, rgb = _erf_tail(sb)
    damp = np.exp(-om ** 2 / (4 * math.pi * a))
    # exp(-om^2/(4 pi a)) * exp(-s^2) equals the integrand at the end point
    diff = damp * (sgb - sga) + gb * rgb - ga * rga
    i0 = diff * (math.sqrt(math.pi) / 2) / ra
    i1 = -(gb - ga) / (2 * math.pi * a) + shift * i0
    return i0, i1


CHEB_DEGREE = 13
_cheb_x = np.cos(np.pi * (np.arange(CHEB_DEGREE + 1) + 0.5) / (CHEB_DEGREE + 1))
_cheb_vinv = np.linalg.inv(np.vander(_cheb_x, increasing=True))


def core_moments(rho: float, B: np.ndarray, J: int) -> np.ndarray:
    """M_j = int_{-1}^{1} x^j exp(-rho x^2 + B x) dx for j = 0..J (rows), vectorised over B."""
    B = np.asarray(B, dtype=complex)
    out = np.empty((J + 1, len(B)), dtype=complex)
    i0, i1 = gauss_phase_integrals(rho / math.pi, -1j * B, -np.ones(len(B)), np.ones(len(B)))
    out[0] = i0
    out[1] = i1
    ep = np.exp(-rho + B)
    em = np.exp(-rho - B)
    for j in range(1, J):
        bd = ep - (-1) ** j * em
        out[j + 1] = (B * out[j] + j * out[j - 1] - bd) / (2 * rho)
    return out


def _compensated_dot(n: np.ndarray, v: np.ndarray, p: np.ndarray,
                     p_lo: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(v + n) . (p + p_lo) as an unevaluated sum hi + lo, for integer rows n that may be large."""
    nf = n.astype(float)
    a, ea = two_prod(nf[:, 0], p[0])
    b, eb = two_prod(nf[:, 1], p[1])
    hi, e = two_sum(a, b)
    hi, e2 = two_sum(hi, float(v @ p))
    return hi, e + e2 + ea + eb + nf @ p_lo + float(v @ p_lo)


def _mod2_product(hi: np.ndarray, lo: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(hi + lo) * u reduced modulo 2, accurate even when the product is large."""
    ph, pl = two_prod(hi, u)
    return np.fmod(ph, 2.0) + (pl + lo * u)


def _atom_terms(at, D: int, x: np.ndarray, window: Window, A: Automorphism, q: QuadratureSpec,
                chunk_nodes: int = 2_000_000) -> tuple[complex, int, int]:
    geo = _geometry(at, D, A)
    Q = at.Q
    M = at.M
    Mi = at.Minv.astype(float)
    p = np.array([-A.beta, A.alpha])
    p_lo = np.array([-A.beta_lo, A.alpha_lo])
    a, Wy = geo.a, geo.Wy
    lin = at.L
    linW = complex(lin @ Wy)
    v = x[:2]
    z0 = x[2]
    yshift = Mi @ v - at.c
    QW = Q @ Wy
    glx, glw = gl_rule(q.order)
    total = 0j
    evals = 0
    nterms = 0
    for s_lo, s_hi in _segments(window):
        # y = yshift + m with |phat . y| <= P and u* = -(QW . y) / a in [s_lo - delta, s_hi + delta]
        G = np.array([geo.phat, -QW / a])
        ms = _lattice_in_strips(G, np.array([-geo.P, s_lo - geo.delta]),
                                np.array([geo.P, s_hi + geo.delta]), yshift)
        if len(ms) == 0:
            continue
        y0 = yshift + ms
        ustar = -(y0 @ QW) / a
        ua = np.maximum(s_lo, ustar - geo.delta)
        ub = np.minimum(s_hi, ustar + geo.delta)
        keep = ub > ua
        if not keep.any():
            continue
        ms, y0, ustar, ua, ub = ms[keep], y0[keep], ustar[keep], ua[keep], ub[keep]
        nterms += len(ms)
        n = ms @ M.T
        sperp = y0 @ geo.phat
        f_hi, f_lo = _compensated_dot(n, v, p, p_lo)
        om = -math.pi * D * (f_hi + f_lo)
        # exp(-pi i D n1 n2) is a sign; keep the integer part exact
        sign = np.where((D * n[:, 0] * n[:, 1]) % 2 == 0, 1.0, -1.0)
        ph0 = 2 * math.pi * D * (z0 + 0.5 * (n[:, 0] * v[1] - n[:, 1] * v[0]))
        # om * ustar is large far out along the orbit; fold it into ph0 with its low-order part
        ph0 = ph0 - math.pi * D * _mod2_product(f_hi, f_lo, ustar)
        amp = sign * np.exp(-math.pi * geo.kappa * sperp ** 2 + 1j * ph0)
        pref0 = at.coeff + y0 @ lin
        if isinstance(window, Indicator):
            ta, tb = ua - ustar, ub - ustar
            i0, i1 = gauss_phase_integrals(a, om, ta, tb)
            # prefactor (pref0 + linW u) with u = ustar + tau; phase exp(i om u) = exp(i om ustar) exp(i om tau)
            val = (pref0 + linW * ustar) * i0 + linW * i1
            total += complex(np.sum(amp * val))
            evals += len(ms)
            continue
        # short unclipped cores: polynomial interpolation of the weight against exact moments
        tol_edge = 1e-12 * (1.0 + abs(s_lo) + abs(s_hi))
        unclipped = (ua <= ustar - geo.delta + tol_edge) & (ub >= ustar + geo.delta - tol_edge)
        if 2 * geo.delta <= window.scale / 2:
            fast = unclipped
        else:
            fast = np.zeros(len(ms), dtype=bool)
        if fast.any():
            idx = np.nonzero(fast)[0]
            step = max(1, chunk_nodes // (CHEB_DEGREE + 1))
            for s in range(0, len(idx), step):
                ii = idx[s:s + step]
                u = ustar[ii, None] + geo.delta * _cheb_x[None, :]
                vals = window(u.ravel()).reshape(u.shape) * (pref0[ii, None] + linW * u)
                coef = vals @ _cheb_vinv.T
                mom = core_moments(GAUSS_RHO, 1j * om[ii] * geo.delta, CHEB_DEGREE)
                integ = geo.delta * np.sum(coef.T * mom, axis=0)
                total += complex(np.sum(amp[ii] * integ))
                evals += u.size
        slow = np.nonzero(~fast)[0]
        if len(slow) == 0:
            continue
        om_max = float(np.abs(om[slow]).max())
        hp = min(2 * geo.sigma, window.scale, q.panel / 2, 4.0 / om_max if om_max > 0 else math.inf)
        m = max(1, int(math.ceil(2 * geo.delta / hp)))
        per = m * q.order
        step = max(1, chunk_nodes // per)
        for s in range(0, len(slow), step):
            sl = slow[s:s + step]
            A_, B_ = ua[sl], ub[sl]
            edges = A_[:, None] + (B_ - A_)[:, None] * (np.arange(m + 1) / m)[None, :]
            half = 0.5 * np.diff(edges, axis=1)
            mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
            u = mid[..., None] + half[..., None] * glx
            wt = half[..., None] * glw
            tau = u - ustar[sl, None, None]
            pref = pref0[sl, None, None] + linW * u
            f = pref * np.exp(-math.pi * a * tau ** 2 + 1j * om[sl, None, None] * tau)
            wu = window(u.ravel()).reshape(u.shape)
            total += complex(np.sum(amp[sl] * np.sum(wt * wu * f, axis=(1, 2))))
            evals += u.size
    return total, evals, nterms


def window_fourier(window: Window, om: float, q: QuadratureSpec = QuadratureSpec()) -> tuple[complex, int]:
    """int w(u) exp(i om u) du, in closed form for indicators, else by panels resolving the phase."""
    if isinstance(window, Indicator):
        a, b = window.lo, window.hi
        if b <= a:
            return 0j, 0
        if abs(om) * (b - a) < 1e-3:
            # series of (e^{i om b} - e^{i om a}) / (i om) about the midpoint
            c, hw = 0.5 * (a + b), 0.5 * (b - a)
            x2 = (om * hw) ** 2
            sinc = 1 - x2 / 6 + x2 * x2 / 120 - x2 ** 3 / 5040
            return complex(np.exp(1j * om * c) * 2 * hw * sinc), 0
        return complex((np.exp(1j * om * b) - np.exp(1j * om * a)) / (1j * om)), 0
    segs = _segments(window)
    hp = min(q.panel, window.scale, 4.0 / abs(om) if om != 0 else math.inf)
    u, wt = _panel_nodes(segs, hp, q.order)
    return complex(np.sum(wt * window(u) * np.exp(1j * om * u))), len(u)


def fourier_frequency(k1: int, k2: int, A: Automorphism) -> float:
    """Angular frequency of exp(2 pi i (k1 x + k2 y)) along the flow."""
    return 2 * math.pi * ((k1 * A.alpha + k2 * A.beta) + (k1 * A.alpha_lo + k2 * A.beta_lo))


def _fourier_terms(m, x: np.ndarray, window: Window, A: Automorphism, q: QuadratureSpec) -> tuple[complex, int]:
    total = 0j
    evals = 0
    for (k1, k2), cf in m.fourier.items():
        val, ev = window_fourier(window, fourier_frequency(k1, k2, A), q)
        evals += ev
        total += cf * np.exp(2j * math.pi * (k1 * x[0] + k2 * x[1])) * val
    return complex(total), evals


def integrate_terms(h: Observable, x, window: Window, A: Automorphism,
                    q: QuadratureSpec = QuadratureSpec()) -> OrbitIntegral:
    """Term-by-term orbit integral of the lattice sum (cost grows with the number of contributing terms)."""
    x = x.as_array() if isinstance(x, HeisPoint) else np.asarray(x, dtype=float)
    x, _ = reduce_arr(x, h.E)
    total = 0j
    evals = 0
    err = 0.0
    for m in h.modes:
        if m.N == 0:
            val, ev = _fourier_terms(m, x, window, A, q)
            total += val
            evals += ev
            continue
        D = h.E * m.N
        for at in m.atoms:
            val, ev, nt = _atom_terms(at, D, x, window, A, q)
            total += val
            evals += ev
            err += at.amplitude() * math.exp(-GAUSS_RHO) * (nt + 1)
    return OrbitIntegral(total, err, evals)


def integrate(h: Observable, x, window: Window, A: Automorphism,
              q: QuadratureSpec = QuadratureSpec(), method: str = "terms") -> OrbitIntegral:
    if method == "terms":
        return integrate_terms(h, x, window, A, q)
    if method == "nodes":
        return integrate_nodes(h, x, window, A, q)
    raise ValueError(f"unknown integration method {method!r}")
