"""Resonances of the transfer operator on a fibre mode.

Two independent routes are provided.

* The exact oracle: for a linear map the resonances on the circle of radius lam^(1/2 - k) are
  lam^(1/2 - k) times the eigenvalues of the D x D quantum propagator of A (D = E N).
* A truncated matrix of W F W^-1, where F h = lam h o F^-1 acts on sections of the degree-D
  bundle and W is an anisotropic weight damping the stable frequency direction.

Sections are written b(x, y) = exp(-i pi D x y) u(x, y) with u periodic in x.  The basis is

    b_{j,l}(x, y) = exp(-i pi D x y) sum_{n in Z} exp(2 pi i D s x) h_l(sqrt(2 pi D) (y - s)) (2 pi D)^(1/4),

s = n + j / D, with h_l the normalised Hermite functions; j runs over residues mod D and l over
Hermite levels 0 .. 2 cutoff.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .heis import Automorphism, LatticeSpec, parity_ok, preserves_lattice

DEFAULT_R = 8.0
DEFAULT_BAND_TOL = 0.15
CLUSTER_RTOL = 1e-6
NILPOTENT_TOL = 1e-8
COND_MAX = 1e10


class SpectralError(ValueError):
    """Invalid spectral request or a numerically unusable result."""


class ResolutionError(SpectralError):
    """A quadrature grid too coarse for the requested truncation."""


# ---------------------------------------------------------------- Hermite functions

def hermite_functions(nmax: int, s) -> np.ndarray:
    """Normalised Hermite functions h_0 .. h_nmax at s, shape (nmax + 1,) + s.shape."""
    s = np.asarray(s, dtype=float)
    out = np.empty((nmax + 1,) + s.shape)
    out[0] = math.pi ** -0.25 * np.exp(-0.5 * s * s)
    if nmax > 0:
        out[1] = math.sqrt(2.0) * s * out[0]
    for k in range(2, nmax + 1):
        out[k] = math.sqrt(2.0 / k) * s * out[k - 1] - math.sqrt((k - 1) / k) * out[k - 2]
    return out


GH_NODES = 300  # Gauss-Hermite nodes: exact for polynomial weights times products of levels below ~290


def _multiplier_matrix(f, n: int, theta: float, quad: int = GH_NODES) -> np.ndarray:
    """Matrix of R f(s) R^-1 on Hermite levels 0..n-1, R = exp(i theta level)."""
    if 2 * n + 16 > 2 * quad:
        raise ResolutionError(f"{n} Hermite levels exceed the {quad}-node Gauss-Hermite rule")
    xs, ws = np.polynomial.hermite.hermgauss(quad)
    H = hermite_functions(n - 1, xs) * np.exp(0.5 * xs * xs)
    m = (H * ws * f(xs)) @ H.T
    rot = np.exp(1j * theta * np.arange(n))
    return rot[:, None] * m * rot.conj()[None, :]


def _frft_kernel(theta: float, s_out: np.ndarray, s_in: np.ndarray) -> np.ndarray:
    """Kernel of the fractional Fourier rotation consistent with _multiplier_matrix."""
    c = 1.0 / math.tan(theta)
    sn = math.sin(theta)
    pref = np.sqrt((1 - 1j * c) / (2 * math.pi))
    return pref * np.exp(0.5j * c * (s_out[:, None] ** 2 + s_in[None, :] ** 2) - 1j * s_out[:, None] * s_in[None, :] / sn)


# ---------------------------------------------------------------- exact oracle

def quantum_propagator(A: Automorphism, D: int) -> np.ndarray:
    """D x D quadratic-phase propagator of A (b != 0), or of its transpose-conjugate form (b = 0).

    U_{jk} = (i b D)^(-1/2) sum_{m < |b|} exp(pi i (a K^2 - 2 j K + d j^2) / (b D)),  K = k + m D.
    """
    D = int(D)
    if D <= 0:
        raise SpectralError(f"D must be a positive integer, got {D}")
    if not parity_ok(A):
        raise SpectralError("A violates the parity condition ab = cd = 0 mod 2")
    a, b, c, d = A.a, A.b, A.c, A.d
    if b == 0:
        # A = [[a, 0], [c, d]] with a d = 1: a point map with a quadratic phase
        j = np.arange(D)
        U = np.zeros((D, D), dtype=complex)
        U[(a * j) % D, j] = np.exp(1j * math.pi * a * c * j * j / D)
        return U
    j = np.arange(D)[:, None].astype(float)
    k = np.arange(D)[None, :].astype(float)
    U = np.zeros((D, D), dtype=complex)
    for m in range(abs(b)):
        K = k + m * D
        U += np.exp(1j * math.pi * (a * K * K - 2 * j * K + d * j * j) / (b * D))
    return U / np.sqrt(1j * b * D)


@dataclass(frozen=True)
class Resonance:
    value: complex
    modulus: float
    phase: float
    band: int | None
    multiplicity: int = 1


@dataclass(frozen=True)
class ResonanceSet:
    items: tuple[Resonance, ...]
    lam: float
    source: str
    N: int
    E: int
    band_tol: float = DEFAULT_BAND_TOL

    @property
    def D(self) -> int:
        return self.E * self.N

    def band(self, k: int) -> list[Resonance]:
        return [it for it in self.items if it.band == k]

    def count(self, k: int) -> int:
        return sum(it.multiplicity for it in self.band(k))

    def unassigned(self) -> list[Resonance]:
        return [it for it in self.items if it.band is None]

    @property
    def unassigned_fraction(self) -> float:
        tot = sum(it.multiplicity for it in self.items)
        return sum(it.multiplicity for it in self.unassigned()) / tot if tot else 0.0

    @property
    def spectral_radius(self) -> float:
        return max((it.modulus for it in self.items), default=0.0)

    def values(self, k: int | None = None) -> np.ndarray:
        its = self.items if k is None else self.band(k)
        return np.array([it.value for it in its for _ in range(it.multiplicity)])

    def csv_rows(self) -> list[tuple]:
        return [(self.N, self.E, self.source, "" if it.band is None else it.band, it.value.real, it.value.imag,
                 it.modulus, it.phase, it.multiplicity) for it in self.items]


CSV_HEADER = ("N", "E", "source", "band", "re", "im", "modulus", "phase", "multiplicity")


def band_radius(lam: float, k: int) -> float:
    return lam ** (0.5 - k)


def _group(values: np.ndarray, rtol: float = CLUSTER_RTOL) -> list[tuple[complex, int]]:
    """Cluster nearly equal values; returns (mean, multiplicity) in descending modulus."""
    vals = sorted(np.asarray(values, dtype=complex), key=lambda v: (-abs(v), math.atan2(v.imag, v.real)))
    groups: list[list[complex]] = []
    for v in vals:
        for g in groups:
            if abs(v - g[0]) <= rtol * max(abs(g[0]), 1e-300):
                g.append(v)
                break
        else:
            groups.append([v])
    out = [(complex(np.mean(g)), len(g)) for g in groups]
    out.sort(key=lambda t: (-abs(t[0]), math.atan2(t[0].imag, t[0].real)))
    return out


def classify_band(z: complex, lam: float, band_tol: float, kmax: int = 64) -> int | None:
    m = abs(z)
    if m <= 0:
        return None
    k = int(round(0.5 - math.log(m) / math.log(lam)))
    for kk in (k - 1, k, k + 1):
        if 0 <= kk <= kmax and abs(m - band_radius(lam, kk)) <= band_tol * band_radius(lam, kk):
            return kk
    return None


def _resonance_set(values, lam, source, N, E, band_tol, bands=None) -> ResonanceSet:
    items = []
    for v, mult in _group(values):
        band = classify_band(v, lam, band_tol) if bands is None else bands(v)
        items.append(Resonance(v, abs(v), math.atan2(v.imag, v.real), band, mult))
    return ResonanceSet(tuple(items), lam, source, N, E, band_tol)


def resonances_exact(A: Automorphism, N: int, E: int = 1, kmax: int = 3) -> ResonanceSet:
    """{lam^(1/2 - k) e^{i phi_j}}: D points per band, e^{i phi_j} the propagator eigenvalues."""
    if N == 0:
        raise SpectralError("N = 0 has no propagator; constants are fixed with eigenvalue lam")
    if kmax < 0:
        raise SpectralError("kmax must be >= 0")
    D = abs(E * N)
    U = quantum_propagator(A, D)
    if N < 0:
        U = U.conj()
    phases = np.linalg.eigvals(U)
    phases = phases / np.abs(phases)
    items = []
    for k in range(kmax + 1):
        rad = band_radius(A.lam, k)
        for v, mult in _group(rad * phases):
            items.append(Resonance(v, abs(v), math.atan2(v.imag, v.real), k, mult))
    return ResonanceSet(tuple(items), A.lam, "exact", N, E)


# ---------------------------------------------------------------- basis

@dataclass(frozen=True)
class TwistedBasis:
    """Sections of the degree-D bundle indexed by residue j mod D and Hermite level 0 .. 2 cutoff."""
    D: int
    cutoff: int

    def __post_init__(self):
        if int(self.D) != self.D or self.D < 1:
            raise SpectralError(f"D must be a positive integer, got {self.D!r}")
        if int(self.cutoff) != self.cutoff or self.cutoff < 1:
            raise SpectralError(f"cutoff must be a positive integer, got {self.cutoff!r}")

    @property
    def levels(self) -> int:
        return 2 * self.cutoff + 1

    @property
    def size(self) -> int:
        return self.D * self.levels

    def labels(self) -> list[tuple[int, int]]:
        """(residue j, transverse index m in [-cutoff, cutoff]); m + cutoff is the Hermite level."""
        return [(j, lvl - self.cutoff) for j in range(self.D) for lvl in range(self.levels)]

    def evaluate(self, x, y, levels: int | None = None) -> np.ndarray:
        """Values of all basis sections at points (x, y); shape (D, levels) + x.shape."""
        return sections(self.D, (self.levels if levels is None else levels) - 1, x, y)

    def quasi_periodicity_defect(self, x, y) -> float:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        b = self.evaluate(x, y)
        bx = self.evaluate(x + 1, y)
        by = self.evaluate(x, y + 1)
        D = self.D
        e1 = np.abs(bx - np.exp(-1j * math.pi * D * y) * b).max()
        e2 = np.abs(by - np.exp(1j * math.pi * D * x) * b).max()
        return float(max(e1, e2))


def sections(D: int, lmax: int, x, y) -> np.ndarray:
    """b_{j,l}(x, y) for j < D, l <= lmax; shape (D, lmax + 1) + x.shape."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sc = math.sqrt(2 * math.pi * D)
    reach = (math.sqrt(2 * lmax + 1) + 12.0) / sc
    res = np.zeros((D, lmax + 1) + x.shape, dtype=complex)
    if x.size == 0:
        return res
    lo = int(math.floor(y.min() - reach)) - 1
    hi = int(math.ceil(y.max() + reach)) + 1
    for j in range(D):
        for n in range(lo, hi + 1):
            s = n + j / D
            t = y - s
            mask = np.abs(t) < reach
            if not mask.any():
                continue
            H = hermite_functions(lmax, sc * t[mask]) * math.sqrt(sc)
            res[j][:, mask] += np.exp(2j * math.pi * D * s * x[mask]) * H
    return res * np.exp(-1j * math.pi * D * x * y)


# ---------------------------------------------------------------- weight

def escape_weight(r: float, N: int, zeta_p, zeta_q):
    """W(zeta) = ((1 + 2 pi N zeta_q^2) / (1 + 2 pi N zeta_p^2))^(r/2).

    Equal to 1 at the origin, decays like |zeta_p|^-r along the stable frequency axis and grows
    like |zeta_q|^r along the unstable one.
    """
    if not r > 1:
        raise SpectralError("escape weight needs r > 1")
    s = 2 * math.pi * max(abs(N), 1)
    zp = np.asarray(zeta_p, dtype=float)
    zq = np.asarray(zeta_q, dtype=float)
    return ((1 + s * zq * zq) / (1 + s * zp * zp)) ** (r / 2)


def weight_angle(A: Automorphism) -> float:
    """Rotation aligning the Hermite oscillator with the stable direction of A."""
    return math.atan2(-A.beta, A.alpha)


# ---------------------------------------------------------------- truncated transfer matrix

@dataclass(frozen=True)
class GridSpec:
    Gx: int
    Gy: int
    s_max: float
    s_points: int


def required_grid(A: Automorphism, basis: TwistedBasis, extra: int) -> GridSpec:
    """Grid with 4 samples per period of the largest represented frequency of the pulled-back sections."""
    D = basis.D
    n = basis.levels + extra
    Ainv = A.inverse_matrix.astype(float)
    stretch = float(np.abs(Ainv).sum(axis=1).max())
    sc = math.sqrt(2 * math.pi * D)
    t_max = (math.sqrt(2 * n + 1) + 4.0) / sc
    fx = stretch * (1.0 + t_max) * D
    fy = stretch * sc * (math.sqrt(2 * n + 1) + 4.0) / (2 * math.pi)
    Gx = 2 * int(math.ceil(2 * fx))
    Gy = 2 * int(math.ceil(2 * fy))
    s_max = math.sqrt(2 * basis.levels + 1) + 12.0
    # Hermite level L oscillates at up to sqrt(2L + 1) rad per unit s; 4 samples per radian
    s_points = int(math.ceil(2 * s_max * 4 * math.sqrt(2 * basis.levels + 1) / math.pi)) + 1
    return GridSpec(Gx, Gy, s_max, s_points)


@dataclass(frozen=True)
class TransferMatrix:
    entries: np.ndarray
    basis: TwistedBasis
    r: float
    A: Automorphism
    N: int
    E: int
    grid: GridSpec | None = None

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def weight_matrices(basis: TwistedBasis, r: float, theta: float, extra: int) -> tuple[np.ndarray, np.ndarray]:
    """Weight W and inverse weight on Hermite levels, per residue block (n x n and (n + extra) x n)."""
    n = basis.levels
    W = _multiplier_matrix(lambda s: (1 + s * s) ** (-r / 2), n, theta)
    Wi = _multiplier_matrix(lambda s: (1 + s * s) ** (r / 2), n + extra, theta)[:, :n]
    return W, Wi


def transfer_matrix(A: Automorphism, N: int, E: int, basis: TwistedBasis, r: float = DEFAULT_R,
                    grid: GridSpec | None = None, extra: int | None = None) -> TransferMatrix:
    """Matrix of W F W^-1 restricted to the basis, F h = lam h o F^-1 on mode N.

    Columns: the inverse weight is applied in the Hermite basis (with ``extra`` additional levels),
    the section is pulled back on a grid, split by an FFT in x into its line functions per residue,
    weighted through the rotated multiplier, and projected on the Hermite levels.
    """
    if N == 0:
        raise SpectralError("N = 0: the transfer operator fixes constants with eigenvalue lam; no bundle basis")
    if not preserves_lattice(A, LatticeSpec(E)):
        raise SpectralError(f"A does not preserve the lattice with E = {E}")
    D = abs(E * N)
    if basis.D != D:
        raise SpectralError(f"basis degree {basis.D} does not match E N = {D}")
    if not r > 0:
        raise SpectralError("r must be positive")
    extra = int(math.ceil(r)) if extra is None else int(extra)
    need = required_grid(A, basis, extra)
    grid = need if grid is None else grid
    if grid.Gx < need.Gx or grid.Gy < need.Gy or grid.s_points < need.s_points or grid.s_max < need.s_max:
        raise ResolutionError(f"grid {grid} is coarser than required {need}")
    theta = weight_angle(A)
    if abs(math.sin(theta)) < 0.05:
        raise SpectralError("stable direction too close to a coordinate axis for the rotation kernel")
    n = basis.levels
    nc = n + extra
    lam = A.lam
    _, Wi = weight_matrices(basis, r, theta, extra)
    Ai = A.inverse_matrix
    gx = np.arange(grid.Gx) / grid.Gx
    gy = np.arange(grid.Gy) / grid.Gy
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    Xp = Ai[0, 0] * X + Ai[0, 1] * Y
    Yp = Ai[1, 0] * X + Ai[1, 1] * Y
    sc = math.sqrt(2 * math.pi * D)
    freqs = np.fft.fftfreq(grid.Gx, 1.0 / grid.Gx).astype(int)
    s_out = np.linspace(-grid.s_max, grid.s_max, grid.s_points)
    ds_out = s_out[1] - s_out[0]
    Hrow = hermite_functions(n - 1, s_out) * (1 + s_out ** 2) ** (-r / 2) * np.exp(1j * theta * np.arange(n))[:, None]
    # coefficient arrays a[j, m, freq, y] of the periodic factor of each pulled-back column
    a = np.empty((D, n, grid.Gx, grid.Gy), dtype=complex)
    phase = np.exp(1j * math.pi * D * X * Y)
    Ep = sections(D, nc - 1, Xp.ravel(), Yp.ravel()).reshape(D, nc, grid.Gx, grid.Gy)
    for j in range(D):
        # column (j, m): lam * sum_k Wi[k, m] b_{j,k} o A^-1
        cols = lam * (Wi.T @ Ep[j].reshape(nc, -1)).reshape(n, grid.Gx, grid.Gy)
        a[j] = np.fft.fft(cols * phase, axis=1) / grid.Gx
    del Ep
    M = np.zeros((D, n, D, n), dtype=complex)
    for jp in range(D):
        sel = np.nonzero(np.mod(freqs, D) == jp)[0]
        ls = (freqs[sel] - jp) // D
        # line function psi_jp(t) on t = y - l - jp / D, sampled with spacing 1 / Gy
        t = (gy[None, :] - ls[:, None] - jp / D).ravel()
        psi = a[:, :, sel, :].reshape(D, n, -1)
        order = np.argsort(t)
        t = t[order]
        psi = psi[:, :, order]
        mag = np.abs(psi).max(axis=(0, 1))
        keep = mag > 1e-16 * max(mag.max(), 1e-300)
        if not keep.any():
            continue
        i0, i1 = np.nonzero(keep)[0][[0, -1]]
        t = t[i0:i1 + 1]
        psi = psi[:, :, i0:i1 + 1] / math.sqrt(sc)
        s_in = sc * t
        ds_in = sc / grid.Gy
        K = _frft_kernel(theta, s_out, s_in) * ds_in
        rotated = psi.reshape(D * n, -1) @ K.T
        M[jp] = (Hrow @ (rotated * ds_out).T).reshape(n, D, n)
    entries = M.reshape(D * n, D * n)
    if N < 0:
        entries = entries.conj()
    if not np.all(np.isfinite(entries)):
        raise SpectralError("non-finite matrix entries")
    return TransferMatrix(entries, basis, float(r), A, int(N), int(E), grid)


def resonances_numeric(M: TransferMatrix, band_tol: float = DEFAULT_BAND_TOL) -> ResonanceSet:
    """All eigenvalues of the truncated matrix, classified into bands of radius lam^(1/2 - k)."""
    if not 0 < band_tol < 0.5:
        raise SpectralError("band_tol must lie in (0, 0.5)")
    try:
        ev = scipy.linalg.eigvals(M.entries)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise SpectralError(f"eigensolver failed: {exc}") from exc
    return _resonance_set(ev, M.A.lam, "numeric", M.N, M.E, band_tol)


def band_comparison(exact: ResonanceSet, numeric: ResonanceSet, k: int = 0) -> dict:
    """Match band-k values greedily by distance; report the worst modulus and phase deviations."""
    ex = list(exact.values(k))
    nu = list(numeric.values(k))
    dmod, dph = [], []
    for z in ex:
        if not nu:
            break
        i = int(np.argmin([abs(w - z) for w in nu]))
        w = nu.pop(i)
        dmod.append(abs(abs(w) - abs(z)) / abs(z))
        dph.append(abs(math.remainder(math.atan2(w.imag, w.real) - math.atan2(z.imag, z.real), 2 * math.pi)))
    return {
        "band": k,
        "count_exact": exact.count(k),
        "count_numeric": numeric.count(k),
        "max_modulus_rel": max(dmod) if dmod else math.nan,
        "max_phase": max(dph) if dph else math.nan,
    }


# ---------------------------------------------------------------- spectral decomposition

@dataclass
class SpectralDecomposition:
    eigenvalues: list[complex]
    projectors: list[np.ndarray]
    nilpotents: list[np.ndarray]
    P0: np.ndarray
    eta: float
    degrees: list[int]
    condition: float
    matrix: np.ndarray = field(repr=False, default=None)
    source: "TransferMatrix | None" = field(repr=False, default=None)

    def identity_defect(self) -> float:
        n = self.P0.shape[0]
        return float(np.abs(sum(self.projectors, np.zeros((n, n))) + self.P0 - np.eye(n)).max())

    def commutation_defect(self) -> float:
        worst = 0.0
        for i, P in enumerate(self.projectors):
            for k, Pk in enumerate(self.projectors):
                target = P if i == k else 0 * P
                worst = max(worst, float(np.abs(P @ Pk - target).max()))
                Qk = self.nilpotents[k]
                tq = Qk if i == k else 0 * Qk
                worst = max(worst, float(np.abs(P @ Qk - tq).max()), float(np.abs(Qk @ P - tq).max()))
        return worst

    def remainder_norms(self, nmax: int = 10) -> np.ndarray:
        """||M^n P0||_2 for n = 0 .. nmax."""
        out = []
        R = self.P0.copy()
        for _ in range(nmax + 1):
            out.append(np.linalg.norm(R, 2))
            R = self.matrix @ R
        return np.array(out)

    def remainder_constant(self, nmax: int = 10) -> float:
        """Smallest C with ||M^n P0|| <= C eta^n for n <= nmax."""
        norms = self.remainder_norms(nmax)
        return float(np.max(norms / self.eta ** np.arange(nmax + 1)))

    def to_dict(self) -> dict:
        def mat(m):
            return [[[float(v.real), float(v.imag)] for v in row] for row in np.asarray(m)]
        return {
            "eta": self.eta,
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "degrees": list(self.degrees),
            "condition": self.condition,
            "projectors": [mat(P) for P in self.projectors],
            "nilpotents": [mat(Q) for Q in self.nilpotents],
            "P0": mat(self.P0),
        }


def _cluster_projector(Mx: np.ndarray, select) -> np.ndarray:
    """Spectral projector onto the eigenvalues picked by ``select`` (Schur form plus Sylvester)."""
    T, Z, sdim = scipy.linalg.schur(Mx, output="complex", sort=select)
    n = Mx.shape[0]
    if sdim == 0:
        return np.zeros_like(Mx)
    if sdim == n:
        return np.eye(n, dtype=complex)
    T11, T12, T22 = T[:sdim, :sdim], T[:sdim, sdim:], T[sdim:, sdim:]
    Y = scipy.linalg.solve_sylvester(T11, -T22, -T12)
    PT = np.zeros((n, n), dtype=complex)
    PT[:sdim, :sdim] = np.eye(sdim)
    PT[:sdim, sdim:] = -Y
    return Z @ PT @ Z.conj().T


def spectral_decomposition(M, eta: float) -> SpectralDecomposition:
    """Projectors P_j and nilpotents Q_j of the eigenvalue clusters of modulus > eta, and P0."""
    Mx = np.asarray(M.entries if isinstance(M, TransferMatrix) else M, dtype=complex)
    if not eta > 0:
        raise SpectralError("eta must be positive")
    ev = scipy.linalg.eigvals(Mx)
    if np.any(np.abs(np.abs(ev) - eta) < 1e-6):
        raise SpectralError(f"eta = {eta} collides with an eigenvalue modulus")
    outer = ev[np.abs(ev) > eta]
    clusters = _group(outer)
    n = Mx.shape[0]
    scale = max(np.linalg.norm(Mx, 2), 1e-300)
    Ps, Qs, degs, vals = [], [], [], []
    for z, _mult in clusters:
        radius = max(CLUSTER_RTOL * abs(z), 1e-12)
        P = _cluster_projector(Mx, lambda w, z=z, radius=radius: abs(w - z) <= 10 * radius)
        Q = (Mx - z * np.eye(n)) @ P
        d = 0
        if np.abs(Q).max() <= NILPOTENT_TOL * scale:
            Q = np.zeros_like(Q)
        else:
            R = Q.copy()
            while np.abs(R).max() > NILPOTENT_TOL * scale and d < n:
                R = R @ Q
                d += 1
        Ps.append(P)
        Qs.append(Q)
        degs.append(d)
        vals.append(z)
    P0 = np.eye(n, dtype=complex) - sum(Ps, np.zeros((n, n), dtype=complex))
    # projector norms measure how close distinct clusters are; a Jordan block alone does not inflate them
    cond = max((float(np.linalg.norm(P, 2)) for P in Ps + [P0]), default=1.0)
    if cond > COND_MAX:
        raise SpectralError(f"spectral projector norm {cond:.3g} exceeds {COND_MAX:g}")
    return SpectralDecomposition(vals, Ps, Qs, P0, float(eta), degs, cond, Mx,
                                 M if isinstance(M, TransferMatrix) else None)


def build_basis(D: int, cutoff: int) -> TwistedBasis:
    """Basis of size D (2 cutoff + 1) for sections of the degree-D bundle."""
    return TwistedBasis(int(D), int(cutoff))


# ---------------------------------------------------------------- coefficient vectors and functions

def cell_grid(G: int) -> tuple[np.ndarray, np.ndarray]:
    g = np.arange(G) / G
    return np.meshgrid(g, g, indexing="ij")


def basis_coefficients(h, basis: TwistedBasis, N: int, G: int = 96) -> tuple[np.ndarray, float]:
    """Coefficients <b_{j,l}, h_N> over the unit cell and the relative L^2 residual of the projection.

    ``h`` is an observable whose mode N has degree D = basis.D; h_N(x, y, 0) is a section of
    the degree-D bundle, so conj(b) h_N is periodic and the trapezoid rule converges spectrally.
    """
    mode = h.mode_project(N)
    if abs(N) * h.E != basis.D:
        raise SpectralError(f"mode N = {N} at E = {h.E} has degree {abs(N) * h.E}, basis has {basis.D}")
    X, Y = cell_grid(G)
    vals = mode.eval(np.stack([X, Y, np.zeros_like(X)], axis=-1))
    b = basis.evaluate(X, Y)
    if N < 0:
        b = b.conj()
    c = np.einsum("jlxy,xy->jl", b.conj(), vals) / G ** 2
    rec = np.einsum("jl,jlxy->xy", c, b)
    total = float(np.sqrt(np.mean(np.abs(vals) ** 2)))
    resid = float(np.sqrt(np.mean(np.abs(vals - rec) ** 2)))
    return c, (resid / total if total > 0 else 0.0)


def weighted_vector(c: np.ndarray, M: "TransferMatrix", extra: int | None = None) -> np.ndarray:
    """Weighted coefficients v with Wi v = c per residue block, flattened (least squares).

    The columns of M are built from the functions Wi e_m, so this is the inverse of
    ``unweighted_coefficients`` on the truncated space.
    """
    extra = int(math.ceil(M.r)) if extra is None else int(extra)
    _, Wi = weight_matrices(M.basis, M.r, weight_angle(M.A), extra)
    if M.N < 0:
        Wi = Wi.conj()
    c = np.asarray(c).reshape(M.basis.D, -1)
    pad = np.zeros((c.shape[0], Wi.shape[0]), dtype=complex)
    pad[:, :min(c.shape[1], Wi.shape[0])] = c[:, :Wi.shape[0]]
    v, *_ = np.linalg.lstsq(Wi, pad.T, rcond=None)
    return v.T.reshape(-1)


def unweighted_coefficients(v: np.ndarray, M: "TransferMatrix", extra: int | None = None) -> np.ndarray:
    """Inverse weight applied to a weighted vector; returns (D, levels + extra) section coefficients."""
    extra = int(math.ceil(M.r)) if extra is None else int(extra)
    _, Wi = weight_matrices(M.basis, M.r, weight_angle(M.A), extra)
    if M.N < 0:
        Wi = Wi.conj()
    return np.asarray(v).reshape(M.basis.D, -1) @ Wi.T


def section_values(c: np.ndarray, D: int, N_sign: int, pts: np.ndarray) -> np.ndarray:
    """exp(2 pi i D z) sum c_{j,l} b_{j,l}(x, y) at symplectic points (P, 3); conjugated for N < 0."""
    c = np.asarray(c)
    b = sections(D, c.shape[1] - 1, pts[:, 0], pts[:, 1])
    if N_sign < 0:
        return np.einsum("jl,jlp->p", c, b.conj()) * np.exp(-2j * math.pi * D * pts[:, 2])
    return np.einsum("jl,jlp->p", c, b) * np.exp(2j * math.pi * D * pts[:, 2])


# ---------------------------------------------------------------- cutoff convergence

def doubling_change(coarse: ResonanceSet, fine: ResonanceSet, k: int = 0) -> float:
    """max |z_coarse - z_fine| / |z_fine| over greedily matched band-k values; inf if counts differ."""
    a = list(coarse.values(k))
    b = list(fine.values(k))
    if len(a) != len(b) or not b:
        return math.inf
    worst = 0.0
    for z in b:
        i = int(np.argmin([abs(w - z) for w in a]))
        worst = max(worst, abs(a.pop(i) - z) / abs(z))
    return worst


@dataclass
class ConvergenceStudy:
    N: int
    E: int
    cutoffs: list[int]
    numeric: list[ResonanceSet]
    exact: ResonanceSet
    changes: list[float]
    comparison: dict
    seconds: list[float]
    matrix: TransferMatrix = field(repr=False, default=None)

    @property
    def certified(self) -> bool:
        return bool(self.changes) and self.changes[-1] < DOUBLING_TOL

    def summary(self) -> dict:
        return {"N": self.N, "E": self.E, "D": abs(self.N) * self.E, "cutoffs": self.cutoffs,
                "doubling_changes": self.changes, "certified": self.certified,
                "seconds": self.seconds, **self.comparison}


DOUBLING_TOL = 0.01


def convergence_study(A: Automorphism, N: int, E: int, cutoffs, r: float = DEFAULT_R,
                      band_tol: float = DEFAULT_BAND_TOL, kmax: int = 3) -> ConvergenceStudy:
    """Numeric band-0 spectra at successive cutoffs, their changes, and the comparison with the exact oracle."""
    import time

    exact = resonances_exact(A, N, E, kmax)
    sets, secs = [], []
    M = None
    for c in cutoffs:
        t0 = time.perf_counter()
        M = transfer_matrix(A, N, E, TwistedBasis(abs(N) * E, int(c)), r)
        sets.append(resonances_numeric(M, band_tol))
        secs.append(time.perf_counter() - t0)
    changes = [doubling_change(a, b) for a, b in zip(sets[:-1], sets[1:])]
    return ConvergenceStudy(N, E, [int(c) for c in cutoffs], sets, exact, changes,
                            band_comparison(exact, sets[-1], 0), secs, M)
