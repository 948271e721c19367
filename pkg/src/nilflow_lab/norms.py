"""Bargmann transform and the escape-weighted norm of a fibre mode, in a single chart.

The coherent state at (x, xi) in R^2 x R^2 with frequency N is

    phi_{x,xi}(y) = sqrt(2N) exp(pi i N xi . (2y - x) - pi N |y - x|^2),

normalised in L^2(R^2).  With B h(x, xi) = <phi_{x,xi}, h> one has B*B = id for the measure
N^2 dx dxi.  The kernel is a product of two one-dimensional kernels, so the transform is two
tensor contractions.

A mode observable h of frequency N is read in the chart around a base point g0 as

    h_loc(y) = rho(y) h(g0 . (y1, y2, 0)),   rho(y) = exp(-pi |N y|^2 / chart_scale^2),

so the chart shrinks like 1/|N|, as the semiclassical scale requires.  The norm is the
weighted L^2 norm of B h_loc, with the escape weight evaluated at the stable and unstable
frequency components of xi.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .heis import Automorphism, flow_reduce_arr, mul_arr
from .observables import Observable, ThetaAtom
from .spectral import ResolutionError, escape_weight

# trapezoid rules on Gaussians of width 1/sqrt(N): spacing s gives aliasing error ~ exp(-pi / (N s^2))
X_SPACING = 0.35
Y_SPACING = 0.25
Y_SAMPLES_PER_PERIOD = 4
EDGE_TOL = 1e-10
DEFAULT_CHART_SCALE = 0.5
GROW = 1.35
ROUNDOFF = 1e-14
GROW_TRIES = 8


@dataclass(frozen=True)
class BargmannGrid:
    """Square grids: y in [-y_half, y_half], x in [-x_half, x_half], xi in [-xi_half, xi_half]."""
    N: int
    y_half: float
    ny: int
    x_half: float
    nx: int
    xi_half: float
    nxi: int

    @property
    def y(self) -> np.ndarray:
        return np.linspace(-self.y_half, self.y_half, self.ny)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.x_half, self.x_half, self.nx)

    @property
    def xi(self) -> np.ndarray:
        return np.linspace(-self.xi_half, self.xi_half, self.nxi)

    @staticmethod
    def _step(half: float, n: int) -> float:
        return 2 * half / (n - 1) if n > 1 else math.inf

    @property
    def dy(self) -> float:
        return self._step(self.y_half, self.ny)

    @property
    def dx(self) -> float:
        return self._step(self.x_half, self.nx)

    @property
    def dxi(self) -> float:
        return self._step(self.xi_half, self.nxi)

    def check(self):
        """Raise ResolutionError unless every grid resolves the Gaussian width 1/sqrt(N)."""
        if self.N < 1:
            raise ResolutionError("the Bargmann transform needs N >= 1")
        w = 1.0 / math.sqrt(self.N)
        need_dy = min(Y_SPACING * w, 1.0 / (Y_SAMPLES_PER_PERIOD * self.N * max(self.xi_half, 1e-300)))
        problems = []
        if self.dy > need_dy * (1 + 1e-12):
            problems.append(f"dy = {self.dy:.4g} > {need_dy:.4g}")
        if self.dx > X_SPACING * w * (1 + 1e-12):
            problems.append(f"dx = {self.dx:.4g} > {X_SPACING * w:.4g}")
        if self.dxi > X_SPACING * w * (1 + 1e-12):
            problems.append(f"dxi = {self.dxi:.4g} > {X_SPACING * w:.4g}")
        if problems:
            raise ResolutionError("under-resolved Bargmann grid: " + "; ".join(problems))


def make_grid(N: int, y_half: float, x_half: float, xi_half: float) -> BargmannGrid:
    """Smallest grid meeting the resolution rule for the given half-widths."""
    if N < 1:
        raise ResolutionError("the Bargmann transform needs N >= 1")
    w = 1.0 / math.sqrt(N)
    dy = min(Y_SPACING * w, 1.0 / (Y_SAMPLES_PER_PERIOD * N * xi_half))
    ny = 2 * int(math.ceil(y_half / dy)) + 1
    nx = 2 * int(math.ceil(x_half / (X_SPACING * w))) + 1
    nxi = 2 * int(math.ceil(xi_half / (X_SPACING * w))) + 1
    return BargmannGrid(N, y_half, ny, x_half, nx, xi_half, nxi)


def _kernel_1d(N: int, x: np.ndarray, xi: np.ndarray, y: np.ndarray) -> np.ndarray:
    """conj(phi) along one axis, shape (nx, nxi, ny); the 2-d kernel is the product of two."""
    X = x[:, None, None]
    XI = xi[None, :, None]
    Y = y[None, None, :]
    return (2 * N) ** 0.25 * np.exp(-1j * math.pi * N * XI * (2 * Y - X) - math.pi * N * (Y - X) ** 2)


def bargmann_transform(values: np.ndarray, grid: BargmannGrid) -> np.ndarray:
    """B h on the (x1, xi1, x2, xi2) grid from samples h(y1, y2) on grid.y x grid.y."""
    grid.check()
    H = np.asarray(values, dtype=complex)
    if H.shape != (grid.ny, grid.ny):
        raise ValueError(f"samples must have shape {(grid.ny, grid.ny)}, got {H.shape}")
    K = _kernel_1d(grid.N, grid.x, grid.xi, grid.y).reshape(grid.nx * grid.nxi, grid.ny)
    T = K @ H * grid.dy              # (x1 xi1, y2)
    out = T @ K.T * grid.dy          # (x1 xi1, x2 xi2)
    return out.reshape(grid.nx, grid.nxi, grid.nx, grid.nxi)


def bargmann_inner(Bf: np.ndarray, Bg: np.ndarray, grid: BargmannGrid) -> complex:
    """<f, g> recovered from the transforms: N^2 times the integral of conj(Bf) Bg."""
    cell = (grid.dx * grid.dxi) ** 2
    return complex(grid.N ** 2 * np.vdot(Bf, Bg) * cell)


def reconstruction_defect(N: int = 4) -> float:
    """Relative error of <f, g> recovered through the Bargmann transform for two Gaussians."""
    grid = make_grid(N, 3.0, 1.8, 3.0)
    Y1, Y2 = np.meshgrid(grid.y, grid.y, indexing="ij")
    f = np.exp(-math.pi * ((Y1 - 0.2) ** 2 + Y2 ** 2) / 0.3 ** 2)
    g = np.exp(-math.pi * (Y1 ** 2 + (Y2 + 0.1) ** 2) / 0.4 ** 2) * np.exp(3j * math.pi * Y1)
    direct = np.vdot(f, g) * grid.dy ** 2
    via = bargmann_inner(bargmann_transform(f, grid), bargmann_transform(g, grid), grid)
    return float(abs(via - direct) / abs(direct))


def edge_fractions(field: np.ndarray, floor=0.0) -> tuple[float, float]:
    """Largest |value| on the x faces and on the xi faces of the box, relative to the largest overall.

    ``floor`` (scalar or broadcastable array) is subtracted first, so round-off amplified by a
    weight does not count as signal.
    """
    a = np.maximum(np.abs(field) - floor, 0.0)
    top = a.max()
    if top == 0:
        return 0.0, 0.0
    ex = max(a[[0, -1]].max(), a[:, :, [0, -1]].max())
    exi = max(a[:, [0, -1]].max(), a[:, :, :, [0, -1]].max())
    return float(ex / top), float(exi / top)


def edge_fraction(field: np.ndarray) -> float:
    return max(edge_fractions(field))


# ---------------------------------------------------------------- chart data

def chart_samples(h: Observable, grid: BargmannGrid, g0=(0.0, 0.0, 0.0),
                  chart_width: float = DEFAULT_CHART_SCALE) -> np.ndarray:
    """rho(y) h(g0 . (y, 0)) on grid.y x grid.y, rho a Gaussian of width chart_width."""
    y = grid.y
    Y1, Y2 = np.meshgrid(y, y, indexing="ij")
    local = np.stack([Y1, Y2, np.zeros_like(Y1)], axis=-1)
    base = np.broadcast_to(np.asarray(g0, dtype=float), local.shape)
    pts = mul_arr(base, local)
    rho = np.exp(-math.pi * (Y1 ** 2 + Y2 ** 2) / chart_width ** 2)
    return rho * h.eval(pts)


def frequency_components(A: Automorphism, xi1: np.ndarray, xi2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(zeta_p, zeta_q): components of xi along the stable and unstable directions of A."""
    W = A.W
    U = A.unstable
    U = U / np.linalg.norm(U)
    zp = xi1 * W[0] + xi2 * W[1]
    zq = xi1 * U[0] + xi2 * U[1]
    return zp, zq


def weight_field(A: Automorphism, r: float, grid: BargmannGrid) -> np.ndarray:
    xi = grid.xi
    XI1, XI2 = np.meshgrid(xi, xi, indexing="ij")
    zp, zq = frequency_components(A, XI1, XI2)
    Wt = escape_weight(r, grid.N, zp, zq)
    return Wt[None, :, None, :]


@dataclass(frozen=True)
class NormResult:
    N: int
    r: float
    value: float
    edge: float
    grid: BargmannGrid


def auto_grid(N: int, r: float, chart_width: float) -> BargmannGrid:
    """Starting grid for chart data; anisotropic_norm widens it until the weighted field fits."""
    y_half = 3.4 * chart_width
    x_half = y_half + 3.0 / math.sqrt(N)
    xi_half = (2.0 + 0.3 * r) * (1.0 / math.sqrt(N) + 1.0 / (N * chart_width))
    return make_grid(N, y_half, x_half, xi_half)


def anisotropic_norm(h: Observable, N: int, A: Automorphism, r: float = 8.0, grid: BargmannGrid | None = None,
                     g0=(0.0, 0.0, 0.0), chart_scale: float = DEFAULT_CHART_SCALE) -> NormResult:
    """|| W^r_N B h_loc ||, the weighted L^2 norm of the Bargmann transform of the chart data of mode N."""
    if N == 0:
        raise ValueError("the anisotropic norm is defined for fibre modes N != 0")
    mode = h.mode_project(N)
    Nb = abs(N) * h.E
    chart_width = chart_scale / Nb
    adaptive = grid is None
    if adaptive:
        grid = auto_grid(Nb, r, chart_width)
    if grid.N != Nb:
        raise ValueError(f"grid was built for N = {grid.N}, mode needs {Nb}")
    if mode.is_zero():
        return NormResult(N, r, 0.0, 0.0, grid)
    for _ in range(GROW_TRIES if adaptive else 1):
        vals = chart_samples(mode, grid, g0, chart_width)
        if N < 0:
            vals = np.conj(vals)
        B = bargmann_transform(vals, grid)
        Wf = weight_field(A, r, grid)
        weighted = B * Wf
        ex, exi = edge_fractions(weighted, ROUNDOFF * np.abs(B).max() * Wf)
        if max(ex, exi) <= EDGE_TOL:
            break
        grid = make_grid(Nb, grid.y_half, grid.x_half * (GROW if ex > EDGE_TOL else 1.0),
                         grid.xi_half * (GROW if exi > EDGE_TOL else 1.0))
    edge = max(ex, exi)
    if edge > EDGE_TOL:
        raise ResolutionError(f"weighted transform not contained in the grid (edge fraction {edge:.3g})")
    cell = (grid.dx * grid.dxi) ** 2
    value = math.sqrt(Nb ** 2 * float(np.sum(np.abs(weighted) ** 2)) * cell)
    return NormResult(N, r, value, edge, grid)


# ---------------------------------------------------------------- fixed smooth family

def smooth_family(N: int, width: float = 0.3, fibre_width: float = 0.3) -> Observable:
    """Mode N of the fixed smooth function exp(-pi |v|^2 / width^2) g(z), g a periodised Gaussian of width fibre_width.

    The fibre Fourier coefficient of g at N is fibre_width exp(-pi fibre_width^2 N^2).
    """
    coeff = fibre_width * math.exp(-math.pi * fibre_width ** 2 * N ** 2)
    q = 1.0 / width ** 2
    atom = ThetaAtom((0.0, 0.0), ((q, 0.0), (0.0, q)), coeff)
    return Observable.theta(N, [atom])


# ---------------------------------------------------------------- dual pairing along a stable segment

def cnu_norm(phi, nu: int = 2, samples: int = 4001) -> float:
    """max_{j <= nu} sup |phi^(j)| on [0, 1], derivatives by finite differences of the sampled weight."""
    s = np.linspace(0.0, 1.0, samples)
    v = np.asarray(phi(s), dtype=float)
    ds = s[1] - s[0]
    best = float(np.abs(v).max())
    for _ in range(nu):
        v = np.gradient(v, ds)
        best = max(best, float(np.abs(v).max()))
    return best


def stable_pairing(h: Observable, phi, A: Automorphism, g0=(0.0, 0.0, 0.0), nodes: int = 400) -> complex:
    """int_0^1 phi(s) h(g0 . exp(s W)) ds along the unit stable segment (Gauss-Legendre)."""
    u, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (u + 1)
    pts = flow_reduce_arr(np.broadcast_to(np.asarray(g0, dtype=float), (nodes, 3)).copy(), s, A.W, h.E, A.W_lo)
    return complex(0.5 * np.sum(w * np.asarray(phi(s)) * h.eval(pts)))


@dataclass(frozen=True)
class PairingRow:
    N: int
    pairing: float
    norm: float
    phi_norm: float
    ratio: float


def dual_pairing_bound(h: Observable, N: int, phi, A: Automorphism, r: float = 8.0, nu: int = 2,
                       g0=(0.0, 0.0, 0.0), grid: BargmannGrid | None = None) -> PairingRow:
    """|int_gamma phi h_N| / (||h_N|| ||phi||_{C^nu}) for the unit stable segment gamma starting at g0."""
    mode = h.mode_project(N)
    pn = cnu_norm(phi, nu)
    if mode.is_zero():
        return PairingRow(N, 0.0, 0.0, pn, 0.0)
    pairing = abs(stable_pairing(mode, phi, A, g0))
    norm = anisotropic_norm(h, N, A, r, grid, g0).value
    ratio = pairing / (norm * pn) if norm * pn > 0 else math.inf
    return PairingRow(N, pairing, norm, pn, ratio)
