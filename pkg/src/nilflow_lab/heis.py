"""Heisenberg group arithmetic, the lattices Gamma_E, nilflows and toral automorphisms.

Points are stored in symplectic coordinates, where the group law reads

    (x, y, z) * (a, b, c) = (x + a, y + b, z + c + (x*b - y*a) / 2).

The polarized (matrix-entry) center coordinate is ``z + x*y/2``.
"""
from __future__ import annotations

import decimal
import math
from dataclasses import dataclass
from decimal import Decimal
from fractions import Fraction

import numpy as np

DEFAULT_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class HeisPoint:
    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "HeisPoint":
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def to_polarized(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.z + 0.5 * self.x * self.y)

    @classmethod
    def from_polarized(cls, x: float, y: float, zp: float) -> "HeisPoint":
        return cls(x, y, zp - 0.5 * x * y)


IDENTITY = HeisPoint(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class LatticeSpec:
    E: int = 1

    def __post_init__(self):
        if int(self.E) != self.E or self.E < 1:
            raise ValueError(f"lattice refinement E must be a positive integer, got {self.E!r}")


@dataclass(frozen=True)
class Automorphism:
    """Hyperbolic A in SL(2, Z) with its stable eigen-data.

    ``(alpha, beta)`` is the unit vector with ``A (alpha, beta) = (alpha, beta) / lam``.
    """
    a: int
    b: int
    c: int
    d: int
    lam: float
    alpha: float
    beta: float
    alpha_lo: float = 0.0
    beta_lo: float = 0.0

    @property
    def h_top(self) -> float:
        return math.log(self.lam)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]], dtype=np.int64)

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array([[self.d, -self.b], [-self.c, self.a]], dtype=np.int64)

    @property
    def W(self) -> np.ndarray:
        return np.array([self.alpha, self.beta])

    @property
    def W_lo(self) -> np.ndarray:
        """Rounding residue of W, so that W + W_lo is the eigenvector to about 32 digits.

        Nearby flow directions drift apart quadratically in time on the nilmanifold, so long
        orbits need the direction beyond double precision.
        """
        return np.array([self.alpha_lo, self.beta_lo])

    def power(self, k: int) -> np.ndarray:
        """Integer matrix A**k (k may be negative)."""
        base = self.matrix if k >= 0 else self.inverse_matrix
        return np.linalg.matrix_power(base, abs(k))

    @property
    def unstable(self) -> np.ndarray:
        """Unit unstable eigenvector (A u = lam u), sign fixed by a positive first nonzero entry."""
        u = np.array([self.b, self.lam - self.a], dtype=float)
        if abs(self.b) < 0.5:
            u = np.array([self.lam - self.d, self.c], dtype=float)
        u /= np.linalg.norm(u)
        if u[0] < 0 or (u[0] == 0 and u[1] < 0):
            u = -u
        return u


def stable_generator(a: int, b: int, c: int, d: int) -> Automorphism:
    a, b, c, d = (int(v) for v in (a, b, c, d))
    if a * d - b * c != 1:
        raise ValueError(f"det A = {a * d - b * c}, expected 1")
    tr = a + d
    if abs(tr) <= 2:
        raise ValueError(f"|trace A| = {abs(tr)} <= 2, A is not hyperbolic")
    with decimal.localcontext() as ctx:
        ctx.prec = 50
        disc = Decimal(tr * tr - 4).sqrt()
        # eigenvalue of modulus > 1; for negative trace it is negative
        mu = (tr + disc) / 2 if tr > 0 else (tr - disc) / 2
        inv = 1 / mu
        # (A - inv I) v = 0
        if b != 0:
            v = [Decimal(-b), a - inv]
        else:
            v = [d - inv, Decimal(-c)]
        norm = (v[0] * v[0] + v[1] * v[1]).sqrt()
        v = [v[0] / norm, v[1] / norm]
        if v[0] < 0 or (v[0] == 0 and v[1] < 0):
            v = [-v[0], -v[1]]
        hi = [float(c_) for c_ in v]
        lo = [float(c_ - Decimal(h_)) for c_, h_ in zip(v, hi)]
        lam = float(abs(mu))
    return Automorphism(a, b, c, d, lam, hi[0], hi[1], lo[0], lo[1])


# ---------------------------------------------------------------- array kernels
# The array forms take (..., 3) float arrays; the scalar API wraps them.

def mul_arr(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    out = np.empty(np.broadcast_shapes(g.shape, h.shape))
    out[..., 0] = g[..., 0] + h[..., 0]
    out[..., 1] = g[..., 1] + h[..., 1]
    out[..., 2] = g[..., 2] + h[..., 2] + 0.5 * (g[..., 0] * h[..., 1] - g[..., 1] * h[..., 0])
    return out


def flow_arr(g: np.ndarray, t, W) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=float)
    alpha, beta = W
    step = np.stack([alpha * t, beta * t, np.zeros_like(t)], axis=-1)
    return mul_arr(g, step)


def aut_arr(M: np.ndarray, g: np.ndarray) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    out = np.empty_like(g)
    out[..., 0] = M[0, 0] * g[..., 0] + M[0, 1] * g[..., 1]
    out[..., 1] = M[1, 0] * g[..., 0] + M[1, 1] * g[..., 1]
    out[..., 2] = g[..., 2]
    return out


def reduce_arr(g: np.ndarray, E: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Reduce points to the fundamental domain; returns (representatives, witnesses (p, q, r))."""
    g = np.asarray(g, dtype=float)
    p = -np.floor(g[..., 0])
    q = -np.floor(g[..., 1])
    x = g[..., 0] + p
    y = g[..., 1] + q
    # a tiny negative coordinate plus one rounds to exactly 1
    p = np.where(x >= 1.0, p - 1.0, p)
    x = np.where(x >= 1.0, x - 1.0, x)
    q = np.where(y >= 1.0, q - 1.0, q)
    y = np.where(y >= 1.0, y - 1.0, y)
    # gamma = polarized (p, q, r/E) = symplectic (p, q, r/E - p q / 2).  The integer part of
    # p q / 2 is folded into r exactly so that far-away points keep full precision.
    pq = p.astype(np.int64) * q.astype(np.int64)
    half = np.floor_divide(pq, 2)
    parity = (pq - 2 * half).astype(float)
    zp = g[..., 2] - 0.5 * parity + 0.5 * (p * y - q * x) + 0.5 * x * y
    r = -np.floor(zp * E)
    zp = zp + r / E
    # guard against rounding pushing zp onto the upper edge
    over = zp >= 1.0 / E
    zp = np.where(over, zp - 1.0 / E, zp)
    r = np.where(over, r - 1.0, r)
    zp = np.where(zp < 0, 0.0, zp)
    r = r + half.astype(float) * E
    out = np.stack([x, y, zp - 0.5 * x * y], axis=-1)
    return out, np.stack([p, q, r], axis=-1)


def two_sum(a, b):
    """Error-free sum: a + b = s + e exactly."""
    s = a + b
    bb = s - a
    e = (a - (s - bb)) + (b - bb)
    return s, e


_SPLIT = 134217729.0  # 2**27 + 1


def two_prod(a, b):
    """Error-free product (Dekker): a * b = p + e exactly."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    p = a * b
    ca = _SPLIT * a
    ah = ca - (ca - a)
    al = a - ah
    cb = _SPLIT * b
    bh = cb - (cb - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def flow_reduce_arr(g: np.ndarray, t, W, E: int = 1, W_lo=None) -> np.ndarray:
    """Reduced representatives of g * (alpha t, beta t, 0) for possibly large t.

    Rounding the horizontal coordinates of a far point at fixed center coordinate moves the
    reduced point by about |t| times the rounding error.  Here the rounding residue is carried
    exactly and absorbed as a right translation, so the error stays of order |t| * eps.
    """
    g = np.asarray(g, dtype=float)
    t = np.asarray(t, dtype=float)
    alpha, beta = W
    alpha_lo, beta_lo = (0.0, 0.0) if W_lo is None else W_lo
    ah, al = two_prod(alpha, t)
    bh, bl = two_prod(beta, t)
    al = al + alpha_lo * t
    bl = bl + beta_lo * t
    X, ex = two_sum(g[..., 0], ah)
    Y, ey = two_sum(g[..., 1], bh)
    xl = ex + al
    yl = ey + bl
    z = g[..., 2] + 0.5 * (g[..., 0] * bh - g[..., 1] * ah) + 0.5 * (g[..., 0] * bl - g[..., 1] * al)
    # (X + xl, Y + yl, z) = (X, Y, z - (X yl - Y xl) / 2) * (xl, yl, 0)
    zc = z - 0.5 * (X * yl - Y * xl)
    out = np.stack(np.broadcast_arrays(X, Y, zc), axis=-1)
    return reduce_arr(out, E)[0]


def aut_reduce_exact(M: np.ndarray, g, E: int = 1) -> np.ndarray:
    """Reduced representative of (M (x, y), z) computed in exact rational arithmetic.

    Float inputs are exact dyadic rationals and M is an integer matrix, so the image and its
    reduction are exact; only the final representative in the unit cell is rounded.  This keeps
    the stable-direction component of F^k x accurate for large k.
    """
    gx, gy, gz = (Fraction(float(v)) for v in np.asarray(g, dtype=float).ravel()[:3])
    m = [[int(M[0, 0]), int(M[0, 1])], [int(M[1, 0]), int(M[1, 1])]]
    X = m[0][0] * gx + m[0][1] * gy
    Y = m[1][0] * gx + m[1][1] * gy
    p = -math.floor(X)
    q = -math.floor(Y)
    x = X + p
    y = Y + q
    zp = gz - Fraction(p * q, 2) + (p * Y - q * X) / 2 + x * y / 2
    r = -math.floor(zp * E)
    zp += Fraction(r, E)
    return np.array([float(x), float(y), float(zp - x * y / 2)])


# ---------------------------------------------------------------- scalar API

def mul(g: HeisPoint, h: HeisPoint) -> HeisPoint:
    return HeisPoint(g.x + h.x, g.y + h.y, g.z + h.z + 0.5 * (g.x * h.y - g.y * h.x))


def inverse(g: HeisPoint) -> HeisPoint:
    return HeisPoint(-g.x, -g.y, -g.z)


def commutator(g: HeisPoint, h: HeisPoint) -> HeisPoint:
    return mul(mul(g, h), mul(inverse(g), inverse(h)))


def lattice_element(p: int, q: int, r: int, L: LatticeSpec) -> HeisPoint:
    """Symplectic coordinates of the polarized lattice element (p, q, r/E)."""
    return HeisPoint(float(p), float(q), r / L.E - 0.5 * p * q)


def is_lattice(g: HeisPoint, L: LatticeSpec, tol: float = DEFAULT_LATTICE_TOL) -> bool:
    if not tol > 0:
        raise ValueError("tol must be positive")
    p, q = round(g.x), round(g.y)
    if abs(g.x - p) > tol or abs(g.y - q) > tol:
        return False
    zE = (g.z + 0.5 * p * q) * L.E
    return abs(zE - round(zE)) <= tol * L.E


@dataclass(frozen=True)
class ReducedPoint:
    rep: HeisPoint
    witness: tuple[int, int, int]


def reduce(g: HeisPoint, L: LatticeSpec) -> ReducedPoint:
    rep, wit = reduce_arr(g.as_array(), L.E)
    return ReducedPoint(HeisPoint.from_array(rep), tuple(int(v) for v in wit))


def quotient_distance(g: HeisPoint, h: HeisPoint, L: LatticeSpec) -> float:
    return float(quotient_distance_arr(g.as_array(), h.as_array(), L.E))


def quotient_distance_arr(g: np.ndarray, h: np.ndarray, E: int = 1) -> np.ndarray:
    """Max-norm distance between Gamma g and Gamma h, searched over nearby lattice translates."""
    g, _ = reduce_arr(g, E)
    h, _ = reduce_arr(h, E)
    best = None
    for p in (-1, 0, 1):
        for q in (-1, 0, 1):
            gam = np.array([p, q, -0.5 * p * q], dtype=float)
            tg = mul_arr(np.broadcast_to(gam, g.shape), g)
            dx = tg[..., 0] - h[..., 0]
            dy = tg[..., 1] - h[..., 1]
            # compare centres in polarized form, modulo 1/E
            dzp = (tg[..., 2] + 0.5 * tg[..., 0] * tg[..., 1]) - (h[..., 2] + 0.5 * h[..., 0] * h[..., 1])
            dzp = dzp - np.round(dzp * E) / E
            d = np.maximum(np.maximum(np.abs(dx), np.abs(dy)), np.abs(dzp))
            best = d if best is None else np.minimum(best, d)
    return best


def flow(g: HeisPoint, t: float, A: Automorphism) -> HeisPoint:
    return mul(g, HeisPoint(A.alpha * t, A.beta * t, 0.0))


def apply_aut(A: Automorphism, g: HeisPoint) -> HeisPoint:
    return HeisPoint(A.a * g.x + A.b * g.y, A.c * g.x + A.d * g.y, g.z)


def apply_aut_inverse(A: Automorphism, g: HeisPoint) -> HeisPoint:
    return HeisPoint(A.d * g.x - A.b * g.y, -A.c * g.x + A.a * g.y, g.z)


def _maps_generators_into(M: np.ndarray, L: LatticeSpec) -> bool:
    gens = [HeisPoint(1.0, 0.0, 0.0), HeisPoint(0.0, 1.0, 0.0), HeisPoint(0.0, 0.0, 1.0 / L.E)]
    for g in gens:
        img = HeisPoint(M[0, 0] * g.x + M[0, 1] * g.y, M[1, 0] * g.x + M[1, 1] * g.y, g.z)
        if not is_lattice(img, L):
            return False
    return True


def preserves_lattice(A: Automorphism, L: LatticeSpec) -> bool:
    return _maps_generators_into(A.matrix, L) and _maps_generators_into(A.inverse_matrix, L)


def parity_ok(A: Automorphism) -> bool:
    """Checkerboard condition ab = cd = 0 mod 2 for the quantum propagator."""
    return (A.a * A.b) % 2 == 0 and (A.c * A.d) % 2 == 0
