"""Smooth Gamma_E-invariant observables organised by fiber mode.

A mode with fiber frequency ``N != 0`` is a lattice average of Gaussian theta atoms

    h(g) = sum_{n in Z^2} f(gamma_n g),   gamma_n = (n1, n2, -n1 n2 / 2),
    f(v, z) = [coeff + lin . (v - c)] exp(-pi (v - c)^T Q (v - c)) exp(2 pi i D z),

with ``D = E N``.  Mode ``N = 0`` is a trigonometric polynomial in ``(x, y)``.
The lattice sum is truncated to a box of radius ``R`` in a Lagrange-reduced frame
of ``Q`` centred on the dominant term, which makes the tail bound uniform in the
evaluation point and in the shear introduced by transfer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .heis import (
    Automorphism,
    HeisPoint,
    LatticeSpec,
    flow_arr,
    preserves_lattice,
    reduce_arr,
)

DROP_THRESHOLD = 1e-14
DEFAULT_RADIUS = 5
WGRAD_STENCIL = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])
WGRAD_STEP = 1e-3


def lagrange_reduce(Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unimodular U with U^T Q U Lagrange-reduced (|2 q12| <= q11 <= q22)."""
    Q = np.asarray(Q, dtype=float)
    U = np.eye(2, dtype=np.int64)
    for _ in range(500):
        R = U.T @ Q @ U
        if R[0, 0] > R[1, 1]:
            U = U[:, ::-1].copy()
            continue
        mu = int(round(R[0, 1] / R[0, 0]))
        if mu == 0:
            break
        U[:, 1] -= mu * U[:, 0]
    else:  # pragma: no cover - reduction of a 2x2 form always terminates quickly
        raise RuntimeError("Lagrange reduction did not terminate")
    return U, U.T @ Q @ U


def _as_complex(value) -> complex:
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    return complex(value)


def _points(g) -> tuple[np.ndarray, bool]:
    if isinstance(g, HeisPoint):
        return g.as_array()[None, :], True
    arr = np.asarray(g, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr.reshape(-1, 3), False


_I2 = ((1, 0), (0, 1))


@dataclass(frozen=True)
class ThetaAtom:
    """Gaussian profile pulled back through an integer frame.

    With ``y = M^{-1} v - center`` the atom is ``[coeff + lin . y] exp(-pi y^T quad y) exp(2 pi i D z)``.
    For the identity frame this is the plain Gaussian centred at ``center``.  Transfer only
    multiplies the frame by powers of A, which keeps strongly sheared atoms exact.
    """
    center: tuple[float, float]
    quad: tuple[tuple[float, float], tuple[float, float]]
    coeff: complex = 1.0
    lin: tuple[complex, complex] = (0.0, 0.0)
    frame: tuple[tuple[int, int], tuple[int, int]] = _I2

    def __post_init__(self):
        c = tuple(float(v) for v in self.center)
        Q = np.asarray(self.quad, dtype=float)
        if len(c) != 2 or Q.shape != (2, 2):
            raise ValueError("atom needs a 2-vector center and a 2x2 quad")
        if not np.all(np.isfinite(Q)) or not np.all(np.isfinite(c)):
            raise ValueError("atom data must be finite")
        if not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-12 * np.abs(Q).max()):
            raise ValueError("quad must be symmetric")
        Q = 0.5 * (Q + Q.T)
        if np.linalg.eigvalsh(Q).min() <= 0:
            raise ValueError("quad must be positive definite")
        M = np.asarray(self.frame)
        if M.shape != (2, 2) or np.any(M != np.round(M)) or round(float(np.linalg.det(M))) not in (1, -1):
            raise ValueError("frame must be a unimodular integer matrix")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "quad", tuple(tuple(float(v) for v in row) for row in Q))
        object.__setattr__(self, "coeff", complex(self.coeff))
        object.__setattr__(self, "lin", tuple(complex(v) for v in self.lin))
        object.__setattr__(self, "frame", tuple(tuple(int(v) for v in row) for row in M))

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center)

    @property
    def Q(self) -> np.ndarray:
        return np.array(self.quad)

    @property
    def L(self) -> np.ndarray:
        return np.array(self.lin, dtype=complex)

    @property
    def M(self) -> np.ndarray:
        return np.array(self.frame, dtype=np.int64)

    @property
    def Minv(self) -> np.ndarray:
        (a, b), (c, d) = self.frame
        det = a * d - b * c
        return np.array([[d, -b], [-c, a]], dtype=np.int64) * det

    @property
    def has_lin(self) -> bool:
        return any(v != 0 for v in self.lin)

    def effective_center(self) -> np.ndarray:
        return self.M.astype(float) @ self.c

    def effective_quad(self) -> np.ndarray:
        Mi = self.Minv.astype(float)
        return Mi.T @ self.Q @ Mi

    def amplitude(self) -> float:
        return abs(self.coeff) + float(np.linalg.norm(self.L)) / math.sqrt(float(np.linalg.eigvalsh(self.Q).min()))

    def scaled(self, s: complex) -> "ThetaAtom":
        return replace(self, coeff=s * self.coeff, lin=tuple(s * v for v in self.lin))


def _eval_atom(atom: ThetaAtom, pts: np.ndarray, D: int, R: int) -> np.ndarray:
    """Truncated lattice sum for one atom at reduced points (P, 3)."""
    U, _ = lagrange_reduce(atom.Q)
    Uinv = np.round(np.linalg.inv(U)).astype(np.int64)
    Q = atom.Q
    M = atom.M
    Mi = atom.Minv.astype(float)
    lin = atom.L
    r = np.arange(-R, R + 1)
    off = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
    out = np.zeros(len(pts), dtype=complex)
    chunk = max(1, 200000 // len(off))
    for s in range(0, len(pts), chunk):
        p = pts[s:s + chunk]
        v = p[:, :2]
        ys = v @ Mi.T - atom.c
        m0 = -np.round(ys @ Uinv.T).astype(np.int64)
        mm = (m0[:, None, :] + off[None, :, :]) @ U.T
        y = ys[:, None, :] + mm
        n = mm @ M.T
        quad = np.einsum("pki,ij,pkj->pk", y, Q, y)
        sign = np.where((D * n[..., 0] * n[..., 1]) % 2 == 0, 1.0, -1.0)
        zz = p[:, None, 2] + 0.5 * (n[..., 0] * p[:, None, 1] - n[..., 1] * p[:, None, 0])
        pref = atom.coeff + y @ lin
        out[s:s + chunk] = np.sum(sign * pref * np.exp(-math.pi * quad + 2j * math.pi * D * zz), axis=1)
    return out


def atom_tail_bound(atom: ThetaAtom, R: int) -> float:
    U, Qr = lagrange_reduce(atom.Q)
    mu = float(np.linalg.eigvalsh(Qr).min())
    unorm = float(np.linalg.norm(U, 2))
    k = np.arange(R + 1, R + 400, dtype=float)
    amp = abs(atom.coeff) + float(np.linalg.norm(atom.L)) * unorm * math.sqrt(2) * (k + 0.5)
    return float(np.sum(8 * k * amp * np.exp(-math.pi * mu * (k - 0.5) ** 2)))


@dataclass(frozen=True)
class ModeObservable:
    N: int
    atoms: tuple[ThetaAtom, ...] = ()
    fourier: dict = field(default_factory=dict)
    truncation_radius: int = DEFAULT_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "atoms", tuple(self.atoms))
        object.__setattr__(self, "fourier",
                           {(int(k[0]), int(k[1])): complex(v) for k, v in dict(self.fourier).items()})
        if self.N == 0 and self.atoms:
            raise ValueError("mode N=0 is a toral Fourier polynomial; atoms are not allowed")
        if self.N != 0 and self.fourier:
            raise ValueError("Fourier coefficients belong to mode N=0 only")
        if self.truncation_radius < 1:
            raise ValueError("truncation_radius must be >= 1")

    def is_zero(self) -> bool:
        return not any(a.amplitude() > 0 for a in self.atoms) and not any(v != 0 for v in self.fourier.values())

    def eval_reduced(self, pts: np.ndarray, E: int) -> np.ndarray:
        if self.N == 0:
            out = np.zeros(len(pts), dtype=complex)
            for (m, n), cf in self.fourier.items():
                out += cf * np.exp(2j * math.pi * (m * pts[:, 0] + n * pts[:, 1]))
            return out
        out = np.zeros(len(pts), dtype=complex)
        D = E * self.N
        for atom in self.atoms:
            out += _eval_atom(atom, pts, D, self.truncation_radius)
        return out

    def tail_bound(self) -> float:
        return float(sum(atom_tail_bound(a, self.truncation_radius) for a in self.atoms))

    def scaled(self, s: complex) -> "ModeObservable":
        return replace(self, atoms=tuple(a.scaled(s) for a in self.atoms),
                       fourier={k: s * v for k, v in self.fourier.items()})


def _merge_modes(modes: Iterable[ModeObservable]) -> tuple[ModeObservable, ...]:
    by_n: dict[int, ModeObservable] = {}
    for m in modes:
        if m.N not in by_n:
            by_n[m.N] = m
            continue
        old = by_n[m.N]
        four = dict(old.fourier)
        for k, v in m.fourier.items():
            four[k] = four.get(k, 0) + v
        by_n[m.N] = ModeObservable(m.N, old.atoms + m.atoms, four,
                                   max(old.truncation_radius, m.truncation_radius))
    return tuple(by_n[n] for n in sorted(by_n))


@dataclass(frozen=True)
class Observable:
    modes: tuple[ModeObservable, ...]
    lattice: LatticeSpec = LatticeSpec(1)

    def __post_init__(self):
        modes = tuple(self.modes)
        ns = [m.N for m in modes]
        if len(set(ns)) != len(ns):
            raise ValueError(f"modes must have distinct N, got {ns}")
        object.__setattr__(self, "modes", tuple(sorted(modes, key=lambda m: m.N)))

    # -- construction helpers
    @classmethod
    def constant(cls, value: complex = 1.0, lattice: LatticeSpec = LatticeSpec(1)) -> "Observable":
        return cls((ModeObservable(0, fourier={(0, 0): value}),), lattice)

    @classmethod
    def zero(cls, lattice: LatticeSpec = LatticeSpec(1)) -> "Observable":
        return cls((), lattice)

    @classmethod
    def trig(cls, coeffs: dict, lattice: LatticeSpec = LatticeSpec(1)) -> "Observable":
        return cls((ModeObservable(0, fourier=coeffs),), lattice)

    @classmethod
    def theta(cls, N: int, atoms: Sequence[ThetaAtom], lattice: LatticeSpec = LatticeSpec(1),
              truncation_radius: int = DEFAULT_RADIUS) -> "Observable":
        return cls((ModeObservable(N, tuple(atoms), truncation_radius=truncation_radius),), lattice)

    @property
    def E(self) -> int:
        return self.lattice.E

    def is_zero(self) -> bool:
        return all(m.is_zero() for m in self.modes)

    def mode(self, N: int) -> ModeObservable | None:
        for m in self.modes:
            if m.N == N:
                return m
        return None

    # -- algebra
    def _check(self, other: "Observable"):
        if other.lattice != self.lattice:
            raise ValueError("observables live on different lattices")

    def __add__(self, other: "Observable") -> "Observable":
        self._check(other)
        return Observable(_merge_modes(self.modes + other.modes), self.lattice)

    def __mul__(self, s: complex) -> "Observable":
        return Observable(tuple(m.scaled(s) for m in self.modes), self.lattice)

    __rmul__ = __mul__

    def __sub__(self, other: "Observable") -> "Observable":
        return self + (-1.0) * other

    # -- evaluation
    def eval(self, g, reduce: bool = True):
        """Value at a HeisPoint or at an (..., 3) array of symplectic coordinates."""
        pts, scalar = _points(g)
        shape = np.asarray(g.as_array() if isinstance(g, HeisPoint) else g).shape[:-1]
        if reduce:
            pts, _ = reduce_arr(pts, self.E)
        out = np.zeros(len(pts), dtype=complex)
        for m in self.modes:
            out += m.eval_reduced(pts, self.E)
        if scalar:
            return complex(out[0])
        return out.reshape(shape)

    __call__ = eval

    def tail_bound(self) -> float:
        return float(sum(m.tail_bound() for m in self.modes))

    def mean(self) -> complex:
        m0 = self.mode(0)
        return complex(m0.fourier.get((0, 0), 0.0)) if m0 is not None else 0j

    def mode_project(self, N: int) -> "Observable":
        m = self.mode(N)
        return Observable((m,) if m is not None else (), self.lattice)

    def sup_norm(self, grid: int = 96) -> float:
        """Sampled sup of sum_N |h_N| over the torus; |h_N| does not depend on the fiber coordinate."""
        u = (np.arange(grid) + 0.5) / grid
        X, Y = np.meshgrid(u, u, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=-1)
        total = np.zeros(len(pts))
        for m in self.modes:
            total += np.abs(m.eval_reduced(pts, self.E))
        return float(total.max()) if len(pts) else 0.0

    # -- dynamics
    def transfer(self, A: Automorphism, k: int = 1) -> "Observable":
        """Exact data of F^k h = lam^k h o F^{-k} (k may be negative)."""
        if not preserves_lattice(A, self.lattice):
            raise ValueError("automorphism does not preserve the lattice of this observable")
        if k == 0:
            return self
        Aik = A.power(-k)
        scale = A.lam ** k
        modes = []
        for m in self.modes:
            if m.N == 0:
                four: dict = {}
                for (a, b), cf in m.fourier.items():
                    key = tuple(int(v) for v in Aik.T @ np.array([a, b], dtype=np.int64))
                    four[key] = four.get(key, 0) + scale * cf
                four = {kk: v for kk, v in four.items() if abs(v) >= DROP_THRESHOLD}
                modes.append(replace(m, fourier=four))
                continue
            Ak = A.power(k)
            atoms = []
            for at in m.atoms:
                new = replace(at, coeff=scale * at.coeff, lin=tuple(scale * v for v in at.lin),
                              frame=tuple(map(tuple, Ak @ at.M)))
                if new.amplitude() >= DROP_THRESHOLD:
                    atoms.append(new)
            modes.append(replace(m, atoms=tuple(atoms)))
        return Observable(tuple(modes), self.lattice)

    def wgrad(self, g: HeisPoint, A: Automorphism, step: float = WGRAD_STEP) -> complex:
        """Order-6 central difference of t -> h(flow(g, t)) at t = 0."""
        if not step > 0:
            raise ValueError("step must be positive")
        pts, scalar = _points(g)
        ts = step * np.arange(-3, 4)
        samples = flow_arr(pts[:, None, :], ts[None, :], A.W)
        vals = self.eval(samples.reshape(-1, 3)).reshape(len(pts), 7)
        out = vals @ WGRAD_STENCIL / step
        return complex(out[0]) if scalar else out

    def w_derivative(self, A: Automorphism) -> "Observable":
        """Exact observable W h for atoms without a linear part (manufactures coboundaries)."""
        al, be = A.alpha, A.beta
        W = A.W
        modes = []
        for m in self.modes:
            if m.N == 0:
                four = {k: 2j * math.pi * (k[0] * al + k[1] * be) * v for k, v in m.fourier.items()}
                four = {k: v for k, v in four.items() if v != 0}
                modes.append(replace(m, fourier=four))
                continue
            D = self.E * m.N
            atoms = []
            for at in m.atoms:
                if at.has_lin:
                    raise ValueError("w_derivative is only closed-form for atoms without a linear part")
                M = at.M.astype(float)
                Wy = at.Minv.astype(float) @ W
                p = np.array([-be, al])
                coeff = -at.coeff * 1j * math.pi * D * (p @ (M @ at.c))
                lin = at.coeff * (-2 * math.pi * (at.Q @ Wy) - 1j * math.pi * D * (M.T @ p))
                atoms.append(replace(at, coeff=coeff, lin=tuple(lin)))
            modes.append(replace(m, atoms=tuple(atoms)))
        return Observable(tuple(modes), self.lattice)

    # -- serialisation
    def to_dict(self) -> dict:
        def cpx(v):
            return [float(np.real(v)), float(np.imag(v))]
        modes = []
        for m in self.modes:
            modes.append({
                "N": m.N,
                "atoms": [{"center": list(a.center), "quad": [list(r) for r in a.quad],
                           "coeff": cpx(a.coeff), **({"lin": [cpx(v) for v in a.lin]} if a.has_lin else {}),
                           **({"frame": [list(r) for r in a.frame]} if a.frame != _I2 else {})}
                          for a in m.atoms],
                "fourier": [{"m": k[0], "n": k[1], "coeff": cpx(v)} for k, v in sorted(m.fourier.items())],
                "truncation_radius": m.truncation_radius,
            })
        return {"lattice_E": self.E, "modes": modes}

    @classmethod
    def from_dict(cls, doc: dict) -> "Observable":
        try:
            lattice = LatticeSpec(int(doc.get("lattice_E", 1)))
            modes = []
            for md in doc["modes"]:
                atoms = tuple(
                    ThetaAtom(tuple(a["center"]), tuple(map(tuple, a["quad"])), _as_complex(a.get("coeff", 1.0)),
                              tuple(_as_complex(v) for v in a.get("lin", (0.0, 0.0))),
                              tuple(map(tuple, a.get("frame", _I2))))
                    for a in md.get("atoms", ()))
                four = {(int(f["m"]), int(f["n"])): _as_complex(f["coeff"]) for f in md.get("fourier", ())}
                modes.append(ModeObservable(int(md["N"]), atoms, four,
                                            int(md.get("truncation_radius", DEFAULT_RADIUS))))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed observable document: {exc}") from exc
        return cls(tuple(modes), lattice)
