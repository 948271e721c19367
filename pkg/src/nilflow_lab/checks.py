"""Randomised invariant suites shared by the self-test command and the acceptance run.

Each check returns a CheckResult holding the measured value, its threshold and a verdict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ergodic import ZoomPartition
from .heis import (
    Automorphism,
    LatticeSpec,
    aut_arr,
    flow_arr,
    mul_arr,
    preserves_lattice,
    quotient_distance_arr,
    reduce_arr,
    stable_generator,
)

ALGEBRA_TOL = 1e-12
RENORM_TOL = 1e-9
PARTITION_TOL = 1e-12
PARTITION_CASES = ((64.0, 3), (1e3, 4), (1e6, 9))


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = f" ({self.detail})" if self.detail else ""
        return f"[{tag}] {self.name}: {self.value:.3g} vs {self.threshold:.3g}{extra}"


def _random_points(rng, n: int, scale: float = 5.0) -> np.ndarray:
    return rng.uniform(-scale, scale, (n, 3))


def group_algebra(rng, n: int = 10_000, tol: float = ALGEBRA_TOL) -> list[CheckResult]:
    """Associativity, inverses, idempotent reduction and the flow semigroup on n random cases each."""
    A = stable_generator(2, 1, 3, 2)
    g, h, k = (_random_points(rng, n) for _ in range(3))
    assoc = np.abs(mul_arr(mul_arr(g, h), k) - mul_arr(g, mul_arr(h, k))).max()
    ident = np.abs(mul_arr(g, -g)).max()
    once, _ = reduce_arr(_random_points(rng, n, 50.0), 1)
    twice, _ = reduce_arr(once, 1)
    idem = np.abs(once - twice).max()
    s = rng.uniform(-10, 10, n)
    t = rng.uniform(-10, 10, n)
    semi = np.abs(flow_arr(flow_arr(g, s, A.W), t, A.W) - flow_arr(g, s + t, A.W)).max()
    out = []
    for name, v in (("associativity", assoc), ("inverse", ident), ("reduction idempotence", idem),
                    ("flow semigroup", semi)):
        out.append(CheckResult(name, float(v), tol, bool(v < tol), f"{n} cases"))
    return out


def renormalization_identity(A: Automorphism, E: int, rng, n: int = 1000, t_range: float = 10.0,
                             tol: float = RENORM_TOL) -> CheckResult:
    """max quotient distance between F(Psi_{lam t} x) and Psi_t(F x)."""
    x = rng.uniform(0, 1, (n, 3)) * np.array([1.0, 1.0, 1.0 / E])
    t = rng.uniform(-t_range, t_range, n)
    M = A.matrix.astype(float)
    lhs = aut_arr(M, flow_arr(x, A.lam * t, A.W))
    rhs = flow_arr(aut_arr(M, x), t, A.W)
    d = float(quotient_distance_arr(lhs, rhs, E).max())
    return CheckResult("renormalization identity", d, tol, d < tol, f"{n} samples, |t| <= {t_range:g}")


def lattice_oracle() -> list[CheckResult]:
    """Known verdicts: [[2,1],[1,1]] rejected at E=1 and accepted at E=2; [[2,1],[3,2]] accepted at E=1."""
    cases = (((2, 1, 1, 1), 1, False), ((2, 1, 1, 1), 2, True), ((2, 1, 3, 2), 1, True))
    out = []
    for m, E, want in cases:
        got = preserves_lattice(stable_generator(*m), LatticeSpec(E))
        out.append(CheckResult(f"lattice {list(m)} E={E}", float(got), float(want), got == want,
                               "accepted" if got else "rejected"))
    return out


def zoom_partition_checks(cases=PARTITION_CASES, points: int = 10_000, tol: float = PARTITION_TOL,
                          cq_order: int = 4) -> list[CheckResult]:
    """Partition of unity, support lengths and scaled C^q norms across T."""
    out = []
    norms = []
    for T, n in cases:
        part = ZoomPartition(T, n)
        t = np.linspace(0.0, T, points)
        defect = float(np.abs(part.total(t) - 1.0).max())
        out.append(CheckResult(f"partition sum T={T:g} n={n}", defect, tol, defect < tol, f"{points} points"))
        worst = 0.0
        for k in range(-n, n + 1):
            lo, hi = part.support(k)
            worst = max(worst, (hi - lo) / (4.0 ** (-abs(k)) * T))
        out.append(CheckResult(f"support lengths T={T:g}", worst, 1.0, worst <= 1.0 + 1e-12,
                               "max length / (4^-|k| T)"))
        norms.append(max(part.scaled_cq_norm(k, cq_order) for k in range(-n, n + 1)))
    spread = max(norms) / min(norms)
    # one constant bounds all T: the scaled norms agree across T up to sampling
    out.append(CheckResult(f"scaled C^{cq_order} norms", max(norms), max(norms), spread < 1.05,
                           f"max/min across T = {spread:.4f}"))
    return out
