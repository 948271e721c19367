"""Compactly supported weights used for smoothed orbit integrals.

The base smooth step is ``eta(t) = f(t) / (f(t) + f(1 - t))`` with ``f(t) = exp(-1/t)``
for ``t > 0``; it vanishes for ``t <= 0`` and equals one for ``t >= 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _f(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smooth_step(t):
    t = np.asarray(t, dtype=float)
    a = _f(t)
    b = _f(1.0 - t)
    return a / (a + b)


def smooth_step_prime(t):
    """Exact first derivative of the smooth step."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t > 0) & (t < 1)
    ti = t[inside]
    a = np.exp(-1.0 / ti)
    b = np.exp(-1.0 / (1.0 - ti))
    out[inside] = (a * b * (1.0 / ti ** 2 + 1.0 / (1.0 - ti) ** 2)) / (a + b) ** 2
    return out


def smooth_step_derivative(t, order: int = 1, h: float = 1e-3):
    """Derivatives of the smooth step by high-order central differences (used only for norms)."""
    t = np.asarray(t, dtype=float)
    if order == 0:
        return smooth_step(t)
    return (smooth_step_derivative(t + h, order - 1, h) - smooth_step_derivative(t - h, order - 1, h)) / (2 * h)


class Window:
    """A weight u -> w(u) with compact support [lo, hi] (possibly with jump discontinuities at the ends)."""

    lo: float
    hi: float
    scale: float  # shortest length on which w varies appreciably

    def __call__(self, u):
        raise NotImplementedError

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def breakpoints(self) -> list[float]:
        """Interior points where w is not smooth; quadrature panels must not straddle them."""
        return []

    def scaled(self, factor: float) -> "Window":
        """The window u -> w(factor * u)."""
        return ScaledWindow(self, factor)


@dataclass
class Indicator(Window):
    lo: float
    hi: float

    @property
    def scale(self) -> float:
        return max(self.hi - self.lo, 1e-300)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        return ((u >= self.lo) & (u <= self.hi)).astype(float)


@dataclass
class ScaledWindow(Window):
    base: Window
    factor: float

    def __post_init__(self):
        if not self.factor > 0:
            raise ValueError("window scale factor must be positive")
        self.lo = self.base.lo / self.factor
        self.hi = self.base.hi / self.factor

    @property
    def scale(self) -> float:
        return self.base.scale / self.factor

    def __call__(self, u):
        return self.base(self.factor * np.asarray(u, dtype=float))

    def breakpoints(self):
        return [b / self.factor for b in self.base.breakpoints()]


@dataclass
class ShiftedWindow(Window):
    base: Window
    shift: float

    def __post_init__(self):
        self.lo = self.base.lo + self.shift
        self.hi = self.base.hi + self.shift

    @property
    def scale(self) -> float:
        return self.base.scale

    def __call__(self, u):
        return self.base(np.asarray(u, dtype=float) - self.shift)

    def breakpoints(self):
        return [b + self.shift for b in self.base.breakpoints()]


@dataclass
class FunctionWindow(Window):
    """Arbitrary vectorised callable with declared support and feature scale."""
    func: object
    lo: float
    hi: float
    feature: float
    kinks: tuple = ()

    @property
    def scale(self) -> float:
        return self.feature

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.asarray(self.func(u))
        return np.where((u >= self.lo) & (u <= self.hi), out, 0.0)

    def breakpoints(self):
        return list(self.kinks)


def bump(lo: float, hi: float, ramp: float | None = None) -> FunctionWindow:
    """Smooth plateau bump: rises on [lo, lo+ramp], equals 1, falls on [hi-ramp, hi]."""
    if ramp is None:
        ramp = (hi - lo) / 2
    def f(u):
        return smooth_step((u - lo) / ramp) * smooth_step((hi - u) / ramp)
    return FunctionWindow(f, lo, hi, ramp / 8)


@dataclass
class Cutoff:
    """chi: equals 1 on [0, 1/2], vanishes on [1, inf), non-increasing; chi(s) = 1 - eta(2s - 1)."""

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        return 1.0 - smooth_step(2.0 * s - 1.0)

    def derivative(self, s):
        s = np.asarray(s, dtype=float)
        return -2.0 * smooth_step_prime(2.0 * s - 1.0)

    def window(self, dilation: float = 1.0) -> FunctionWindow:
        """u -> chi(u / dilation) restricted to u >= 0."""
        return FunctionWindow(lambda u: self(u / dilation), 0.0, dilation, dilation / 16, ())
