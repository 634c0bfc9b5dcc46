"""Colored Gaussian noise models and the capacity baselines used as ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from fbcap.errors import PreconditionError
from fbcap.lti import Polynomial, RationalFilter, evaluate, is_stable
from fbcap.quadrature import circle_mean, fft_autocovariance

VALIDATION_GRID = 4096
WHITE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Noise ``W = H e`` with ``e`` white, zero mean, unit variance.

    ``H`` must be stable and its spectrum ``S_w = |H|^2`` strictly positive.
    """

    h: RationalFilter

    def __post_init__(self):
        if not isinstance(self.h, RationalFilter):
            raise TypeError("h must be a RationalFilter")
        object.__setattr__(self, "h", self.h.normalized())
        if not is_stable(self.h):
            raise PreconditionError("shaping filter H must be stable")
        grid = np.linspace(-np.pi, np.pi, VALIDATION_GRID, endpoint=False)
        s = self.psd(grid)
        if not np.all(s > 0):
            raise PreconditionError("noise spectrum must be strictly positive (zero of H on the unit circle)")
        object.__setattr__(self, "_grid_range", (float(s.min()), float(s.max())))
        object.__setattr__(self, "_acov", {})

    @classmethod
    def from_coeffs(cls, numerator, denominator=(1.0,)) -> "NoiseModel":
        """Coefficients in ascending powers of ``z^-1``."""
        return cls(RationalFilter(Polynomial(numerator), Polynomial(denominator)))

    @classmethod
    def arma1(cls, alpha: float, beta: float = 0.0) -> "NoiseModel":
        """``W_i + beta W_{i-1} = e_i + alpha e_{i-1}``."""
        return cls.from_coeffs([1.0, alpha], [1.0, beta])

    @classmethod
    def white(cls, variance: float = 1.0) -> "NoiseModel":
        return cls.from_coeffs([np.sqrt(variance)])

    def psd(self, theta):
        return np.abs(evaluate(self.h, theta)) ** 2

    def is_white(self, tol: float = WHITE_TOL) -> bool:
        lo, hi = self._grid_range
        return hi - lo <= tol * max(hi, 1.0)

    def autocovariance(self, lags: int) -> np.ndarray:
        """``r_w(0..lags)``, cached per model."""
        cache = self._acov
        for n, r in cache.items():
            if n >= lags:
                return r[: lags + 1]
        r = fft_autocovariance(self.psd, lags)
        cache[lags] = r
        return r

    @property
    def variance(self) -> float:
        return float(self.autocovariance(0)[0])


@dataclass(frozen=True)
class PowerBudget:
    """Average channel-input power ``P``."""

    P: float

    def __post_init__(self):
        if not (self.P > 0 and np.isfinite(self.P)):
            raise PreconditionError("power budget must be a positive finite number")


def _budget(p) -> float:
    return p.P if isinstance(p, PowerBudget) else PowerBudget(float(p)).P


def psd(n: NoiseModel, theta):
    """``S_w(theta) = |H(e^{j theta})|^2``."""
    return n.psd(theta)


def _crossings(n: NoiseModel, level: float) -> list:
    grid = np.linspace(-np.pi, np.pi, VALIDATION_GRID + 1)
    d = n.psd(grid) - level
    out = []
    for i in np.flatnonzero(np.sign(d[:-1]) * np.sign(d[1:]) < 0):
        out.append(brentq(lambda t: float(n.psd(t)) - level, grid[i], grid[i + 1], xtol=1e-15))
    return out


def water_level(n: NoiseModel, p) -> float:
    """Level ``xi`` with ``mean(max(0, xi - S_w)) = P``."""
    P = _budget(p)
    lo, hi = n._grid_range
    xi = P + n.variance
    if xi > np.max(n.psd(np.linspace(-np.pi, np.pi, 4 * VALIDATION_GRID + 1))):
        # every frequency is filled, so the level is the closed form
        return xi

    def excess(xi):
        brk = _crossings(n, xi)
        return circle_mean(lambda t: np.maximum(0.0, xi - n.psd(t)), tol=1e-13, breakpoints=brk) - P

    a, b = lo, hi + P
    for _ in range(200):
        mid = 0.5 * (a + b)
        e = excess(mid)
        if abs(e) <= 1e-10:
            return mid
        if e > 0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def nonfeedback_capacity(n: NoiseModel, p) -> float:
    """Water-filling capacity without feedback, bits per channel use."""
    xi = water_level(n, p)
    brk = _crossings(n, xi)
    return circle_mean(lambda t: 0.5 * np.log2(np.maximum(1.0, xi / n.psd(t))), tol=1e-10, breakpoints=brk)


def ma1_closed_form(alpha: float, beta: float, p) -> float:
    """Feedback capacity of first-order ARMA noise, bits per channel use.

    ``C = -log2 x0`` where ``x0`` in (0, 1) solves
    ``P x^2 (1 + s beta x)^2 = (1 - x^2)(1 + s alpha x)^2`` with ``s = sign(beta - alpha)``.
    The AR factor enters squared; with it the root matches the dual bound.
    """
    P = _budget(p)
    if not (abs(alpha) < 1 and abs(beta) < 1):
        raise PreconditionError("need |alpha| < 1 and |beta| < 1")
    if alpha == beta:
        raise PreconditionError("alpha == beta gives white noise")
    s = np.sign(beta - alpha)

    def f(x):
        return P * x * x * (1 + s * beta * x) ** 2 - (1 - x * x) * (1 + s * alpha * x) ** 2

    a, b = 0.0, 1.0
    fa, fb = f(a), f(b)
    if not fa * fb < 0:
        raise PreconditionError("no sign change on (0, 1)")
    while b - a > 1e-12:
        mid = 0.5 * (a + b)
        fm = f(mid)
        if fm == 0:
            a = b = mid
            break
        if fa * fm < 0:
            b = mid
        else:
            a, fa = mid, fm
    return float(-np.log2(0.5 * (a + b)))


def paley_wiener_check(n: NoiseModel, guard: float = 1e6) -> bool:
    """True iff ``mean |log S_w|`` over the circle is finite (below ``guard``)."""
    with np.errstate(divide="ignore"):
        val = circle_mean(lambda t: np.abs(np.log(n.psd(t))), tol=1e-8)
    return bool(np.isfinite(val) and val < guard)
