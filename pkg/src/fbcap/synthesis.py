"""From a solved dual to a power-scaled strictly causal FIR and its rate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from fbcap.dual import DualSolution, FrequencyGrid, _Reduced
from fbcap.errors import DegeneracyError, NonConvergenceError, PreconditionError, ZeroRateError
from fbcap.lti import RationalFilter, polynomial_roots
from fbcap.noise import NoiseModel, _budget
from fbcap.quadrature import circle_mean

log = logging.getLogger(__name__)

NU_ZERO_TOL = 1e-8
ZERO_GUARD = 1e-6
RATE_TOL = 1e-8
ZERO_RATE_BITS = 1e-9


@dataclass(frozen=True, eq=False)
class FirFilter:
    """``Q(z) = sum_{n=1}^{N} q_n z^-n``; ``q[0]`` holds ``q_1``."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.atleast_1d(np.asarray(self.q, float)).ravel())

    @property
    def N(self) -> int:
        return self.q.size

    def evaluate(self, theta):
        w = np.exp(-1j * np.asarray(theta, float))
        # sum q_n w^n = w * poly(w) with descending coefficients q_N..q_1
        return w * np.polyval(self.q[::-1], w) if self.N else np.zeros_like(w)

    def to_rational(self) -> RationalFilter:
        return RationalFilter.fir(np.concatenate([[0.0], self.q]))

    def scaled(self, alpha: float) -> "FirFilter":
        return FirFilter(alpha * self.q)

    def sensitivity_zeros(self) -> np.ndarray:
        """Zeros of ``1 + Q`` in the ``z`` plane, i.e. roots of ``z^N + q_1 z^{N-1} + ... + q_N``."""
        return polynomial_roots(np.concatenate([[1.0], self.q]))


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    filter: FirFilter
    alpha: float
    raw_power: float
    rate: float
    source: DualSolution | None = None
    noise: NoiseModel | None = None
    power: float | None = None


def recover_ab(sol: DualSolution):
    """Grid samples ``(a_i, b_i)`` of ``Q(e^{j theta_i})``.

    Uses ``a = r1/nu - 1``, ``b = r2/nu`` where ``nu_i > NU_ZERO_TOL`` and the
    primal oracle elsewhere.
    """
    theta = sol.grid.theta
    red = _Reduced(theta, sol.noise.psd(theta), sol.basis, sol.budget.P)
    _, r1, r2 = red.parts(sol.point.vector())
    nu = sol.point.nu
    ok = nu > NU_ZERO_TOL
    a = np.empty_like(nu)
    b = np.empty_like(nu)
    a[ok] = r1[ok] / nu[ok] - 1.0
    b[ok] = r2[ok] / nu[ok]
    if not np.all(ok):
        from fbcap.primal import solve_primal

        log.warning("nu below %.0e at %d grid points: taking (a, b) from the primal oracle",
                    NU_ZERO_TOL, int(np.sum(~ok)))
        try:
            pt, _ = solve_primal(sol.noise, sol.budget, sol.h, sol.m)
            pa, pb = pt.a, pt.b
        except NonConvergenceError as exc:
            if exc.best is None:
                raise
            pa, pb = exc.best[:, 1] - 1.0, exc.best[:, 2]
        a[~ok] = pa[~ok]
        b[~ok] = pb[~ok]
    return a, b


def synthesize_fir(a, b, grid: FrequencyGrid, h: int) -> FirFilter:
    """``q_n = mean(a cos(n theta) - b sin(n theta))`` for ``n = 1..2m-h-1``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    M = len(grid)
    if a.size != M or b.size != M:
        raise PreconditionError("a and b must have length 2m")
    if not M > h:
        raise PreconditionError("need 2m > h")
    N = M - h - 1
    # theta_i = -pi + 2 pi i / M, so e^{j n theta_i} = (-1)^n e^{2 pi j n i / M}
    coef = np.fft.ifft(a + 1j * b).real
    n = np.arange(1, N + 1)
    return FirFilter(np.where(n % 2, -1.0, 1.0) * coef[n])


def fir_power(f: FirFilter, n: NoiseModel) -> float:
    """``(1/2pi) int |Q|^2 S_w`` as the Toeplitz form ``sum_kl q_k q_l r_w(k-l)``."""
    q = f.q
    if f.N == 0:
        return 0.0
    r = n.autocovariance(f.N - 1)
    acf = np.correlate(q, q, mode="full")[f.N - 1:]
    return float(max(0.0, r[0] * acf[0] + 2.0 * np.dot(r[1:], acf[1:])))


def fir_power_quadrature(f: FirFilter, n: NoiseModel, tol: float = 1e-10) -> float:
    """Same quantity by adaptive quadrature (cross-check)."""
    panels = _panels_for(f.N)
    return circle_mean(lambda t: np.abs(f.evaluate(t)) ** 2 * n.psd(t), tol=tol, min_panels=panels)


def _panels_for(N: int) -> int:
    return max(8, 1 << int(np.ceil(np.log2(max(N, 1) / 2.0 + 1))))


def _guard_unit_circle(f: FirFilter) -> FirFilter:
    """Nudge ``q`` once if ``1 + Q`` has a zero within ``ZERO_GUARD`` of the circle."""
    for attempt in range(2):
        if f.N == 0:
            return f
        zeros = f.sensitivity_zeros()
        bad = np.abs(np.abs(zeros) - 1.0) <= ZERO_GUARD
        if not np.any(bad):
            return f
        if attempt == 1:
            raise DegeneracyError(f"1 + Q has a zero on the unit circle: {zeros[bad][0]}")
        rho = zeros[bad][0]
        # sensitivity of rho to q_k: d rho / d q_k = -rho^(N-k) / p'(rho)
        p_desc = np.concatenate([[1.0], f.q])
        dp = np.polyval(np.polyder(p_desc), rho)
        k = np.arange(1, f.N + 1)
        drho = -rho ** (f.N - k) / dp
        radial = (np.conj(rho) * drho).real / abs(rho)
        j = int(np.argmax(np.abs(radial)))
        q = f.q.copy()
        q[j] -= 1e-6 * np.sign(radial[j])
        log.warning("1 + Q zero at |z|=%.9f: perturbed q_%d by 1e-6", abs(rho), j + 1)
        f = FirFilter(q)
    return f


def achievable_rate(f: FirFilter, tol: float = RATE_TOL) -> float:
    """``(1/2pi) int log2 |1 + Q(e^{j theta})| d theta`` in bits per use."""
    if f.N == 0 or not np.any(f.q):
        return 0.0
    f = _guard_unit_circle(f)
    return circle_mean(lambda t: np.log2(np.abs(1.0 + f.evaluate(t))), tol=tol,
                       min_panels=_panels_for(f.N))


def rate_from_zeros(f: FirFilter) -> float:
    """Jensen form of the rate: ``sum log2 |z_i|`` over zeros of ``1+Q`` outside the circle."""
    z = np.abs(f.sensitivity_zeros())
    return float(np.sum(np.log2(z[z > 1.0])))


def power_scale(f: FirFilter, n: NoiseModel, p) -> SynthesisResult:
    """Scale ``Q`` by ``sqrt(P/p)`` so its input power equals ``P``."""
    P = _budget(p)
    raw = fir_power(f, n)
    if not raw > 0:
        raise ZeroRateError("filter has zero power; no rate is achievable")
    alpha = float(np.sqrt(P / raw))
    g = f.scaled(alpha)
    return SynthesisResult(g, alpha, raw, achievable_rate(g), None, n, P)


def synthesize(sol: DualSolution) -> SynthesisResult:
    """Recover ``(a, b)``, build the FIR and scale it to the power budget."""
    if sol.upper_bound_discrete_bits < ZERO_RATE_BITS:
        raise ZeroRateError(f"zero-rate controller: upper bound {sol.upper_bound_discrete_bits:.3e} bits")
    a, b = recover_ab(sol)
    f = synthesize_fir(a, b, sol.grid, sol.h)
    res = power_scale(f, sol.noise, sol.budget)
    return SynthesisResult(res.filter, res.alpha, res.raw_power, res.rate, sol, sol.noise, sol.budget.P)

