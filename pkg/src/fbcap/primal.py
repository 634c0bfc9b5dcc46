"""Discrete primal problem solved directly, used to certify the dual path.

Variables per grid point are ``W_i``, ``x_i = 1 + a_i`` and ``b_i``; the
matrix inequality reduces to ``W_i >= x_i^2 + b_i^2``. The objective
``(1/4m) sum log W_i`` is maximized with a log-barrier interior point method
whose Newton systems exploit the 3x3 block structure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from fbcap.dual import ConstraintBasis, FrequencyGrid
from fbcap.errors import NonConvergenceError, PreconditionError
from fbcap.noise import NoiseModel, _budget

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
MAX_M = 512


@dataclass(frozen=True, eq=False)
class PrimalPoint:
    W: np.ndarray
    x: np.ndarray
    b: np.ndarray
    lam: float = float("nan")  # power multiplier estimate from the barrier

    @property
    def a(self) -> np.ndarray:
        return self.x - 1.0

    @property
    def c2(self) -> np.ndarray:
        return self.W - self.x**2 - self.b**2


def recover_ab_primal(pt: PrimalPoint):
    """``(a, b, c)`` with ``c^2 = W - x^2 - b^2`` clipped at zero."""
    c2 = pt.c2
    return pt.a.copy(), pt.b.copy(), np.sqrt(np.clip(c2, 0.0, None))


class _Barrier:
    def __init__(self, s, basis, theta, P):
        self.s, self.P = s, P
        M = s.size
        self.M = M
        h = basis.h
        # equality rows over (W, x, b) blocks: mean(x) = 1, mean(A_k x + B_k b) = 0
        E = np.zeros((h + 1, M, 3))
        E[0, :, 1] = 1.0 / M
        if h:
            E[1:, :, 1] = basis.A(theta).T / M
            E[1:, :, 2] = basis.B(theta).T / M
        self.E = E.reshape(h + 1, 3 * M)
        # gradient of the power functional
        c = np.zeros((M, 3))
        c[:, 0] = s / M
        c[:, 1] = -2.0 * s / M
        self.c = c.ravel()

    def power(self, v):
        W, x = v[:, 0], v[:, 1]
        return float(np.mean((W - 2.0 * x + 1.0) * self.s))

    def phi(self, v, t):
        W, x, b = v.T
        psi = W - x * x - b * b
        slack = self.P - self.power(v)
        if np.any(psi <= 0) or slack <= 0:
            return -np.inf
        return t * 0.5 * np.mean(np.log(W)) + np.log(slack) + np.sum(np.log(psi))

    def newton(self, v, t):
        W, x, b = v.T
        M = self.M
        psi = W - x * x - b * b
        slack = self.P - self.power(v)
        dpsi = np.stack([np.ones(M), -2.0 * x, -2.0 * b], axis=1)
        g = dpsi / psi[:, None]
        g[:, 0] += t / (2.0 * M) / W
        g = g.ravel() - self.c / slack
        blocks = dpsi[:, :, None] * dpsi[:, None, :] / (psi**2)[:, None, None]
        blocks[:, 0, 0] += t / (2.0 * M) / W**2
        blocks[:, 1, 1] += 2.0 / psi
        blocks[:, 2, 2] += 2.0 / psi
        binv = np.linalg.inv(blocks)
        rho = 1.0 / slack**2

        def solve(rhs):
            # (blockdiag + rho c c^T)^{-1} rhs by Sherman-Morrison
            rhs2 = rhs.reshape(M, 3, -1)
            y = np.einsum("ijk,ikl->ijl", binv, rhs2).reshape(3 * M, -1)
            u = np.einsum("ijk,ik->ij", binv, self.c.reshape(M, 3)).ravel()
            coef = rho * (self.c @ y) / (1.0 + rho * (self.c @ u))
            return y - np.outer(u, coef)

        Mg = solve(g[:, None])[:, 0]
        ME = solve(self.E.T)
        S = self.E @ ME
        rhs = -self.E @ Mg
        try:
            w = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError:
            w = np.linalg.lstsq(S, rhs, rcond=None)[0]
        dv = Mg + ME @ w
        dec = float(g @ dv)
        return dv.reshape(M, 3), dec, slack


def solve_primal(n: NoiseModel, p, h: int, m: int, gap_tol: float = 1e-10,
                 mu: float = 10.0, max_newton: int = 200):
    """Maximize ``(1/4m) sum log W_i`` over the discrete feasible set.

    Returns ``(PrimalPoint, value_bits)``. The barrier parameter grows until
    the duality-gap bound ``(2m+1)/t`` falls below ``gap_tol`` (nats).
    """
    P = _budget(p)
    h, m = int(h), int(m)
    if not 2 * m > h:
        raise PreconditionError("need 2m > h")
    if m > MAX_M:
        raise PreconditionError(f"primal oracle supports m <= {MAX_M}")
    grid, basis = FrequencyGrid(m), ConstraintBasis(h)
    theta = grid.theta
    s = n.psd(theta)
    bar = _Barrier(s, basis, theta, P)
    M = theta.size
    tau = min(1.0, P / (2.0 * np.mean(s)))
    v = np.column_stack([np.full(M, 1.0 + tau), np.ones(M), np.zeros(M)])
    t = 1.0
    slack = P - bar.power(v)
    while True:
        f = bar.phi(v, t)
        for _ in range(max_newton):
            dv, dec, slack = bar.newton(v, t)
            if dec / 2.0 <= 1e-12:
                break
            step = 1.0
            while step > 1e-14:
                cand = v + step * dv
                fc = bar.phi(cand, t)
                if np.isfinite(fc) and fc >= f + 0.25 * step * dec:
                    break
                step *= 0.5
            else:
                break
            stalled = fc - f <= 1e-15 * max(1.0, abs(f))
            v, f = cand, fc
            if stalled:
                break
        else:
            raise NonConvergenceError("primal centering did not converge", best=v, residual=dec)
        if (M + 1) / t <= gap_tol:
            break
        t *= mu
    slack = P - bar.power(v)
    W, x, b = v.T.copy()
    pt = PrimalPoint(W, x, b, lam=1.0 / (t * slack))
    value = 0.5 * float(np.mean(np.log(W))) / LN2
    log.debug("solve_primal h=%d m=%d: t=%.1e value=%.10f", h, m, t, value)
    return pt, value
