"""Discretized Lagrangian dual for the h-truncated feedback capacity.

All objective values here are in nats; ``*_bits`` helpers convert. For a dual
point ``(lam, eta, eta0)`` and angle ``theta`` write ``s = S_w(theta)``,
``u = 2 lam s``, ``r1 = u + eta.A(theta) + eta0``, ``r2 = eta.B(theta)`` and
``R = r1^2 + r2^2``. The inner variable ``nu`` solves ``R (u - nu) = nu^2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from fbcap.errors import NonConvergenceError, PreconditionError, WhiteNoiseError
from fbcap.noise import NoiseModel, PowerBudget, _budget
from fbcap.quadrature import circle_mean

log = logging.getLogger(__name__)

LN2 = np.log(2.0)
KKT_TOL = 1e-7
MAX_ITER = 500
R_ZERO = 1e-14
MAX_PINS = 12


@dataclass(frozen=True)
class FrequencyGrid:
    """``theta_i = -pi + (pi/m)(i-1)``, ``i = 1..2m``."""

    m: int

    def __post_init__(self):
        if int(self.m) < 1:
            raise PreconditionError("m must be a positive integer")

    @property
    def theta(self) -> np.ndarray:
        return -np.pi + (np.pi / self.m) * np.arange(2 * self.m)

    def __len__(self):
        return 2 * self.m


@dataclass(frozen=True)
class ConstraintBasis:
    """``A(theta) = [cos k theta]``, ``B(theta) = [sin k theta]`` for ``k = 1..h``."""

    h: int

    def __post_init__(self):
        if int(self.h) < 0:
            raise PreconditionError("h must be nonnegative")

    def A(self, theta) -> np.ndarray:
        k = np.arange(1, self.h + 1)
        return np.cos(np.multiply.outer(np.asarray(theta, float), k))

    def B(self, theta) -> np.ndarray:
        k = np.arange(1, self.h + 1)
        return np.sin(np.multiply.outer(np.asarray(theta, float), k))


@dataclass(frozen=True)
class DualPoint:
    lam: float
    eta: np.ndarray
    eta0: float
    nu: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "eta", np.atleast_1d(np.asarray(self.eta, float)).ravel())
        if self.nu is not None:
            object.__setattr__(self, "nu", np.asarray(self.nu, float))
        if not self.lam > 0:
            raise PreconditionError("lambda must be strictly positive")

    def vector(self) -> np.ndarray:
        return np.concatenate([[self.lam], self.eta, [self.eta0]])

    @classmethod
    def from_vector(cls, z, nu=None) -> "DualPoint":
        return cls(float(z[0]), z[1:-1], float(z[-1]), nu)


@dataclass(frozen=True, eq=False)
class DualSolution:
    point: DualPoint
    grid: FrequencyGrid
    basis: ConstraintBasis
    objective_discrete: float
    kkt_residual: float
    noise: NoiseModel
    budget: PowerBudget
    diagnostics: dict = field(default_factory=dict)

    @property
    def h(self) -> int:
        return self.basis.h

    @property
    def m(self) -> int:
        return self.grid.m

    @property
    def upper_bound_discrete_bits(self) -> float:
        """``-g~_m`` at the optimum, i.e. the discrete dual value, in bits."""
        return -self.objective_discrete / LN2


def _linear_parts(z, theta, s, basis):
    lam, eta, eta0 = z[0], z[1:-1], z[-1]
    u = 2.0 * lam * s
    if basis.h:
        Ath, Bth = basis.A(theta), basis.B(theta)
        r1 = u + Ath @ eta + eta0
        r2 = Bth @ eta
    else:
        Ath = Bth = np.zeros((theta.size, 0))
        r1 = u + eta0
        r2 = np.zeros_like(u)
    return u, r1, r2, Ath, Bth


def _inner(u, R):
    """Closed-form ``nu``, ``log(u - nu)``, ``R/(2 nu)`` and ``t = R/nu`` (stable forms)."""
    D = np.sqrt(R * R + 4.0 * u * R)
    t = (R + D) / (2.0 * u)
    pos = R > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = np.where(pos, R / t, 0.0)
        log_gap = np.where(pos, np.log(R) - 2.0 * np.log(t), np.log(u))
    return nu, log_gap, 0.5 * t, t


def r_squared(dp: DualPoint, theta, n: NoiseModel):
    """``(2 lam S + eta.A + eta0)^2 + (eta.B)^2``."""
    theta = np.atleast_1d(np.asarray(theta, float))
    basis = ConstraintBasis(dp.eta.size)
    _, r1, r2, _, _ = _linear_parts(dp.vector(), theta, n.psd(theta), basis)
    R = r1 * r1 + r2 * r2
    return R if R.size > 1 else float(R[0])


def nu_closed_form(dp: DualPoint, theta, n: NoiseModel):
    """Nonnegative root of ``nu^2 = r^2 (2 lam S - nu)``."""
    theta = np.atleast_1d(np.asarray(theta, float))
    s = n.psd(theta)
    R = np.atleast_1d(r_squared(dp, theta, n))
    nu, _, _, _ = _inner(2.0 * dp.lam * s, R)
    return nu if nu.size > 1 else float(nu[0])


def nu_from_r2(lam: float, s, R):
    """Same root, from precomputed ``S`` and ``r^2`` values."""
    nu, _, _, _ = _inner(2.0 * lam * np.asarray(s, float), np.asarray(R, float))
    return nu


def dual_objective_discrete(dp: DualPoint, grid: FrequencyGrid, basis: ConstraintBasis,
                            n: NoiseModel, p, grad: bool = False):
    """``g~_m(lam, eta, eta0, nu)`` in nats with ``nu`` taken from ``dp``.

    Returns ``-inf`` outside the domain ``0 <= nu_i < 2 lam S_i`` (with
    ``nu_i > 0`` wherever ``r_i^2 > 0``). With ``grad=True`` also returns the
    gradient w.r.t. ``(lam, eta, eta0, nu)``.
    """
    P = _budget(p)
    theta = grid.theta
    s = n.psd(theta)
    z = dp.vector()
    u, r1, r2, Ath, Bth = _linear_parts(z, theta, s, basis)
    R = r1 * r1 + r2 * r2
    nu = dp.nu
    if nu is None:
        raise PreconditionError("dual point carries no nu values")
    # r^2 below R_ZERO counts as zero, so the -r^2/(2 nu) term takes its limit 0
    R = np.where(R < R_ZERO, 0.0, R)
    if np.any(nu >= u) or np.any(nu < 0) or np.any((nu == 0) & (R > 0)):
        return (-np.inf, None) if grad else -np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = np.where(nu > 0, R / (2.0 * nu), 0.0)
        terms = 0.5 * np.log(u - nu) + 0.5 * u - quad
    val = float(np.mean(terms) - dp.lam * P + dp.eta0 + 0.5)
    if not grad:
        return val
    M = theta.size
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(nu > 0, r1 / nu, 0.0)
        y = np.where(nu > 0, r2 / nu, 0.0)
        g_nu = (-0.5 / (u - nu) + np.where(nu > 0, R / (2.0 * nu * nu), 0.0)) / M
    g_lam = np.mean(s / (u - nu) + s - 2.0 * s * x) - P
    g_eta = -(Ath.T @ x + Bth.T @ y) / M
    g_eta0 = 1.0 - np.mean(x)
    return val, np.concatenate([[g_lam], g_eta, [g_eta0], g_nu])


class _Reduced:
    """Objective with ``nu`` eliminated, plus analytic gradient and Hessian.

    Grid points in ``active`` are pinned to ``r = 0``: their term is the
    smooth limit ``log(u)/2 + u/2`` and the pinning is enforced as linear
    constraints by the caller.
    """

    def __init__(self, theta, s, basis, P):
        self.theta, self.s, self.basis, self.P = theta, s, basis, P
        self.A = basis.A(theta)
        self.B = basis.B(theta)
        self.active = np.zeros(theta.size, bool)
        M = theta.size
        # index of -theta_i on the grid
        self.mirror = (M - np.arange(M)) % M
        self.has_r2 = np.linalg.norm(self.B, axis=1) > 1e-12 if basis.h else np.zeros(M, bool)

    def groups(self):
        """Representatives of pinned mirror pairs."""
        idx = np.flatnonzero(self.active)
        return idx[idx <= self.mirror[idx]]

    def pin(self, i):
        self.active[i] = self.active[self.mirror[i]] = True

    def release(self, i):
        self.active[i] = self.active[self.mirror[i]] = False

    def constraint_rows(self):
        """Rows of ``r1_i = 0`` (and ``r2_i = 0`` where ``B_i != 0``) for pinned groups.

        Also returns, per row, the group position and whether it is an ``r2`` row.
        """
        rows, owner, is_r2 = [], [], []
        for k, i in enumerate(self.groups()):
            rows.append(np.concatenate([[2.0 * self.s[i]], self.A[i], [1.0]]))
            owner.append(k)
            is_r2.append(False)
            if self.has_r2[i]:
                rows.append(np.concatenate([[0.0], self.B[i], [0.0]]))
                owner.append(k)
                is_r2.append(True)
        C = np.array(rows).reshape(len(rows), self.basis.h + 2)
        return C, np.array(owner, int), np.array(is_r2, bool)

    def parts(self, z):
        lam, eta, eta0 = z[0], z[1:-1], z[-1]
        u = 2.0 * lam * self.s
        r1 = u + self.A @ eta + eta0
        r2 = self.B @ eta
        return u, r1, r2

    def value(self, z):
        if not z[0] > 0:
            return -np.inf
        u, r1, r2 = self.parts(z)
        R = np.where(self.active, 0.0, r1 * r1 + r2 * r2)
        _, log_gap, quad, _ = _inner(u, R)
        terms = 0.5 * log_gap + 0.5 * u - np.where(self.active, 0.0, quad)
        return float(np.mean(terms) - z[0] * self.P + z[-1] + 0.5)

    def xy(self, z):
        u, r1, r2 = self.parts(z)
        R = np.where(self.active, 0.0, r1 * r1 + r2 * r2)
        nu, _, _, t = _inner(u, R)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = np.where(R > 0, r1 * t / R, 0.0)
            y = np.where(R > 0, r2 * t / R, 0.0)
        return u, r1, r2, R, nu, x, y

    def gradient(self, z, cache=None):
        u, r1, r2, R, nu, x, y = cache or self.xy(z)
        M = self.theta.size
        smooth = R > 0
        g_lam = np.mean(np.where(smooth, self.s * ((x - 1.0) ** 2 + y * y),
                                 self.s + 1.0 / (2.0 * z[0]))) - self.P
        g_eta = -(self.A.T @ x + self.B.T @ y) / M
        g_eta0 = 1.0 - np.mean(x)
        return np.concatenate([[g_lam], g_eta, [g_eta0]])

    def hessian(self, z, cache=None):
        u, r1, r2, R, nu, x, y = cache or self.xy(z)
        M, h = self.theta.size, self.basis.h
        ones = np.ones((M, 1))
        zero = np.zeros((M, 1))
        two_s = (2.0 * self.s)[:, None]
        J_r1 = np.hstack([two_s, self.A, ones])
        J_r2 = np.hstack([zero, self.B, zero])
        J_u = np.hstack([two_s, np.zeros((M, h)), zero])
        ok = (R > 0)[:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            J_nu = ((u - nu)[:, None] * 2.0 * (r1[:, None] * J_r1 + r2[:, None] * J_r2)
                    + R[:, None] * J_u) / (2.0 * nu + R)[:, None]
            J_x = np.where(ok, J_r1 / nu[:, None] - (r1 / nu**2)[:, None] * J_nu, 0.0)
            J_y = np.where(ok, J_r2 / nu[:, None] - (r2 / nu**2)[:, None] * J_nu, 0.0)
        H = np.empty((h + 2, h + 2))
        H[0] = np.mean(2.0 * self.s[:, None] * ((x - 1.0)[:, None] * J_x + y[:, None] * J_y), axis=0)
        H[0, 0] -= np.sum(~ok) / (2.0 * z[0] ** 2) / M
        H[1:-1] = -(self.A.T @ J_x + self.B.T @ J_y) / M
        H[-1] = -np.mean(J_x, axis=0)
        return 0.5 * (H + H.T)

    def kink_xy(self, z, g):
        """``(x, y)`` at pinned groups recovered from the constraint multipliers."""
        C, owner, is_r2 = self.constraint_rows()
        reps = self.groups()
        xy = np.zeros((reps.size, 2))
        if C.shape[0] == 0:
            return reps, xy
        weight = np.array([1.0 if self.mirror[i] == i else 2.0 for i in reps])
        coef = np.linalg.lstsq(C.T, g, rcond=None)[0] * self.theta.size
        xy[owner, is_r2.astype(int)] = coef / weight[owner]
        return reps, xy


def _initial_point(red: _Reduced, P: float) -> np.ndarray:
    s = red.s
    lam0 = 1.0 / (2.0 * np.mean(s))
    h = red.basis.h
    z = np.concatenate([[lam0], np.zeros(h), [0.0]])

    def mean_x(eta0):
        z[-1] = eta0
        return np.mean(red.xy(z)[5]) - 1.0

    lo, hi = -1.0, 1.0
    while mean_x(lo) > 0:
        lo *= 2.0
    while mean_x(hi) < 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mean_x(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    z[-1] = 0.5 * (lo + hi)
    return z


def kkt_residuals_at(dp: DualPoint, grid: FrequencyGrid, basis: ConstraintBasis,
                     n: NoiseModel, p, kinks: dict | None = None) -> tuple:
    """Discretized stationarity residuals ``(power, basis, mean, nu)``.

    ``nu`` is taken from ``dp`` (closed form if absent). ``kinks`` maps grid
    indices with ``nu = 0`` to the limit of ``(r1/nu, r2/nu)`` there (a subgradient).
    """
    P = _budget(p)
    theta = grid.theta
    s = n.psd(theta)
    u, r1, r2, Ath, Bth = _linear_parts(dp.vector(), theta, s, basis)
    R = r1 * r1 + r2 * r2
    nu = dp.nu if dp.nu is not None else nu_from_r2(dp.lam, s, R)
    with np.errstate(divide="ignore", invalid="ignore"):
        x = np.where(nu > 0, r1 / nu, 0.0)
        y = np.where(nu > 0, r2 / nu, 0.0)
        for i, (xi, yi) in (kinks or {}).items():
            x[i], y[i] = xi, yi
            R[i] = 0.0
        res_power = abs(np.mean(s * (1.0 / (u - nu) - 2.0 * x + 1.0)) - P)
        res_nu = np.max(np.abs(R * (u - nu) - nu * nu) / np.maximum(R * u + nu * nu, 1e-300))
    M = theta.size
    res_basis = float(np.max(np.abs(Ath.T @ x + Bth.T @ y) / M)) if basis.h else 0.0
    res_mean = abs(1.0 - np.mean(x))
    return float(res_power), res_basis, float(res_mean), float(res_nu)


def kkt_residuals(sol: DualSolution) -> tuple:
    return kkt_residuals_at(sol.point, sol.grid, sol.basis, sol.noise, sol.budget,
                            sol.diagnostics.get("kinks"))


def _project(red: _Reduced, z: np.ndarray) -> np.ndarray:
    """Move ``(eta, eta0)`` (and ``lam`` only if needed) onto the pinned constraints."""
    C = red.constraint_rows()[0]
    if C.shape[0] == 0:
        return z
    viol = C @ z
    sub = C[:, 1:]
    dz = np.zeros_like(z)
    if np.linalg.matrix_rank(sub) == C.shape[0]:
        dz[1:] = -np.linalg.lstsq(sub, viol, rcond=None)[0]
    else:
        dz = -np.linalg.lstsq(C, viol, rcond=None)[0]
    out = z + dz
    return out if out[0] > 0 else z


def _newton(red: _Reduced, z, tol, max_iter, trace):
    """Damped Newton on the subspace satisfying the pinned constraints."""
    C = red.constraint_rows()[0]
    N = sla.null_space(C) if C.shape[0] else np.eye(z.size)
    f = red.value(z)
    for it in range(1, max_iter + 1):
        cache = red.xy(z)
        g = red.gradient(z, cache)
        gN = N.T @ g
        res = float(np.max(np.abs(N @ gN)))
        trace.append(res)
        if res <= tol:
            return z, True, it
        H = red.hessian(z, cache)
        d = N @ _newton_direction(N.T @ H @ N, gN)
        step = 1.0
        if d[0] < 0:
            step = min(1.0, 0.95 * z[0] / -d[0])
        slope = float(g @ d)
        while step > 1e-16:
            z_new = z + step * d
            f_new = red.value(z_new)
            if np.isfinite(f_new) and f_new >= f + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            return z, False, it
        z, f = z_new, f_new
    return z, False, max_iter


def solve_dual(n: NoiseModel, p, h: int, m: int, kkt_tol: float = KKT_TOL,
               max_iter: int = MAX_ITER) -> DualSolution:
    """Maximize the reduced concave dual by damped Newton with backtracking.

    ``nu`` is eliminated through its closed form, so the search runs over
    ``(lam, eta, eta0)`` only; iterates keep ``lam > 0``. The objective has
    kinks where ``r = 0``; an active set pins such grid points (with their
    mirror images) and recovers the subgradient from the multipliers.
    """
    P = _budget(p)
    h, m = int(h), int(m)
    if not 2 * m > h:
        raise PreconditionError("need 2m > h")
    if n.is_white():
        raise WhiteNoiseError("noise spectrum is flat: use nonfeedback_capacity instead")
    grid, basis = FrequencyGrid(m), ConstraintBasis(h)
    theta = grid.theta
    red = _Reduced(theta, n.psd(theta), basis, P)
    z = _initial_point(red, P)
    trace = []
    total = 0
    kinks = {}
    phase_cap = 50
    for _ in range(MAX_PINS):
        z, ok, it = _newton(red, z, 0.1 * kkt_tol, min(phase_cap, max_iter - total), trace)
        total += it
        if ok:
            g = red.gradient(z)
            reps, xy = red.kink_xy(z, g)
            bound = 1.0 / (2.0 * z[0] * red.s[reps])
            excess = np.sum(xy**2, axis=1) - bound * (1.0 + 1e-9)
            if reps.size and np.max(excess) > 0:
                # multiplier outside the subdifferential: release that group
                red.release(reps[np.argmax(excess)])
                continue
            for i, (xv, yv) in zip(reps, xy):
                kinks[int(i)] = (float(xv), float(yv))
                kinks[int(red.mirror[i])] = (float(xv), float(-yv))
            break
        if total >= max_iter:
            break
        u, r1, r2 = red.parts(z)
        closeness = np.where(red.active, np.inf, (r1 * r1 + r2 * r2) / u**2)
        pick = int(np.argmin(closeness))
        red.pin(pick)
        log.debug("pinning grid point %d (theta=%.4f) to r = 0", pick, theta[pick])
        z = _project(red, z)
    else:
        ok = False
    nu = red.xy(z)[4]
    nu[red.active] = 0.0
    dp = DualPoint.from_vector(z, nu)
    resid = kkt_residuals_at(dp, grid, basis, n, P, kinks)
    worst = max(resid)
    if worst > kkt_tol or not ok:
        raise NonConvergenceError(
            f"dual solver stopped after {total} iterations with KKT residual {worst:.3e}",
            best=dp, residual=worst)
    obj = dual_objective_discrete(dp, grid, basis, n, P)
    log.debug("solve_dual h=%d m=%d: %d iterations, residual %.2e", h, m, total, worst)
    return DualSolution(dp, grid, basis, obj, worst, n, PowerBudget(P),
                        {"iterations": total, "residual_trace": trace, "kinks": kinks})


def _newton_direction(H, g):
    """Ascent direction ``-H^{-1} g`` for negative definite ``H`` (shifted if needed)."""
    negH = -H
    scale = max(1.0, float(np.max(np.abs(np.diag(negH)))))
    shift = 0.0
    for _ in range(60):
        try:
            L = np.linalg.cholesky(negH + shift * np.eye(H.shape[0]))
        except np.linalg.LinAlgError:
            shift = max(2.0 * shift, 1e-12 * scale)
            continue
        return np.linalg.solve(L.T, np.linalg.solve(L, g))
    return g


def dual_function(dp: DualPoint, n: NoiseModel, p, tol: float = 1e-10) -> float:
    """Continuous dual ``g(lam, eta, eta0)`` in nats, by adaptive quadrature."""
    P = _budget(p)
    basis = ConstraintBasis(dp.eta.size)
    z = dp.vector()

    def integrand(theta):
        s = n.psd(theta)
        u, r1, r2, _, _ = _linear_parts(z, theta, s, basis)
        _, log_gap, quad, _ = _inner(u, r1 * r1 + r2 * r2)
        return 0.5 * log_gap + 0.5 * u - quad

    return circle_mean(integrand, tol=tol) - dp.lam * P + dp.eta0 + 0.5


def upper_bound_continuous(sol: DualSolution, tol: float = 1e-10) -> float:
    """Guaranteed upper bound ``-g(lam, eta, eta0)`` on the feedback capacity, bits."""
    return -dual_function(sol.point, sol.noise, sol.budget, tol) / LN2
