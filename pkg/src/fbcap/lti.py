"""SISO discrete-time LTI algebra.

Polynomials are stored in ascending powers of ``z^-1``: ``coeffs[k]`` multiplies
``z^-k``. This matches causal impulse responses directly; conversion from the
descending-``z`` form used in printed transfer functions goes through
:meth:`RationalFilter.from_z`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy import signal

from fbcap.errors import DegeneracyError, NotProperError, PreconditionError, UnitCirclePoleError

# Margin from the unit circle used to call a root stable or antistable.
TOL_STABILITY = 1e-9


def _as_coeffs(values) -> tuple:
    c = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
    if not np.all(np.isfinite(c)):
        raise ValueError("polynomial coefficients must be finite")
    nz = np.flatnonzero(c)
    if nz.size == 0:
        return (0.0,)
    return tuple(float(v) for v in c[: nz[-1] + 1])


@dataclass(frozen=True)
class Polynomial:
    """``c0 + c1 z^-1 + ... + cd z^-d`` with trailing zeros stripped."""

    coeffs: tuple = (0.0,)

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_coeffs(self.coeffs))

    @property
    def c(self) -> np.ndarray:
        return np.array(self.coeffs)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def is_zero(self) -> bool:
        return self.coeffs == (0.0,)

    def __call__(self, zinv):
        """Evaluate at ``z^-1 = zinv`` (scalar or array) by Horner's rule."""
        return np.polyval(self.c[::-1], zinv)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        a, b = self.c, other.c
        n = max(a.size, b.size)
        return Polynomial(np.pad(a, (0, n - a.size)) + np.pad(b, (0, n - b.size)))

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(np.convolve(self.c, other.c))

    def scale(self, k: float) -> "Polynomial":
        return Polynomial(self.c * k)


@dataclass(frozen=True)
class RationalFilter:
    """``num(z^-1) / den(z^-1)``; requires ``den(0) != 0`` so the filter is causal."""

    num: Polynomial
    den: Polynomial = field(default_factory=lambda: Polynomial((1.0,)))

    def __post_init__(self):
        if not isinstance(self.num, Polynomial):
            object.__setattr__(self, "num", Polynomial(self.num))
        if not isinstance(self.den, Polynomial):
            object.__setattr__(self, "den", Polynomial(self.den))
        if self.den.is_zero():
            raise PreconditionError("denominator is identically zero")
        if self.den.coeffs[0] == 0.0:
            raise NotProperError("den(0) == 0: filter is not proper in z^-1")

    @classmethod
    def from_z(cls, num_z, den_z) -> "RationalFilter":
        """Build from coefficient lists in descending powers of ``z``."""
        nz = np.trim_zeros(np.atleast_1d(np.asarray(num_z, float)), "f")
        dz = np.trim_zeros(np.atleast_1d(np.asarray(den_z, float)), "f")
        if dz.size == 0:
            raise PreconditionError("denominator is identically zero")
        if nz.size == 0:
            return cls(Polynomial((0.0,)), Polynomial((1.0,)))
        deg = max(nz.size, dz.size) - 1
        num = np.concatenate([np.zeros(deg - (nz.size - 1)), nz])
        den = np.concatenate([np.zeros(deg - (dz.size - 1)), dz])
        return cls(Polynomial(num), Polynomial(den))

    @classmethod
    def fir(cls, taps) -> "RationalFilter":
        """``sum_k taps[k] z^-k`` (taps[0] is the direct term)."""
        return cls(Polynomial(taps), Polynomial((1.0,)))

    def normalized(self) -> "RationalFilter":
        d0 = self.den.coeffs[0]
        if d0 == 0.0:
            raise NotProperError("den(0) == 0: filter is not proper in z^-1")
        return RationalFilter(self.num.scale(1.0 / d0), self.den.scale(1.0 / d0))

    @property
    def order(self) -> int:
        return max(self.num.degree, self.den.degree)

    def to_z(self) -> tuple[np.ndarray, np.ndarray]:
        """Coefficients in descending powers of ``z`` over a common degree."""
        n = self.order
        return (np.pad(self.num.c, (0, n - self.num.degree)),
                np.pad(self.den.c, (0, n - self.den.degree)))


@dataclass(frozen=True)
class StateSpace:
    """``x(k+1) = A x(k) + B u(k)``, ``y(k) = C x(k) + D u(k)`` (SISO)."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: float = 0.0

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, float))
        n = A.shape[0] if A.size else 0
        A = A.reshape(n, n)
        B = np.asarray(self.B, float).reshape(n, 1)
        C = np.asarray(self.C, float).reshape(1, n)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", float(self.D))

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def evaluate(self, theta):
        """Frequency response ``C (zI - A)^-1 B + D`` at ``z = e^{j theta}``."""
        theta = np.asarray(theta, float)
        out = np.empty(theta.shape, complex)
        n = self.n_states
        if n == 0:
            out[...] = self.D
            return out if out.ndim else complex(out)
        # Schur form keeps each solve O(n^2) and well conditioned
        T, Z = sla.schur(self.A.astype(complex), output="complex")
        b = Z.conj().T @ self.B[:, 0]
        c = self.C[0] @ Z
        eye = np.eye(n)
        for idx, th in np.ndenumerate(theta):
            x = sla.solve_triangular(np.exp(1j * th) * eye - T, b)
            out[idx] = c @ x + self.D
        return out if out.ndim else complex(out)


@dataclass(frozen=True)
class SplitRealization:
    """Block-diagonal realization separating stable and antistable modes."""

    A_s: np.ndarray
    B_s: np.ndarray
    C_s: np.ndarray
    A_u: np.ndarray
    B_u: np.ndarray
    C_u: np.ndarray
    unstable_eigs: tuple
    D: float = 0.0

    def combined(self) -> StateSpace:
        return StateSpace(sla.block_diag(self.A_s, self.A_u),
                          np.vstack([self.B_s, self.B_u]),
                          np.hstack([self.C_s, self.C_u]), self.D)


def evaluate(f: RationalFilter, theta):
    """``f(e^{j theta})``; raises :class:`UnitCirclePoleError` on a pole."""
    theta_arr = np.asarray(theta, float)
    w = np.exp(-1j * theta_arr)
    den = f.den(w)
    scale = np.max(np.abs(f.den.c))
    bad = np.abs(den) <= 1e-13 * scale
    if np.any(bad):
        raise UnitCirclePoleError(theta_arr[bad].ravel()[0] if theta_arr.ndim else float(theta_arr))
    out = f.num(w) / den
    return out if np.ndim(out) else complex(out)


def _polish_roots(c_desc: np.ndarray, roots: np.ndarray) -> np.ndarray:
    """One Newton step per root, kept only where it lowers the residual."""
    dc = np.polyder(c_desc)
    # high degree and |root| > 1 can overflow; such roots are left as they are
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        p = np.polyval(c_desc, roots)
        dp = np.polyval(dc, roots)
        ok = np.isfinite(p) & np.isfinite(dp) & (np.abs(dp) > 0)
        cand = roots.copy()
        cand[ok] = roots[ok] - p[ok] / dp[ok]
        better = ok & (np.abs(np.polyval(c_desc, cand)) < np.abs(p))
    return np.where(better, cand, roots)


def polynomial_roots(c_desc) -> np.ndarray:
    """Roots of a polynomial given in descending powers (balanced companion)."""
    c = np.trim_zeros(np.asarray(c_desc, float), "f")
    if c.size <= 1:
        return np.zeros(0, complex)
    n_zero = c.size - 1 - np.flatnonzero(c)[-1]
    core = c[: c.size - n_zero]
    roots = np.zeros(0, complex)
    if core.size > 1:
        comp = np.zeros((core.size - 1, core.size - 1))
        comp[0, :] = -core[1:] / core[0]
        comp[1:, :-1] = np.eye(core.size - 2)
        with np.errstate(invalid="ignore", over="ignore"):
            bal, _ = sla.matrix_balance(comp, permute=False)
        if not np.all(np.isfinite(bal)):
            bal = comp
        roots = _polish_roots(core, sla.eigvals(bal).astype(complex))
    return np.concatenate([roots, np.zeros(n_zero, complex)])


def poles_zeros(f: RationalFilter) -> tuple[np.ndarray, np.ndarray]:
    """Poles and finite zeros of ``f`` viewed as a rational function of ``z``."""
    num_z, den_z = f.to_z()
    return polynomial_roots(den_z), polynomial_roots(num_z)


def is_stable(f: RationalFilter, tol: float = TOL_STABILITY) -> bool:
    poles, _ = poles_zeros(f)
    return bool(np.all(np.abs(poles) < 1.0 - tol))


def _krylov_basis(A, b, tol):
    """Orthonormal basis of span{b, Ab, A^2 b, ...} by Arnoldi with reorthogonalization."""
    n = A.shape[0]
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros((n, 0))
    scale = max(np.linalg.norm(A, 2), 1.0)
    V = [b / nb]
    while len(V) < n:
        w = A @ V[-1]
        Vm = np.array(V).T
        for _ in range(2):
            w = w - Vm @ (Vm.T @ w)
        nw = np.linalg.norm(w)
        if nw <= tol * scale:
            break
        V.append(w / nw)
    return np.array(V).T


def minimal_realization(ss: StateSpace, tol: float = 1e-10) -> StateSpace:
    """Drop uncontrollable then unobservable modes (orthogonal projections)."""
    A, B, C = ss.A, ss.B[:, 0], ss.C[0]
    if A.shape[0] == 0:
        return ss
    V = _krylov_basis(A, B, tol)
    A, B, C = V.T @ A @ V, V.T @ B, C @ V
    if A.shape[0] == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), ss.D)
    W = _krylov_basis(A.T, C, tol)
    A, B, C = W.T @ A @ W, W.T @ B, C @ W
    return StateSpace(A, B, C, ss.D)


def to_state_space(f: RationalFilter, minimal: bool = True) -> StateSpace:
    """Controllable canonical form, diagonally balanced, reduced to minimal order."""
    g = f.normalized()
    n = g.order
    num = np.pad(g.num.c, (0, n - g.num.degree))
    den = np.pad(g.den.c, (0, n - g.den.degree))
    d = num[0]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), d)
    A = np.zeros((n, n))
    A[0, :] = -den[1:]
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros(n)
    B[0] = 1.0
    C = num[1:] - d * den[1:]
    with np.errstate(invalid="ignore", over="ignore"):
        Ab, (s, _) = sla.matrix_balance(A, permute=False, separate=True)
    if not np.all(np.isfinite(s)) or s.max() / s.min() > 2.0**40:
        # extreme scalings (tiny coefficients) would underflow B or C
        Ab, s = A, np.ones(n)
    ss = StateSpace(Ab, B / s, C * s, d)
    return minimal_realization(ss) if minimal else ss


def ss_to_tf(ss: StateSpace) -> RationalFilter:
    """Transfer function of a state-space model (coefficients via ``scipy.signal``)."""
    if ss.n_states == 0:
        return RationalFilter(Polynomial((ss.D,)), Polynomial((1.0,)))
    num, den = signal.ss2tf(ss.A, ss.B, ss.C, np.array([[ss.D]]))
    return RationalFilter(Polynomial(num[0]), Polynomial(den))


def modal_split(ss: StateSpace, tol: float = TOL_STABILITY) -> SplitRealization:
    """Similarity transform into ``diag(A_s, A_u)`` with |eig(A_s)| < 1 < |eig(A_u)|.

    Uses an ordered real Schur form followed by a Sylvester solve to zero the
    coupling block.
    """
    A = ss.A
    n = A.shape[0]
    eigs = np.linalg.eigvals(A) if n else np.zeros(0)
    close = np.abs(np.abs(eigs) - 1.0) <= tol
    if np.any(close):
        raise DegeneracyError(f"eigenvalue(s) on the unit circle: {eigs[close]}")
    T, Z, k = sla.schur(A, output="real", sort="iuc")
    A11, A12, A22 = T[:k, :k], T[:k, k:], T[k:, k:]
    X = sla.solve_sylvester(A11, -A22, -A12) if 0 < k < n else np.zeros((k, n - k))
    S = np.eye(n)
    S[:k, k:] = X
    Sinv = np.eye(n)
    Sinv[:k, k:] = -X
    V = Z @ S
    Vinv = Sinv @ Z.T
    Bt = Vinv @ ss.B
    Ct = ss.C @ V
    unstable = np.linalg.eigvals(A22) if n - k else np.zeros(0, complex)
    order = np.lexsort((unstable.imag, unstable.real))
    return SplitRealization(
        A_s=A11.copy(), B_s=Bt[:k], C_s=Ct[:, :k],
        A_u=A22.copy(), B_u=Bt[k:], C_u=Ct[:, k:],
        unstable_eigs=tuple(complex(v) for v in unstable[order]), D=ss.D,
    )


def _fir_taps(fir) -> np.ndarray:
    q = getattr(fir, "q", fir)
    return np.asarray(q, float).ravel()


def hankel_reduce_ss(fir, tol: float = 1e-10, order: int | None = None):
    """Balanced truncation of the strictly causal FIR ``sum_n q_n z^-n``.

    Returns ``(StateSpace, hankel_singular_values, kept_order)``. The kept
    order is the number of singular values above ``tol * sigma_max`` unless
    ``order`` is given explicitly.
    """
    if tol <= 0:
        raise PreconditionError("tol must be positive")
    q = _fir_taps(fir)
    N = q.size
    if N == 0 or not np.any(q):
        empty = StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), 0.0)
        return empty, np.zeros(0), 0
    # H[i, j] = q_{i+j+1}; the FIR shift realization has P = I and Q = H'H
    padded = np.concatenate([q, np.zeros(N)])
    H = sla.hankel(q, padded[N - 1: 2 * N - 1])
    _, sv, Vt = np.linalg.svd(H)
    r = int(np.sum(sv > tol * sv[0])) if order is None else int(order)
    rank = int(np.sum(sv > N * np.finfo(float).eps * sv[0]))
    r = max(1, min(r, rank))
    Vr = Vt[:r].T
    sq = np.sqrt(sv[:r])
    AV = np.vstack([np.zeros((1, r)), Vr[:-1]])
    Ar = (Vr.T @ AV) * sq[:, None] / sq[None, :]
    Br = sq * Vr[0]
    Cr = (q @ Vr) / sq
    return StateSpace(Ar, Br, Cr, 0.0), sv, r


def hankel_reduce(fir, tol: float = 1e-10, order: int | None = None) -> RationalFilter:
    """Reduced-order rational approximation of an FIR via Hankel SVD.

    Peak frequency-response error is bounded by twice the sum of the
    discarded Hankel singular values.
    """
    ss, _, _ = hankel_reduce_ss(fir, tol, order)
    return ss_to_tf(ss)


def feedback_transform(q: RationalFilter) -> RationalFilter:
    """Controller ``K = q / (1 + q)``."""
    den = q.den + q.num
    if den.is_zero():
        raise PreconditionError("1 + q is identically zero")
    if den.coeffs[0] == 0.0:
        raise NotProperError("1 + q vanishes at z = infinity; controller not proper")
    return RationalFilter(q.num, den).normalized()


def feedback_transform_ss(q: StateSpace) -> StateSpace:
    """State-space form of ``K = q/(1+q)`` for strictly proper ``q``: ``(A - BC, B, C)``."""
    if q.D != 0.0:
        raise PreconditionError("state-space feedback transform needs a strictly proper q")
    return StateSpace(q.A - q.B @ q.C, q.B, q.C, 0.0)
