"""Monte Carlo simulation of the feedback code over ``Y = U + W``.

The closed loop is run in error coordinates ``e = X~_u + X^_u``, which stay
bounded while the encoder and decoder states individually grow like
``A_u^k``. The running estimate then satisfies
``-X^_u0(k) = X_u0 - A_u^{-k-1} e(k+1)``, so the estimation error is
available without subtracting large quantities, and decisions are made in
grid units even when the spacing is far below float resolution.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.signal import lfilter
from scipy.stats import binomtest

from fbcap.coding import CodingScheme
from fbcap.errors import CodebookTooLargeError, PreconditionError
from fbcap.lti import poles_zeros, to_state_space
from fbcap.noise import NoiseModel

MAX_LOG2_COUNT = 32
MIN_TRIALS = 100
CHUNK = 4096


def _threads() -> int:
    cap = os.environ.get("FBCAP_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def burn_in(n: NoiseModel) -> int:
    """Ten slowest-mode time constants plus the moving-average memory."""
    poles, _ = poles_zeros(n.h)
    rho = float(np.max(np.abs(poles))) if poles.size else 0.0
    tau = -1.0 / np.log(rho) if rho > 0 else 0.0
    return int(math.ceil(10.0 * tau)) + n.h.num.degree + 1


def _filter_noise(n: NoiseModel, e: np.ndarray, burn: int) -> np.ndarray:
    return lfilter(n.h.num.c, n.h.den.c, e, axis=-1)[..., burn:]


def gen_noise(n: NoiseModel, length: int, seed) -> np.ndarray:
    """``length`` samples of ``W = H e`` after a burn-in from zero state."""
    if length < 1:
        raise PreconditionError("length must be at least 1")
    burn = burn_in(n)
    e = np.random.default_rng(seed).standard_normal(length + burn)
    return _filter_noise(n, e, burn)


def gen_noise_batch(n: NoiseModel, trials: int, length: int, rng: np.random.Generator) -> np.ndarray:
    burn = burn_in(n)
    e = rng.standard_normal((trials, length + burn))
    return _filter_noise(n, e, burn)


EXACT_LIMIT = 1 << 62


@dataclass(frozen=True)
class MessageCodebook:
    """``count`` points on a near-cubic grid, indexed row-major.

    Grid coordinates ``g`` lie in ``[-1, 1]^dim``; the message is ``frame @ g``
    where ``frame`` (unit determinant, identity by default) whitens the
    estimation error at the horizon, so nearest-point decisions in ``g`` are
    maximum likelihood.

    The grid is never enumerated: a message is its integer grid coordinates.
    Cells beyond ``count`` (in the last row) are unused; decoding into one is
    an error. Above ``2^62`` messages a message is its position in ``[0, 1)^dim``
    instead, the decision is taken in the log domain and the edge and
    unused-cell corrections (probability below ``2^-30``) are dropped.
    """

    n_uses: int
    rate: float
    count: int
    dim: int
    shape: tuple
    frame: np.ndarray | None = field(default=None, compare=False)

    def _to_grid(self, v) -> np.ndarray:
        v = np.atleast_2d(np.asarray(v, float))
        if self.frame is None:
            return v
        return sla.solve_triangular(self.frame, v.T, lower=True).T

    def _from_grid(self, g) -> np.ndarray:
        return g if self.frame is None else g @ self.frame.T

    @property
    def exact(self) -> bool:
        return self.count <= EXACT_LIMIT

    def coords(self, sub) -> np.ndarray:
        """Points for integer grid coordinates ``sub`` of shape (trials, dim)."""
        sub = np.atleast_2d(sub)
        if not self.exact:
            return self._from_grid(-1.0 + 2.0 * np.asarray(sub, float))
        cols = [_axis_value(sub[:, d], k) for d, k in enumerate(self.shape)]
        return self._from_grid(np.stack(cols, axis=-1))

    def index_to_sub(self, index) -> np.ndarray:
        return np.stack(np.unravel_index(np.atleast_1d(index), self.shape), axis=-1)

    def sub_to_index(self, sub) -> np.ndarray:
        return np.ravel_multi_index(tuple(np.atleast_2d(sub).T), self.shape)

    @property
    def points(self) -> np.ndarray:
        if self.count > 1 << 22:
            raise CodebookTooLargeError("codebook too large to list explicitly")
        return self.coords(self.index_to_sub(np.arange(self.count)))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Uniform messages as grid coordinates."""
        if self.exact:
            return self.index_to_sub(rng.integers(0, self.count, size=size))
        return rng.random((size, self.dim))

    def _in_use(self, sub) -> np.ndarray:
        if self.dim == 1 or not self.exact:
            return np.ones(sub.shape[0], bool)
        return self.sub_to_index(sub) < self.count

    def decide(self, sub, dev) -> tuple:
        """Nearest-point decision for ``point(sub) + dev``; returns ``(decoded_sub, error)``.

        Works with the offset in grid units, so spacings far below the float
        resolution of the point coordinates are handled.
        """
        sub = np.atleast_2d(sub)
        dev = self._to_grid(dev)
        out = sub.copy()
        moved = np.zeros(sub.shape[0], bool)
        for d, k in enumerate(self.shape):
            if k == 1:
                continue
            if self.exact:
                shift = np.rint(dev[:, d] * ((k - 1) / 2.0))
                step = np.clip(shift, -k, k).astype(np.int64)
                out[:, d] = np.clip(sub[:, d] + step, 0, k - 1)
                moved |= out[:, d] != sub[:, d]
            else:
                # |dev| (k-1)/2 >= 1/2, with k possibly beyond float range
                with np.errstate(divide="ignore"):
                    moved |= np.log2(np.abs(dev[:, d])) + math.log2(k - 1) >= 0.0
        error = moved | ~self._in_use(out)
        return out, error

    def decode(self, v) -> np.ndarray:
        """Nearest grid index per row of ``v``; ``-1`` for unused cells."""
        v = self._to_grid(v)
        sub = np.empty(v.shape, np.int64)
        for d, k in enumerate(self.shape):
            if k == 1:
                sub[:, d] = 0
            else:
                sub[:, d] = np.rint((np.clip(v[:, d], -1.0, 1.0) + 1.0) * (k - 1) / 2.0)
        idx = self.sub_to_index(sub)
        return np.where(idx < self.count, idx, -1)


def _axis_value(sub, k):
    if k == 1:
        return np.zeros(np.shape(sub))
    return -1.0 + 2.0 * np.asarray(sub, float) / (k - 1)


def _iroot_ceil(x: int, d: int) -> int:
    """Smallest integer ``k`` with ``k^d >= x``."""
    lo, hi = 1, 1
    while hi ** d < x:
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if mid ** d >= x:
            hi = mid
        else:
            lo = mid + 1
    return lo


def _pow2_ceil(bits: float) -> int:
    """``ceil(2^bits)`` (tolerant to rounding of ``bits``) as an exact integer."""
    if bits < 60:
        return int(math.ceil(2.0 ** bits * (1.0 - 1e-12)))
    e = int(math.floor(bits)) - 52
    return math.ceil(2.0 ** (bits - e)) << e


def _grid_shape(count: int, dim: int) -> tuple:
    shape = []
    remaining = count
    for d in range(dim, 0, -1):
        k = _iroot_ceil(remaining, d)
        shape.append(k)
        remaining = -(-remaining // k)
    return tuple(shape)


def decision_frame(scheme: CodingScheme, n_uses: int) -> np.ndarray:
    """Unit-determinant lower-triangular ``L`` with ``L L^T`` proportional to the
    covariance of the estimation error after ``n_uses`` steps.

    The error ``-A_u^{-n} e(n)`` is Gaussian and does not depend on the
    message; its covariance follows from the closed loop driven by the
    stationary noise. Identity for scalar messages or without a noise model.
    """
    sp = scheme.split
    d = sp.A_u.shape[0]
    if d < 2 or scheme.noise is None:
        return np.eye(d)
    w = to_state_space(scheme.noise.h)
    ns, nw = sp.A_s.shape[0], w.n_states
    Bu, Bs = sp.B_u, sp.B_s
    F = np.zeros((d + ns + nw, d + ns + nw))
    F[:d, :d] = sp.A_u + Bu @ sp.C_u
    F[:d, d:d + ns] = Bu @ sp.C_s
    F[:d, d + ns:] = Bu @ w.C
    F[d:d + ns, :d] = Bs @ sp.C_u
    F[d:d + ns, d:d + ns] = sp.A_s + Bs @ sp.C_s
    F[d:d + ns, d + ns:] = Bs @ w.C
    F[d + ns:, d + ns:] = w.A
    G = np.vstack([Bu * w.D, Bs * w.D, w.B])
    Z = np.zeros_like(F)
    if nw:
        Z[d + ns:, d + ns:] = sla.solve_discrete_lyapunov(w.A, w.B @ w.B.T)
    Q = G @ G.T
    Ainv = scheme.A_u_inv
    norm = abs(np.linalg.det(sp.A_u)) ** (1.0 / d)
    M = np.eye(d)
    for _ in range(n_uses):
        Z = F @ Z @ F.T + Q
        M = norm * (Ainv @ M)  # A_u^{-k} with the common growth removed
    S = M @ Z[:d, :d] @ M.T
    try:
        L = np.linalg.cholesky(0.5 * (S + S.T))
    except np.linalg.LinAlgError:
        return np.eye(d)
    return L / np.prod(np.diag(L)) ** (1.0 / d)


def build_codebook(scheme: CodingScheme, n_uses: int, rate_fraction: float,
                   max_bits: float | None = MAX_LOG2_COUNT, whiten: bool = True) -> MessageCodebook:
    """``ceil(2^{nR})`` messages at rate ``R = rate_fraction * rate_certificate``.

    ``max_bits=None`` lifts the size limit (the codebook is implicit anyway).
    With ``whiten`` the grid is laid out in coordinates where the horizon-``n``
    error is isotropic (see ``decision_frame``).
    """
    if not 0 < rate_fraction <= 1:
        raise PreconditionError("rate_fraction must lie in (0, 1]")
    if n_uses < 1:
        raise PreconditionError("n_uses must be at least 1")
    R = rate_fraction * scheme.rate_certificate
    bits = n_uses * R
    if max_bits is not None and bits > max_bits:
        raise CodebookTooLargeError(f"2^{bits:.2f} messages exceeds the 2^{max_bits:g} limit")
    count = max(2, _pow2_ceil(bits))
    dim = scheme.message_dim
    frame = decision_frame(scheme, n_uses) if whiten and dim > 1 else None
    return MessageCodebook(n_uses, R, count, dim, _grid_shape(count, dim), frame)


def _closed_loop(scheme: CodingScheme, x0: np.ndarray, W: np.ndarray, keep: bool = False):
    """Run all trials at once; ``x0`` is (trials, dim), ``W`` is (trials, n).

    Returns the estimation error ``-X^_u0(n-1) - X_u0 = -A_u^{-n} e(n)``, the
    average input power per trial and, if ``keep``, per-step records.
    """
    sp = scheme.split
    T, n = W.shape
    e = x0.copy()
    xs = np.zeros((T, sp.A_s.shape[0]))
    Ainv = scheme.A_u_inv
    scale = np.eye(e.shape[1])
    Au_t, As_t = sp.A_u.T, sp.A_s.T
    Bu, Bs = sp.B_u[:, 0], sp.B_s[:, 0]
    Cu, Cs = sp.C_u[0], sp.C_s[0]
    power = np.zeros(T)
    rows = [] if keep else None
    for k in range(n):
        u = e @ Cu + xs @ Cs
        y = u + W[:, k]
        e = e @ Au_t + np.outer(y, Bu)
        xs = xs @ As_t + np.outer(y, Bs)
        scale = Ainv @ scale
        power += u * u
        if not np.all(np.isfinite(e)):
            raise FloatingPointError(f"closed loop overflowed at step {k}")
        if keep:
            rows.append((k, u.copy(), y.copy(), x0 - e @ scale.T))
    return -e @ scale.T, power / n, rows


def run_trial(scheme: CodingScheme, codebook: MessageCodebook, message_index: int,
              n_uses: int, seed, noiseless: bool = False):
    """One transmission of ``message_index``; returns ``(decoded_index, stats)``.

    ``decoded_index`` is ``-1`` when the estimate falls in an unused cell.
    ``stats`` holds the average input power and the per-step transcript
    ``(k, U, Y, -X^_u0(k))``.
    """
    if not codebook.exact:
        raise CodebookTooLargeError("run_trial needs an integer-indexed codebook")
    if not 0 <= message_index < codebook.count:
        raise PreconditionError("message index out of range")
    if scheme.noise is None and not noiseless:
        raise PreconditionError("scheme carries no noise model")
    sub = codebook.index_to_sub(message_index)
    x0 = codebook.coords(sub)
    W = np.zeros((1, n_uses)) if noiseless else gen_noise(scheme.noise, n_uses, seed)[None, :]
    dev, power, rows = _closed_loop(scheme, x0, W, keep=True)
    out, err = codebook.decide(sub, dev)
    decoded = int(codebook.sub_to_index(out)[0])
    if err[0] and decoded >= codebook.count:
        decoded = -1
    transcript = [(k, float(u[0]), float(y[0]), e[0].tolist()) for k, u, y, e in rows]
    return decoded, {"power": float(power[0]), "transcript": transcript}


@dataclass(frozen=True)
class SimulationReport:
    trials: int
    errors: int
    p_e: float
    ci_low: float
    ci_high: float
    empirical_power: float
    horizon: int
    seed: int
    rate: float

    def to_dict(self) -> dict:
        return asdict(self)


def _chunk(scheme, codebook, n_uses, seed, c, size, noise):
    rng = np.random.default_rng(np.random.SeedSequence([seed, c]))
    sub = codebook.sample(rng, size)
    W = gen_noise_batch(noise, size, n_uses, rng)
    dev, power, _ = _closed_loop(scheme, codebook.coords(sub), W)
    _, err = codebook.decide(sub, dev)
    return int(np.sum(err)), float(np.sum(power))


def error_probability(scheme: CodingScheme, rate_fraction: float, n_uses: int, trials: int,
                      seed: int = 0, chunk: int = CHUNK,
                      max_bits: float | None = None) -> SimulationReport:
    """Monte Carlo ``p_e`` with uniform messages and a Wilson 95% interval.

    Trials are split into fixed chunks seeded by ``(seed, chunk index)``, so
    the report does not depend on the thread count.
    """
    if trials < MIN_TRIALS:
        raise PreconditionError(f"need at least {MIN_TRIALS} trials")
    if scheme.noise is None:
        raise PreconditionError("scheme carries no noise model")
    codebook = build_codebook(scheme, n_uses, rate_fraction, max_bits)
    sizes = [min(chunk, trials - s) for s in range(0, trials, chunk)]
    jobs = [(scheme, codebook, n_uses, seed, c, size, scheme.noise) for c, size in enumerate(sizes)]
    workers = _threads()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda a: _chunk(*a), jobs))
    else:
        results = [_chunk(*a) for a in jobs]
    errors = sum(r[0] for r in results)
    power = sum(r[1] for r in results) / trials
    ci = binomtest(errors, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return SimulationReport(trials, errors, errors / trials, float(ci.low), float(ci.high),
                            power, n_uses, seed, codebook.rate)


def write_transcript(path, transcript) -> None:
    """CSV rows ``k, U, Y, estimate...`` with 17 significant digits."""
    dim = len(transcript[0][3]) if transcript else 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "U", "Y"] + [f"estimate_{j + 1}" for j in range(dim)])
        for k, u, y, est in transcript:
            w.writerow([k, f"{u:.17g}", f"{y:.17g}"] + [f"{v:.17g}" for v in est])
