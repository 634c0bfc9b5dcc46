"""Linear feedback code built from the optimal sensitivity filter.

The controller ``K = Q/(1+Q)`` is realized in state space and split into
stable and antistable parts. The antistable state carries the message: the
encoder runs ``X~_u(k+1) = A_u X~_u(k)`` from ``X~_u(0) = X_u0`` and the
decoder runs ``K`` driven by the channel output ``Y``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from fbcap.errors import DegeneracyError, PreconditionError, ZeroRateError
from fbcap.lti import (
    Polynomial,
    RationalFilter,
    SplitRealization,
    StateSpace,
    TOL_STABILITY,
    feedback_transform_ss,
    hankel_reduce_ss,
    modal_split,
    ss_to_tf,
)
from fbcap.noise import NoiseModel, _budget

REDUCE_TOL = 1e-10
REDUCE_MIN_ORDER = 32


@dataclass(frozen=True, eq=False)
class CodingScheme:
    controller: RationalFilter
    split: SplitRealization
    rate_certificate: float
    message_dim: int
    noise: NoiseModel | None = None
    power: float | None = None
    q_realization: StateSpace | None = None
    k_realization: StateSpace | None = None
    hankel_sv: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not self.rate_certificate > 0:
            raise ZeroRateError("scheme has nonpositive rate")

    @property
    def A_u_inv(self) -> np.ndarray:
        return np.linalg.inv(self.split.A_u)

    def closed_loop_radius(self) -> float:
        """Spectral radius of the loop ``Y = U + W`` with the message removed."""
        sp = self.split
        A = np.block([[sp.A_u + sp.B_u @ sp.C_u, sp.B_u @ sp.C_s],
                      [sp.B_s @ sp.C_u, sp.A_s + sp.B_s @ sp.C_s]])
        return float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0

    def to_dict(self) -> dict:
        sp = self.split
        out = {
            "rate_certificate": self.rate_certificate,
            "message_dim": self.message_dim,
            "power": self.power,
            "controller": {"numerator": list(self.controller.num.coeffs),
                           "denominator": list(self.controller.den.coeffs)},
            "unstable_poles": [[z.real, z.imag] for z in sp.unstable_eigs],
            "split": {k: np.asarray(getattr(sp, k)).tolist()
                      for k in ("A_s", "B_s", "C_s", "A_u", "B_u", "C_u")},
        }
        if self.noise is not None:
            out["noise"] = {"numerator": list(self.noise.h.num.coeffs),
                            "denominator": list(self.noise.h.den.coeffs)}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "CodingScheme":
        sp = d["split"]
        mats = {}
        for k in ("A_s", "B_s", "C_s", "A_u", "B_u", "C_u"):
            mats[k] = np.asarray(sp[k], float)
        nu, ns = len(mats["A_u"]), len(mats["A_s"])
        mats["A_u"] = mats["A_u"].reshape(nu, nu)
        mats["B_u"] = mats["B_u"].reshape(nu, 1)
        mats["C_u"] = mats["C_u"].reshape(1, nu)
        mats["A_s"] = mats["A_s"].reshape(ns, ns)
        mats["B_s"] = mats["B_s"].reshape(ns, 1)
        mats["C_s"] = mats["C_s"].reshape(1, ns)
        eigs = tuple(complex(re, im) for re, im in d.get("unstable_poles", []))
        split = SplitRealization(unstable_eigs=eigs, **mats)
        ctrl = RationalFilter(Polynomial(d["controller"]["numerator"]),
                              Polynomial(d["controller"]["denominator"]))
        noise = None
        if d.get("noise"):
            noise = NoiseModel.from_coeffs(d["noise"]["numerator"], d["noise"]["denominator"])
        return cls(ctrl, split, float(d["rate_certificate"]), int(d["message_dim"]),
                   noise, d.get("power"))


@dataclass
class EncoderState:
    x_tilde: np.ndarray
    k: int = 0


@dataclass
class DecoderState:
    x_s: np.ndarray
    x_u: np.ndarray
    estimate: np.ndarray
    scale: np.ndarray  # A_u^{-k-1}
    k: int = 0


def _shift_realization(q) -> StateSpace:
    """Exact realization of ``sum_n q_n z^-n`` as a tapped delay line."""
    N = q.size
    A = np.eye(N, k=-1)
    B = np.zeros(N)
    B[0] = 1.0
    return StateSpace(A, B, q, 0.0)


def build_scheme(s, reduce_tol: float = REDUCE_TOL, order: int | None = None) -> CodingScheme:
    """Controller, modal split and rate certificate for a scaled filter.

    The FIR is reduced by Hankel SVD when it has more than 32 taps (or when
    ``order`` is given). ``K`` is realized directly as ``(A - BC, B, C)`` from
    the realization ``(A, B, C)`` of ``Q``.
    """
    fir = s.filter
    q = fir.q
    if fir.N == 0 or not np.any(q):
        raise ZeroRateError("zero-rate controller: Q is identically zero")
    sv = np.zeros(0)
    if order is None and fir.N <= REDUCE_MIN_ORDER:
        q_ss = _shift_realization(q)
    else:
        q_ss, sv, _ = hankel_reduce_ss(fir, reduce_tol, order)
    k_ss = feedback_transform_ss(q_ss)
    eigs = np.linalg.eigvals(k_ss.A)
    if not np.any(np.abs(eigs) > 1.0 + TOL_STABILITY):
        raise ZeroRateError("zero-rate controller: all poles of K are stable")
    try:
        split = modal_split(k_ss)
    except DegeneracyError as exc:
        raise ZeroRateError(f"zero-rate controller: {exc}") from exc
    rate = float(np.sum(np.log2(np.abs(split.unstable_eigs))))
    # the rational form is for display; high orders are better used via k_realization
    return CodingScheme(ss_to_tf(k_ss), split, rate, split.A_u.shape[0],
                        getattr(s, "noise", None), getattr(s, "power", None), q_ss, k_ss, sv)


def sk_instantiate(p, sigma2: float) -> CodingScheme:
    """White-noise special case: the Schalkwijk-Kailath scheme."""
    P = _budget(p)
    if not sigma2 > 0:
        raise PreconditionError("noise variance must be positive")
    a = float(np.sqrt((P + sigma2) / sigma2))
    g = float(np.sqrt(a * a - 1.0))
    split = SplitRealization(
        A_s=np.zeros((0, 0)), B_s=np.zeros((0, 1)), C_s=np.zeros((1, 0)),
        A_u=np.array([[a]]), B_u=np.array([[-g / a]]), C_u=np.array([[g]]),
        unstable_eigs=(complex(a),),
    )
    # K(z) = C_u B_u / (z - A_u) in powers of z^-1
    ctrl = RationalFilter(Polynomial((0.0, -g * g / a)), Polynomial((1.0, -a)))
    return CodingScheme(ctrl, split, float(np.log2(a)), 1, NoiseModel.white(sigma2), P)


def encoder_init(scheme: CodingScheme, x_u0) -> EncoderState:
    x0 = np.asarray(x_u0, float).reshape(scheme.message_dim)
    return EncoderState(x0.copy())


def decoder_init(scheme: CodingScheme) -> DecoderState:
    sp = scheme.split
    return DecoderState(np.zeros(sp.A_s.shape[0]), np.zeros(sp.A_u.shape[0]),
                        np.zeros(sp.A_u.shape[0]), scheme.A_u_inv.copy())


def encoder_step(scheme: CodingScheme, enc: EncoderState, u_hat: float):
    """``U(k) = C_u X~_u(k) + U^(k)``, then ``X~_u <- A_u X~_u``."""
    sp = scheme.split
    u = float(sp.C_u[0] @ enc.x_tilde) + float(u_hat)
    return u, EncoderState(sp.A_u @ enc.x_tilde, enc.k + 1)


def decoder_output(scheme: CodingScheme, dec: DecoderState) -> float:
    """``U^(k) = C_s X_s(k) + C_u X^_u(k)``; needs no ``Y(k)`` since ``K`` is strictly proper."""
    sp = scheme.split
    return float(sp.C_s[0] @ dec.x_s + sp.C_u[0] @ dec.x_u)


def decoder_step(scheme: CodingScheme, dec: DecoderState, y: float):
    """Run ``K`` on ``Y(k)``; returns ``(U^(k), X^_u0(k), new state)``.

    ``X^_u0(k) = A_u^{-k-1} X^_u(k+1)`` is accumulated as
    ``X^_u0(k-1) + A_u^{-k-1} B_u Y(k)`` with the power updated by one
    multiplication per step.
    """
    sp = scheme.split
    y = float(y)
    u_hat = decoder_output(scheme, dec)
    x_s = sp.A_s @ dec.x_s + sp.B_s[:, 0] * y
    x_u = sp.A_u @ dec.x_u + sp.B_u[:, 0] * y
    est = dec.estimate + dec.scale @ sp.B_u[:, 0] * y
    scale = scheme.A_u_inv @ dec.scale
    return u_hat, est, DecoderState(x_s, x_u, est, scale, dec.k + 1)
