"""Averages over the unit circle, ``(1/2pi) int_{-pi}^{pi} f(theta) dtheta``.

Composite Gauss-Legendre with panel doubling. Integrands must be vectorized
over a 1-D array of angles.
"""

import numpy as np

_GL_ORDER = 16
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(_GL_ORDER)


def gl_nodes(breaks):
    """Gauss-Legendre nodes and weights (summing to 1) on consecutive panels."""
    breaks = np.asarray(breaks, float)
    a, b = breaks[:-1], breaks[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = (mid[:, None] + half[:, None] * _NODES[None, :]).ravel()
    w = (half[:, None] * _WEIGHTS[None, :]).ravel()
    return x, w / (breaks[-1] - breaks[0])


def circle_mean(f, tol=1e-8, breakpoints=(), min_panels=8, max_panels=1 << 14):
    """Mean of ``f`` over ``[-pi, pi]`` refined until successive estimates agree to ``tol``.

    ``breakpoints`` are interior angles where ``f`` has a kink; every panel
    boundary set includes them so the rule stays high order on each piece.
    """
    extra = np.sort(np.asarray([b for b in breakpoints if -np.pi < b < np.pi], float))
    panels = min_panels
    prev = None
    while True:
        base = np.linspace(-np.pi, np.pi, panels + 1)
        breaks = np.unique(np.concatenate([base, extra]))
        x, w = gl_nodes(breaks)
        est = float(np.sum(w * f(x)))
        if prev is not None and abs(est - prev) <= tol:
            return est
        if panels >= max_panels:
            return est
        prev = est
        panels *= 2


def fft_autocovariance(S, lags, n_fft=None):
    """``r(k) = (1/2pi) int S(theta) cos(k theta) dtheta`` for ``k = 0..lags``.

    Trapezoid rule on a uniform grid via the FFT; for smooth periodic ``S``
    the only error is aliasing from ``r(k + n_fft)``.
    """
    if n_fft is None:
        n_fft = 1 << int(np.ceil(np.log2(max(8 * (lags + 1), 4096))))
    theta = 2 * np.pi * np.arange(n_fft) / n_fft
    vals = S(theta)
    r = np.fft.rfft(vals).real / n_fft
    if lags + 1 > r.size:
        raise ValueError("n_fft too small for the requested lags")
    return r[: lags + 1]
