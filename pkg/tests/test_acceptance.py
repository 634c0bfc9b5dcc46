"""Acceptance criteria 1 to 12.

Every test records one ``CRITERION n: PASS|FAIL`` line that is printed in the
terminal summary. Criteria whose literal wording cannot be met are marked as
strict xfail and paired with a passing check of the reproducible content.
"""

import time

import numpy as np
import pytest

from fbcap import NoiseModel, build_scheme, sk_instantiate, solve_dual, synthesize, upper_bound_continuous
from fbcap.cli import ChannelSpec, cmd_capacity, cmd_curve, sk_recursion_check
from fbcap.dual import ConstraintBasis, DualPoint, FrequencyGrid, dual_objective_discrete, kkt_residuals
from fbcap.noise import ma1_closed_form, nonfeedback_capacity
from fbcap.primal import solve_primal
from fbcap.simulate import error_probability
from tests.conftest import ACCEPTANCE_LINES

P = 10.0
MA1_COEFFS = [1.0, 0.4]
MA2_COEFFS = [1.0, 0.1, 0.5]
ARMA3_NUM = [1.0, -0.3, 0.5, 0.2]
ARMA3_DEN = [1.0, 0.1, 0.6, 0.5]
HALF_UNIT = 5e-5  # reported values carry four decimals


def record(cid, ok, detail):
    ACCEPTANCE_LINES.append(f"CRITERION {cid}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def brackets_rounded(lower, upper, value):
    """True if ``[lower, upper]`` meets the rounding cell of a four-decimal value."""
    return lower <= value + HALF_UNIT and upper >= value - HALF_UNIT


@pytest.fixture(scope="module")
def ma1_run():
    t0 = time.perf_counter()
    row = cmd_capacity(ChannelSpec("ma1", MA1_COEFFS, [1.0], P), [20], m=320)[0]
    return row, time.perf_counter() - t0


@pytest.fixture(scope="module")
def ma2_run():
    t0 = time.perf_counter()
    noise = NoiseModel.from_coeffs(MA2_COEFFS)
    sol = solve_dual(noise, P, 24, 384)
    res = synthesize(sol)
    scheme = build_scheme(res)
    upper = upper_bound_continuous(sol)
    return sol, res, scheme, upper, time.perf_counter() - t0


def test_criterion_01_ma1_capacity(ma1_run):
    row, dt = ma1_run
    exact = ma1_closed_form(0.4, 0.0, P)
    ok = (row["status"] == "ok" and brackets_rounded(row["lower"], row["upper"], 1.8819)
          and row["gap"] <= 1e-2 and row["upper"] >= exact - 1e-6 and dt <= 120)
    record(1, ok, f"lower={row['lower']:.8f} upper={row['upper']:.8f} gap={row['gap']:.1e} "
                  f"root value={exact:.8f} time={dt:.1f}s")


@pytest.mark.xfail(strict=True, reason="1.8819 is the root value 1.88187 rounded up; no valid bound reaches it")
def test_criterion_01b_literal_rounded_target(ma1_run):
    row, _ = ma1_run
    ok = row["lower"] <= 1.8819 <= row["upper"] and row["upper"] >= 1.8819 - 1e-6
    record("1b", ok, f"literal check against 1.8819: upper={row['upper']:.8f}")


def test_criterion_02_ma1_closed_form(ma1_run):
    row, _ = ma1_run
    c = ma1_closed_form(0.4, 0.0, P)
    ok = abs(c - 1.8819) <= 1e-4 and abs(c - row["upper"]) <= 2e-3
    record(2, ok, f"closed form={c:.6f} pipeline={row['upper']:.6f}")


def test_criterion_03_nonfeedback():
    c1 = nonfeedback_capacity(NoiseModel.from_coeffs(MA1_COEFFS), P)
    c2 = nonfeedback_capacity(NoiseModel.from_coeffs(MA2_COEFFS), P)
    gain = ma1_closed_form(0.4, 0.0, P) - c1
    ok = abs(c1 - 1.7402) <= 1e-3 and abs(c2 - 1.7466) <= 1e-3 and abs(gain - 0.1417) <= 2e-3
    record(3, ok, f"MA(1)={c1:.5f} MA(2)={c2:.5f} gain={gain:.5f}")


def test_criterion_04_ma2_capacity(ma2_run):
    sol, res, scheme, upper, dt = ma2_run
    target = -0.2057 + 1.9340j
    poles = np.array(scheme.split.unstable_eigs)
    pole_err = max(min(abs(poles - target)), min(abs(poles - np.conj(target)))) if poles.size else np.inf
    ok = (brackets_rounded(res.rate, upper, 1.9194) and upper - res.rate <= 1e-2
          and poles.size == 2 and pole_err <= 1e-2
          and abs(scheme.rate_certificate - 1.9194) <= 5e-3 and dt <= 300)
    record(4, ok, f"lower={res.rate:.8f} upper={upper:.8f} poles={np.round(poles, 5).tolist()} "
                  f"certificate={scheme.rate_certificate:.6f} time={dt:.1f}s")


def _ma2_gaps(hs):
    noise = NoiseModel.from_coeffs(MA2_COEFFS)
    gaps = []
    for h in hs:
        sol = solve_dual(noise, P, h, 16 * h)
        gaps.append(upper_bound_continuous(sol) - synthesize(sol).rate)
    return np.array(gaps)


def _log_linear_within(gaps, hs, frac=0.2):
    if np.any(gaps <= 0):
        return False
    lg = np.log(gaps)
    fit = np.polyval(np.polyfit(hs, lg, 1), hs)
    return bool(np.all(np.abs(lg - fit) <= frac * np.abs(fit)))


@pytest.mark.xfail(strict=True, reason="MA(2) gaps reach the double-precision floor by h=16")
def test_criterion_05_gap_decay():
    hs = np.array([4, 8, 16, 24])
    gaps = _ma2_gaps(hs)
    ok = bool(np.all(np.diff(gaps) < 0)) and _log_linear_within(gaps, hs)
    record(5, ok, "gaps=" + ", ".join(f"{g:.1e}" for g in gaps))


def test_criterion_05b_gap_decay_resolvable_range():
    hs = np.array([2, 4, 6, 8])
    gaps = _ma2_gaps(hs)
    ok = bool(np.all(np.diff(gaps) < 0)) and _log_linear_within(gaps, hs)
    record("5b", ok, "h=2,4,6,8 gaps=" + ", ".join(f"{g:.1e}" for g in gaps))


def test_criterion_06_strong_duality():
    worst = 0.0
    for coeffs in (MA1_COEFFS, MA2_COEFFS):
        noise = NoiseModel.from_coeffs(coeffs)
        for h, m in ((4, 32), (8, 64), (12, 128)):
            _, pv = solve_primal(noise, P, h, m)
            dv = solve_dual(noise, P, h, m).upper_bound_discrete_bits
            worst = max(worst, abs(pv - dv))
    record(6, worst <= 1e-4, f"max |primal - dual| = {worst:.1e} bits")


def _random_poly(rng, k):
    roots = []
    while len(roots) < k:
        if k - len(roots) >= 2 and rng.random() < 0.5:
            r = rng.uniform(0.2, 0.8) * np.exp(1j * rng.uniform(0.2, np.pi - 0.2))
            roots += [r, r.conjugate()]
        else:
            roots.append(rng.uniform(-0.8, 0.8))
    return np.real(np.poly(roots))


def test_criterion_07_rate_certificate():
    rng = np.random.default_rng(2024)
    diffs = []
    for _ in range(10):
        q, p = int(rng.integers(1, 4)), int(rng.integers(0, 4))
        noise = NoiseModel.from_coeffs(_random_poly(rng, q), _random_poly(rng, p))
        res = synthesize(solve_dual(noise, P, 12, 192))
        diffs.append(abs(res.rate - build_scheme(res).rate_certificate))
    record(7, max(diffs) <= 2e-3, f"10 channels, max |rate - certificate| = {max(diffs):.1e}")


def test_criterion_08_sk_recursions():
    ok, err = sk_recursion_check(50)
    record(8, ok and err <= 1e-12, f"max relative deviation over 50 steps = {err:.1e}")


def test_criterion_09_double_exponential(ma2_run):
    _, _, scheme, _, _ = ma2_run
    t0 = time.perf_counter()
    ns = [10, 20, 30, 40, 50, 60]
    pe = np.array([error_probability(scheme, 0.95, n, 10**5, seed=0).p_e for n in ns])
    dt = time.perf_counter() - t0
    monotone = bool(np.all(np.diff(pe) < 0))
    mask = (pe > 1e-5) & (pe < 0.5)
    ll = np.log(-np.log(pe[mask]))
    ok = monotone and mask.sum() >= 2 and bool(np.all(np.diff(ll) > 0)) and dt <= 600
    record(9, ok, "p_e=" + ", ".join(f"{p:.2e}" for p in pe) + f" time={dt:.1f}s")


def test_criterion_10_power(ma2_run):
    _, _, ma2_scheme, _, _ = ma2_run
    schemes = {"sk": sk_instantiate(P, 1.0), "ma2": ma2_scheme}
    for name, (num, den) in {"ma1": (MA1_COEFFS, [1.0]), "arma3": (ARMA3_NUM, ARMA3_DEN)}.items():
        schemes[name] = build_scheme(synthesize(solve_dual(NoiseModel.from_coeffs(num, den), P, 12, 192)))
    dev = {k: abs(error_probability(s, 0.9, 1000, 200, seed=4).empirical_power / P - 1) for k, s in schemes.items()}
    record(10, max(dev.values()) <= 0.05,
           "relative power deviation " + ", ".join(f"{k}={v:.3f}" for k, v in dev.items()))


def test_criterion_11_kkt_and_gradient():
    worst_kkt = 0.0
    for num, den in ((MA1_COEFFS, [1.0]), (MA2_COEFFS, [1.0]), (ARMA3_NUM, ARMA3_DEN)):
        noise = NoiseModel.from_coeffs(num, den)
        for h, m in ((4, 32), (12, 128), (20, 320)):
            worst_kkt = max(worst_kkt, max(kkt_residuals(solve_dual(noise, P, h, m))))
    noise = NoiseModel.from_coeffs(MA2_COEFFS)
    grid, basis = FrequencyGrid(16), ConstraintBasis(4)
    rng = np.random.default_rng(11)
    worst_grad = 0.0
    for _ in range(20):
        lam = rng.uniform(0.02, 0.5)
        nu = rng.uniform(0.05, 0.95, grid.theta.size) * 2 * lam * noise.psd(grid.theta)
        dp = DualPoint(lam, rng.uniform(-0.5, 0.5, 4), rng.uniform(-1, 1), nu)
        _, grad = dual_objective_discrete(dp, grid, basis, noise, P, grad=True)
        z = np.concatenate([dp.vector(), dp.nu])

        def f(v):
            return dual_objective_discrete(DualPoint(v[0], v[1:5], v[5], v[6:]), grid, basis, noise, P)

        fd = np.empty_like(z)
        for i in range(z.size):
            step = 1e-5 * z[i] if i == 0 or i > 5 else 1e-6
            e = np.zeros_like(z)
            e[i] = step
            fd[i] = (f(z + e) - f(z - e)) / (2 * step)
        worst_grad = max(worst_grad, np.linalg.norm(grad - fd) / np.linalg.norm(fd))
    ok = worst_kkt <= 1e-7 and worst_grad <= 1e-6
    record(11, ok, f"max KKT residual={worst_kkt:.1e} max gradient rel. error={worst_grad:.1e}")


def test_criterion_12_arma3_curve():
    powers = [0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0]
    rows = cmd_curve(ChannelSpec("arma3", ARMA3_NUM, ARMA3_DEN, P), powers, 12)
    c = np.array([r["C"] for r in rows])
    lo = np.array([r["lower"] for r in rows])
    up = np.array([r["upper"] for r in rows])
    ok = (all(r["status"] == "ok" for r in rows) and bool(np.all(np.diff(c) >= 0))
          and bool(np.all(up >= lo)))
    record(12, ok, "C=" + ", ".join(f"{x:.4f}" for x in c))
