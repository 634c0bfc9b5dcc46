import numpy as np
import pytest

from fbcap import NoiseModel, build_scheme, solve_dual, synthesize
from fbcap.cli import sk_recursion_check
from fbcap.coding import (
    CodingScheme,
    decoder_init,
    decoder_output,
    decoder_step,
    encoder_init,
    encoder_step,
    sk_instantiate,
)
from fbcap.errors import ZeroRateError
from fbcap.lti import Polynomial, RationalFilter, SplitRealization
from fbcap.synthesis import FirFilter, SynthesisResult

P = 10.0


def scalar_scheme(a, b, c):
    split = SplitRealization(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)),
                             np.array([[a]]), np.array([[b]]), np.array([[c]]), (complex(a),))
    ctrl = RationalFilter(Polynomial((0.0, b * c)), Polynomial((1.0, -a)))
    return CodingScheme(ctrl, split, float(np.log2(abs(a))), 1)


def test_k_identity(ma2_scheme, ma2_synth, rng):
    th = rng.uniform(-np.pi, np.pi, 32)
    Q = ma2_synth.filter.evaluate(th)
    K = ma2_scheme.k_realization.evaluate(th)
    assert np.max(np.abs(K - Q / (1 + Q))) <= 1e-9 * max(1.0, np.max(np.abs(K)))


def test_split_matches_k(ma2_scheme, rng):
    th = rng.uniform(-np.pi, np.pi, 16)
    assert np.allclose(ma2_scheme.split.combined().evaluate(th), ma2_scheme.k_realization.evaluate(th), atol=1e-9)


def test_zero_filter_rejected():
    with pytest.raises(ZeroRateError):
        build_scheme(SynthesisResult(FirFilter(np.zeros(5)), 1.0, 1.0, 0.0))


def test_minimum_phase_filter_rejected():
    with pytest.raises(ZeroRateError):
        build_scheme(SynthesisResult(FirFilter([0.5]), 1.0, 1.0, 0.0))


def test_ma1_scheme(ma1_scheme):
    assert ma1_scheme.message_dim == 1
    assert ma1_scheme.rate_certificate == pytest.approx(1.8819, abs=5e-3)


def test_ma2_scheme(ma2_scheme):
    assert ma2_scheme.message_dim == 2
    assert ma2_scheme.k_realization.A.shape == (4, 4)
    eig = np.sort_complex(np.linalg.eigvals(ma2_scheme.split.A_u))
    assert np.allclose(eig, [-0.2057 - 1.9340j, -0.2057 + 1.9340j], atol=1e-3)
    assert ma2_scheme.rate_certificate == pytest.approx(1.9194, abs=2e-3)


def test_zero_pole_correspondence(ma1, ma2, arma3):
    for n in (ma1, ma2, arma3):
        res = synthesize(solve_dual(n, P, 8, 64))
        scheme = build_scheme(res)
        z = res.filter.sensitivity_zeros()
        outside = np.sort_complex(z[np.abs(z) > 1 + 1e-9])
        poles = np.sort_complex(np.asarray(scheme.split.unstable_eigs))
        assert outside.size == poles.size
        assert np.max(np.abs(outside - poles)) <= 1e-6


def test_rate_identity(ma1, ma2, arma3):
    for n in (ma1, ma2, arma3):
        res = synthesize(solve_dual(n, P, 12, 192))
        assert abs(build_scheme(res).rate_certificate - res.rate) <= 2e-3


def test_encoder_step_arithmetic():
    s = scalar_scheme(2.0, -0.5, 1.0)
    u, enc = encoder_step(s, encoder_init(s, [0.5]), 0.1)
    assert u == pytest.approx(0.6)
    assert enc.x_tilde[0] == pytest.approx(1.0)
    assert enc.k == 1


def test_zero_message_passes_decoder_output(ma2_scheme, rng):
    enc, dec = encoder_init(ma2_scheme, [0.0, 0.0]), decoder_init(ma2_scheme)
    for _ in range(20):
        u_hat = decoder_output(ma2_scheme, dec)
        u, enc = encoder_step(ma2_scheme, enc, u_hat)
        assert u == u_hat
        _, _, dec = decoder_step(ma2_scheme, dec, u + rng.normal())


def test_zero_output_zero_estimate(ma2_scheme):
    dec = decoder_init(ma2_scheme)
    for _ in range(30):
        _, est, dec = decoder_step(ma2_scheme, dec, 0.0)
        assert not np.any(est)


def test_sk_parameters():
    s = sk_instantiate(10.0, 1.0)
    assert s.split.A_u[0, 0] == pytest.approx(np.sqrt(11.0))
    assert s.rate_certificate == pytest.approx(0.5 * np.log2(11.0))
    t = sk_instantiate(3.0, 1.0)
    assert t.split.A_u[0, 0] == pytest.approx(2.0)
    assert t.split.C_u[0, 0] == pytest.approx(np.sqrt(3.0))
    assert t.split.B_u[0, 0] == pytest.approx(-np.sqrt(3.0) / 2)


def test_sk_recursions():
    ok, err = sk_recursion_check(50, P=1.0)
    assert ok and err <= 1e-12
    ok, err = sk_recursion_check(50, P=10.0, seed=7)
    assert ok


def test_noiseless_convergence_sk():
    s = sk_instantiate(1.0, 1.0)
    enc, dec = encoder_init(s, [0.3]), decoder_init(s)
    errs = []
    for _ in range(40):
        u, enc = encoder_step(s, enc, decoder_output(s, dec))
        _, est, dec = decoder_step(s, dec, u)
        errs.append(abs(-est[0] - 0.3))
    errs = np.array(errs)
    ratio = errs[1:20] / errs[:19]
    assert np.allclose(ratio, 1 / s.split.A_u[0, 0] ** 2, rtol=1e-6)


def test_noiseless_state_convergence(ma2_scheme):
    enc, dec = encoder_init(ma2_scheme, [0.3, -0.7]), decoder_init(ma2_scheme)
    gaps = []
    for _ in range(80):
        u, enc = encoder_step(ma2_scheme, enc, decoder_output(ma2_scheme, dec))
        _, est, dec = decoder_step(ma2_scheme, dec, u)
        gaps.append(np.linalg.norm(dec.x_u + enc.x_tilde))
    rho = ma2_scheme.closed_loop_radius()
    assert rho < 1
    assert gaps[-1] <= 1e-6 * gaps[0]
    # geometric rate no slower than the closed-loop spectral radius (up to a transient factor)
    k = np.arange(len(gaps))
    assert np.all(np.array(gaps) <= 1e3 * gaps[0] * (rho + 1e-3) ** k + 1e-14)
    assert np.allclose(-est, [0.3, -0.7], atol=1e-8)


def test_dict_round_trip(ma2_scheme, rng):
    back = CodingScheme.from_dict(ma2_scheme.to_dict())
    assert back.message_dim == 2
    assert back.rate_certificate == ma2_scheme.rate_certificate
    th = rng.uniform(-np.pi, np.pi, 8)
    assert np.allclose(back.split.combined().evaluate(th), ma2_scheme.split.combined().evaluate(th))
    assert back.noise is not None
