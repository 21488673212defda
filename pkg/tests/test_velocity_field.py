import math

import numpy as np
import pytest

from chaostracer.spectrum_core import ParameterError, SpectrumParams, spectral_mass
from chaostracer.velocity_field import (FieldBatch, covariance_R, evaluate_field,
                                        evaluate_field_exact, make_sampler, radial_covariance_trace,
                                        taylor_kubo)

P = SpectrumParams()


@pytest.mark.parametrize("variant", ["V", "V_T", "X", "Z", "Xtilde"])
def test_factorized_matches_double_sum(variant):
    s = make_sampler(P, 16, variant, T=4.0, seed=1)
    x = np.array([0.3, -0.7])
    assert np.allclose(evaluate_field(s, 0.0, x), evaluate_field_exact(s, 0.0, x),
                       rtol=1e-11, atol=1e-12)


def test_sampler_time_mismatch():
    s = make_sampler(P, 8, "V", seed=0)
    with pytest.raises(ParameterError):
        evaluate_field(s, 1.0, np.zeros(2))


@pytest.mark.parametrize("d", [2, 3])
def test_divergence_free(d):
    q = SpectrumParams(d=d)
    s = make_sampler(q, 32, "V", seed=2)
    x = np.full(d, 0.4)
    eps = 1e-5
    div = 0.0
    scale = np.abs(evaluate_field(s, 0.0, x)).max()
    for i in range(d):
        e = np.zeros(d)
        e[i] = eps
        div += (evaluate_field(s, 0.0, x + e)[i] - evaluate_field(s, 0.0, x - e)[i]) / (2 * eps)
    assert abs(div) < 1e-6 * max(scale, 1.0)


def test_Z_equals_X_plus_Xtilde_shared_seed():
    xs = [make_sampler(P, 24, v, seed=4) for v in ("X", "Xtilde", "Z")]
    X, Xt, Z = (evaluate_field(s, 0.0, None) for s in xs)
    assert np.allclose(Z, X + Xt, rtol=1e-12, atol=1e-12)


def test_batch_offset_consistency():
    a = FieldBatch(P, "V", 16, 120, seed=3)
    b = FieldBatch(P, "V", 16, 70, seed=3, offset=50)
    x = np.array([0.2, 0.1])
    a.step(0.3)
    b.step(0.3)
    assert np.array_equal(a.velocity(x)[50:], b.velocity(x))


def test_covariance_trace_at_origin_is_exact():
    # tr Gamma = d - 1 for every k + k' != 0, so tr R(0,0) = 2 (d-1) M^2
    R = covariance_R(P, 0.0, np.zeros(2), budget=2 ** 12, seed=1)
    assert np.trace(R.value) == pytest.approx(2 * spectral_mass(P) ** 2, rel=1e-10)
    assert np.allclose(R.value, R.value.T)


def test_covariance_decays_in_time():
    r0 = radial_covariance_trace(P, 0.0)
    r1 = radial_covariance_trace(P, 1.0)
    assert r0 == pytest.approx(2 * spectral_mass(P) ** 2, rel=1e-6)
    assert 0 < r1 < r0


def test_covariance_trace_in_time_matches_radial_oracle():
    R = covariance_R(P, 1.0, np.zeros(2), budget=2 ** 14, seed=2)
    err = math.hypot(R.stderr[0, 0], R.stderr[1, 1])
    assert abs(np.trace(R.value) - radial_covariance_trace(P, 1.0)) < 4 * err


def test_covariance_budget_validation():
    with pytest.raises(ParameterError):
        covariance_R(P, 0.0, np.zeros(2), budget=10)


def test_taylor_kubo_requires_levels():
    with pytest.raises(ParameterError):
        taylor_kubo(P, refinement_levels=1)


def test_taylor_kubo_finite_value_is_stable():
    q = SpectrumParams(alpha=0.4, beta=0.4)
    a = taylor_kubo(q, refinement_levels=4)
    b = taylor_kubo(q, refinement_levels=5)
    assert a.verdict == b.verdict == "finite"
    assert np.trace(a.value) == pytest.approx(np.trace(b.value), rel=1e-2)
