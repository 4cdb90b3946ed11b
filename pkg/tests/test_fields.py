import numpy as np
import pytest

import martnet as mn
from martnet.fields import (
    VectorField,
    ModelSpec,
    Payoff,
    payoff_eval,
    ito_drift,
    clamp_events,
    reset_clamp_events,
)
from martnet.errors import InvalidParameterError


def test_bsm_drift_field(bsm):
    v0 = bsm.stratonovich_fields[0]
    out = v0.eval(0.0, np.array([100.0]))
    np.testing.assert_allclose(out, [-5.12], rtol=1e-14)


def test_bsm_diffusion_field(bsm):
    v1 = bsm.stratonovich_fields[1]
    out = v1.eval(0.0, np.array([100.0]))
    np.testing.assert_allclose(out, [32.0], rtol=1e-14)


def test_bsm_drift_cancellation():
    m = mn.make_bsm_model(100.0, 0.32**2 / 2.0, 0.32)
    out = m.stratonovich_fields[0].eval(0.0, np.array([77.0]))
    np.testing.assert_allclose(out, [0.0], atol=1e-12)


def test_heston_drift_field(heston):
    v0 = heston.stratonovich_fields[0]
    out = v0.eval(0.0, np.array([100.0, 0.32]))
    np.testing.assert_allclose(out, [-19.0, -0.25], rtol=1e-12)


def test_heston_second_diffusion_first_component(heston):
    v2 = heston.stratonovich_fields[2]
    for y in ([100.0, 0.32], [55.0, 0.9], [210.0, 0.01]):
        assert v2.eval(0.0, np.array(y))[0] == 0.0


def test_heston_rho_zero():
    m = mn.make_heston_model(100.0, 0.32, 0.0, 0.25, 3.0, 0.0, 0.4)
    v1 = m.stratonovich_fields[1]
    assert v1.eval(0.0, np.array([100.0, 0.32]))[1] == 0.0


def test_model_shapes(bsm, heston):
    assert (bsm.N, bsm.d) == (1, 1) and len(bsm.stratonovich_fields) == 2
    assert (heston.N, heston.d) == (2, 2) and len(heston.stratonovich_fields) == 3


def test_parameter_validation():
    with pytest.raises(InvalidParameterError):
        mn.make_bsm_model(100.0, 0.0, -0.1)
    with pytest.raises(InvalidParameterError):
        mn.make_bsm_model(-5.0, 0.0, 0.32)
    with pytest.raises(InvalidParameterError):
        mn.make_heston_model(100.0, 0.32, 0.0, 0.25, 3.0, 1.0, 0.4)
    with pytest.raises(InvalidParameterError):
        mn.make_heston_model(100.0, -0.1, 0.0, 0.25, 3.0, 0.3, 0.4)


def test_ito_drift_bsm_analytic():
    m = mn.make_bsm_model(100.0, 0.07, 0.32)
    drift = ito_drift(m)
    for y in (1.0, 50.0, 100.0, 333.0):
        out = drift.eval(0.0, np.array([y]))
        assert abs(out[0] / (0.07 * y) - 1.0) < 1e-10


def test_ito_drift_bsm_jacobian_composition():
    # same model without the hand-derived drift: generic Jacobian route
    mu, sigma = 0.07, 0.32
    v0 = VectorField(lambda t, x: (mu - 0.5 * sigma**2) * x, jac_fn=lambda t, x: np.full(np.shape(x) + (1,), mu - 0.5 * sigma**2))
    v1 = VectorField(lambda t, x: sigma * x, jac_fn=lambda t, x: np.full(np.shape(x) + (1,), sigma))
    m = ModelSpec(N=1, d=1, stratonovich_fields=(v0, v1), x0=np.array([100.0]), payoff=Payoff(100.0))
    drift = ito_drift(m)
    out = drift.eval(0.0, np.array([123.0]))
    assert abs(out[0] / (mu * 123.0) - 1.0) < 1e-10


def test_ito_drift_bsm_autodiff_jacobian():
    # diffusion without analytic Jacobian: reverse-mode fallback
    mu, sigma = 0.07, 0.32
    v0 = VectorField(lambda t, x: (mu - 0.5 * sigma**2) * x)
    v1 = VectorField(lambda t, x: sigma * x)
    m = ModelSpec(N=1, d=1, stratonovich_fields=(v0, v1), x0=np.array([100.0]), payoff=Payoff(100.0))
    out = ito_drift(m).eval(0.0, np.array([123.0]))
    assert abs(out[0] / (mu * 123.0) - 1.0) < 1e-6


def test_ito_drift_heston_second_component(heston):
    out = ito_drift(heston).eval(0.0, np.array([100.0, 0.32]))
    np.testing.assert_allclose(out[1], 3.0 * (0.25 - 0.32), rtol=1e-12)


def test_ito_drift_constant_diffusion():
    v0 = VectorField(lambda t, x: 2.0 * x, jac_fn=lambda t, x: np.full(np.shape(x) + (1,), 2.0))
    c = VectorField(lambda t, x: np.full_like(np.asarray(x, dtype=np.float64), 1.7), jac_fn=lambda t, x: np.zeros(np.shape(x) + (1,)))
    m = ModelSpec(N=1, d=1, stratonovich_fields=(v0, c), x0=np.array([1.0]), payoff=Payoff(100.0))
    y = np.array([4.2])
    np.testing.assert_allclose(ito_drift(m).eval(0.0, y), v0.eval(0.0, y), rtol=1e-14)


def test_payoff_values():
    p = Payoff(100.0)
    assert payoff_eval(p, np.array([80.0])) == 20.0
    assert payoff_eval(p, np.array([100.0])) == 0.0
    assert payoff_eval(p, np.array([130.0])) == 0.0
    # batch form takes the first coordinate
    z = payoff_eval(p, np.array([[90.0, 0.3], [110.0, 0.2]]))
    np.testing.assert_array_equal(z, [10.0, 0.0])


def test_field_purity(heston):
    v1 = heston.stratonovich_fields[1]
    x = np.array([[100.0, 0.32], [80.0, 0.5]])
    a = v1.eval(0.0, x)
    b = v1.eval(0.0, x)
    np.testing.assert_array_equal(a, b)


def test_variance_clamp_counter(heston):
    reset_clamp_events()
    v1 = heston.stratonovich_fields[1]
    out = v1.eval(0.0, np.array([100.0, -0.05]))
    # clamped sqrt keeps the evaluation finite and counts the event
    assert np.all(np.isfinite(out))
    assert clamp_events() >= 1
    reset_clamp_events()
    assert clamp_events() == 0
