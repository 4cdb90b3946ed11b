import math

import numpy as np
import pytest

import martnet as mn
from martnet.autodiff import Tensor
from martnet.dual import (
    MartingaleNetConfig,
    BridgeParams,
    bridge_sup,
    estimate_sigma,
    center,
    rogers_loss,
    mart_paths,
    canonical_center,
    simulate_assets,
    loss_value,
    loss_and_grads,
    evaluate_loss,
    train,
)
from martnet.mlp import init_mlp
from martnet.qmc import draws_for
from martnet.oracles import binomial_american_put
from martnet.errors import InvalidParameterError, ShapeError

from conftest import constant_output_mlp


def constant_field_mlp(model, value):
    # the net consumes (t/T, X/x0, M/K) and its output is scaled by K,
    # so a field identically equal to `value` needs output value/K
    strike = model.payoff.strike
    return constant_output_mlp(model.N + 2, value / strike)


def test_config_validation(bsm):
    p = mn.uniform_partition(1.0, 4)
    MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=8)
    with pytest.raises(InvalidParameterError):
        MartingaleNetConfig(scheme="euler", d_M=1, partition=p, batch=8)
    with pytest.raises(InvalidParameterError):
        MartingaleNetConfig(scheme="nvnet", d_M=0, partition=p, batch=8)
    with pytest.raises(InvalidParameterError):
        MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=0)


# -- bridge ------------------------------------------------------------------


def test_bridge_u_zero_is_endpoint_max():
    bp = BridgeParams(a=3.0, b=5.0, sigma=2.0, dt=0.25)
    assert bridge_sup(bp, 0.0) == 5.0
    bp2 = BridgeParams(a=-1.0, b=-4.0, sigma=2.0, dt=0.25)
    assert bridge_sup(bp2, 0.0) == -1.0


def test_bridge_exponential_tail_value():
    bp = BridgeParams(a=0.0, b=0.0, sigma=1.0, dt=1.0)
    u = 1.0 - math.exp(-2.0)
    assert abs(bridge_sup(bp, u) - 1.0) < 1e-12


def test_bridge_monotone_in_u():
    bp = BridgeParams(a=1.0, b=2.5, sigma=3.0, dt=0.1)
    us = np.linspace(0.0, 0.999, 200)
    vals = np.array([bridge_sup(bp, u) for u in us])
    assert np.all(np.diff(vals) >= 0.0)
    assert np.all(vals >= 2.5)  # sup dominates both endpoints


def test_bridge_parameter_errors():
    with pytest.raises(InvalidParameterError):
        bridge_sup(BridgeParams(a=0.0, b=0.0, sigma=0.0, dt=0.1), 0.5)
    with pytest.raises(InvalidParameterError):
        bridge_sup(BridgeParams(a=0.0, b=0.0, sigma=1.0, dt=0.1), 1.0)


# -- sigma estimate ------------------------------------------------------------


def test_estimate_sigma_floor():
    pilot = np.tile(np.array([0.0, 1.0, 2.0, 3.0]), (10, 1))
    deltas = np.full(3, 0.25)
    est = estimate_sigma(pilot, deltas)
    np.testing.assert_array_equal(est, np.full(3, 1e-8))


def test_estimate_sigma_hand_value():
    # increments +h and -h across two paths: sample sd h*sqrt(2)
    h = 0.3
    pilot = np.array([[0.0, h], [0.0, -h]])
    deltas = np.array([0.25])
    est = estimate_sigma(pilot, deltas, k=0)
    assert abs(est - h * math.sqrt(2.0) / 0.5) < 1e-12


def test_estimate_sigma_shape_checks():
    with pytest.raises(ShapeError):
        estimate_sigma(np.zeros((1, 4)), np.full(3, 0.25))
    with pytest.raises(ShapeError):
        estimate_sigma(np.zeros((5, 3)), np.full(3, 0.25))


def test_estimate_sigma_bsm_diagnostic(bsm):
    # payoff-process volatility near the money: about 0.58 * sigma * S0
    p8 = mn.uniform_partition(1.0, 8)
    cfg = MartingaleNetConfig(scheme="resnet-em", d_M=1, partition=p8, batch=10)
    paths = simulate_assets(cfg, bsm, draws_for("em", 1, 8, 10, seed=3))
    Z = np.maximum(100.0 - paths.states[:, :, 0], 0.0)
    est = estimate_sigma(Z, p8.deltas, k=0)
    ref = 0.32 * 100.0 * math.sqrt(0.5 - 0.5 / math.pi)
    assert 0.5 * ref < est < 1.5 * ref


# -- centering ---------------------------------------------------------------


def test_center_identical_paths():
    m = np.tile(np.array([[1.0, 2.0, 3.0]]), (6, 1))
    np.testing.assert_array_equal(center(m), np.zeros((6, 3)))


def test_center_already_centred():
    m = np.array([[1.0, 1.0], [-1.0, -1.0]])
    np.testing.assert_array_equal(center(m), m)


def test_center_mean_zero():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((32, 9)) * 40.0
    out = center(m)
    assert np.max(np.abs(out.mean(axis=0))) < 1e-12


def test_center_taped():
    rng = np.random.default_rng(1)
    m = Tensor(rng.standard_normal((8, 4)), requires_grad=True)
    out = center(m)
    assert np.max(np.abs(out.data.mean(axis=0))) < 1e-12
    out.square().sum().backward()
    assert m.grad is not None


# -- rogers loss ---------------------------------------------------------------


def test_rogers_loss_endpoint_max():
    Z = np.array([[0.0, 5.0, 3.0]])
    M = np.zeros((1, 3))
    assert rogers_loss(Z, M) == 5.0


def test_rogers_loss_zero():
    assert rogers_loss(np.zeros((4, 3)), np.zeros((4, 3))) == 0.0


def test_rogers_loss_bridge_dominates():
    rng = np.random.default_rng(2)
    Z = np.abs(rng.standard_normal((64, 5))) * 10.0
    M = rng.standard_normal((64, 5))
    deltas = np.full(4, 0.25)
    sigma = np.full(4, 5.0)
    uniforms = rng.random((64, 4))
    off = rogers_loss(Z, M)
    on = rogers_loss(Z, M, bridge=True, sigma=sigma, uniforms=uniforms, deltas=deltas)
    assert on >= off - 1e-12


# -- provisional martingale paths ---------------------------------------------


def test_mart_paths_zero_nets(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=16)
    draws = draws_for("nv", 1, 4, 16, seed=4)
    assets = simulate_assets(cfg, bsm, draws)
    m = mart_paths(cfg, [init_mlp(bsm.N + 2, 1, seed=0)], bsm, assets, draws)
    np.testing.assert_array_equal(m.states, np.zeros((16, 5, 1)))


def test_mart_paths_constant_field_resnet(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="resnet-em", d_M=1, partition=p, batch=16)
    draws = draws_for("em", 1, 4, 16, seed=5)
    assets = simulate_assets(cfg, bsm, draws)
    c = 2.0
    m = mart_paths(cfg, [constant_field_mlp(bsm, c)], bsm, assets, draws)
    expected = np.zeros((16, 5))
    for k in range(4):
        expected[:, k + 1] = expected[:, k] + c * math.sqrt(0.25) * draws.eta[:, k, 0]
    np.testing.assert_allclose(m.states[:, :, 0], expected, rtol=1e-12, atol=1e-12)


def test_mart_paths_constant_field_nvnet_single_step(bsm):
    p = mn.uniform_partition(1.0, 1)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=32)
    draws = draws_for("nv", 1, 1, 32, seed=6)
    assets = simulate_assets(cfg, bsm, draws)
    c = 1.5
    m = mart_paths(cfg, [constant_field_mlp(bsm, c)], bsm, assets, draws)
    expected = c * math.sqrt(1.0) * draws.eta[:, 0, 0]
    np.testing.assert_allclose(m.states[:, 1, 0], expected, rtol=1e-10, atol=1e-10)


def test_mart_paths_shape_checks(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=16)
    draws = draws_for("nv", 1, 4, 16, seed=4)
    assets = simulate_assets(cfg, bsm, draws)
    with pytest.raises(ShapeError):
        mart_paths(cfg, [init_mlp(bsm.N + 2, 1, 0)] * 2, bsm, assets, draws)
    bad = draws_for("nv", 1, 4, 8, seed=4)
    with pytest.raises(ShapeError):
        mart_paths(cfg, [init_mlp(bsm.N + 2, 1, 0)], bsm, assets, bad)


# -- canonical centering --------------------------------------------------------


def test_canonical_center_single_draw(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="resnet-em", d_M=1, partition=p, batch=1)
    draws = draws_for("em", 1, 4, 1, seed=7)
    grid = simulate_assets(cfg, bsm, draws)
    out = canonical_center(cfg, [constant_field_mlp(bsm, 2.0)], 1, draws, grid, model=bsm)
    np.testing.assert_array_equal(out, np.zeros(5))


def test_canonical_center_zero_fields(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="resnet-em", d_M=1, partition=p, batch=64)
    draws = draws_for("em", 1, 4, 64, seed=8)
    grid = simulate_assets(cfg, bsm, draws_for("em", 1, 4, 1, seed=9))
    out = canonical_center(cfg, [init_mlp(bsm.N + 2, 1, seed=0)], 64, draws, grid, model=bsm)
    np.testing.assert_array_equal(out, np.zeros(5))


def test_canonical_center_martingale_mean(bsm):
    # one EM step with a constant field: conditional mean of the centred
    # increment is 0 within 3 standard errors of the redraw population
    c = 2.0
    p = mn.uniform_partition(1.0, 1)
    K = 10000
    cfg = MartingaleNetConfig(scheme="resnet-em", d_M=1, partition=p, batch=K)
    draws = draws_for("em", 1, 1, K, seed=10)
    grid = simulate_assets(cfg, bsm, draws_for("em", 1, 1, 1, seed=11))
    out = canonical_center(cfg, [constant_field_mlp(bsm, c)], K, draws, grid, model=bsm)
    band = 3.0 * abs(c) * math.sqrt(1.0)
    assert abs(out[1]) < band


# -- loss plumbing ---------------------------------------------------------------


def test_initial_loss_band(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=512)
    mlps = [init_mlp(bsm.N + 2, 1, seed=0)]
    rng = np.random.default_rng(5)
    for bridge in (False, True):
        uniforms = rng.random((512, 4)) if bridge else None
        val = loss_value(
            cfg, mlps, bsm, draws_for("nv", 1, 4, 512, seed=0),
            bridge=bridge, uniforms=uniforms,
        )
        assert 12.0 <= val <= 30.0


def test_duality_direction(bsm):
    # any candidate martingale keeps the sampled dual value above price - 0.5
    tree = binomial_american_put(100.0, 100.0, 0.32, 1.0, 0.0)
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=512)
    mlps = [init_mlp(bsm.N + 2, 1, seed=0)]
    result = train(cfg, mlps, 20, bsm, seed=0, bridge=True)
    val = evaluate_loss(cfg, result.mlps, bsm, batch=5000, seed=123, bridge=True)
    assert val >= tree - 0.5


def test_loss_and_grads_nonzero(bsm):
    p = mn.uniform_partition(1.0, 2)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=64)
    mlps = [init_mlp(bsm.N + 2, 1, seed=1)]
    val, grads = loss_and_grads(
        cfg, mlps, bsm, draws_for("nv", 1, 2, 64, seed=2),
        uniforms=np.random.default_rng(6).random((64, 2)),
    )
    assert np.isfinite(val)
    total = sum(float(np.abs(g).sum()) for gl in grads for g in gl)
    assert total > 0.0


def test_train_smoke_and_residuals(bsm):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=128)
    mlps = [init_mlp(bsm.N + 2, 1, seed=0)]
    result = train(cfg, mlps, 10, bsm, seed=0, bridge=True)
    assert result.losses.shape == (10,)
    assert np.all(np.isfinite(result.losses))
    assert np.all(result.centering_residuals < 1e-12)
    assert result.losses[-1] < result.losses[0]  # learning moves the loss


def test_train_reproducible(bsm):
    p = mn.uniform_partition(1.0, 2)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=64)
    a = train(cfg, [init_mlp(bsm.N + 2, 1, seed=3)], 5, bsm, seed=4, bridge=True)
    b = train(cfg, [init_mlp(bsm.N + 2, 1, seed=3)], 5, bsm, seed=4, bridge=True)
    np.testing.assert_array_equal(a.losses, b.losses)


def test_train_heston_smoke(heston):
    p = mn.uniform_partition(1.0, 4)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=2, partition=p, batch=64)
    mlps = [init_mlp(heston.N + 2, 1, seed=j) for j in range(2)]
    result = train(cfg, mlps, 5, heston, seed=0, bridge=True)
    assert np.all(np.isfinite(result.losses))


def test_checkpoints_written(bsm, tmp_path):
    p = mn.uniform_partition(1.0, 2)
    cfg = MartingaleNetConfig(scheme="nvnet", d_M=1, partition=p, batch=32)
    train(cfg, [init_mlp(bsm.N + 2, 1, seed=0)], 3, bsm, seed=0, out_dir=tmp_path, checkpoint_every=2)
    assert (tmp_path / "iter00002.ckpt").exists()
