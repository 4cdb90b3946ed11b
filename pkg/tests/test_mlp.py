import numpy as np
import pytest

import martnet as mn
from martnet.autodiff import Tensor
from martnet.fields import ModelSpec, Payoff, VectorField
from martnet.mlp import (
    MlpParams,
    init_mlp,
    mlp_forward,
    mlp_forward_t,
    params_to_tensors,
    param_arrays,
    tensor_arrays,
    rebuild_params,
    grad,
    init_adam,
    adam_update,
    save_checkpoint,
    load_checkpoint,
    MlpField,
    DEPTH,
    HIDDEN,
)
from martnet import schemes as sch
from martnet.errors import ShapeError


def test_architecture_dimensions():
    p = init_mlp(4, 2, seed=0)
    assert len(p.layers) == DEPTH
    assert p.layers[0][0].shape == (4, HIDDEN)
    for w, b in p.layers[1:]:
        assert w.shape == (HIDDEN, HIDDEN) and b.shape == (HIDDEN,)
    assert p.proj.shape == (HIDDEN, 2)
    assert (p.in_dim, p.out_dim) == (4, 2)


def test_fresh_net_outputs_zero():
    p = init_mlp(3, 1, seed=1)
    x = np.random.default_rng(0).standard_normal((10, 3))
    np.testing.assert_array_equal(mlp_forward(p, x), np.zeros((10, 1)))


def test_zero_weights_zero_biases():
    p = init_mlp(2, 1, seed=0)
    for w, b in p.layers:
        w[:] = 0.0
        b[:] = 0.0
    p.proj[:] = 1.0
    np.testing.assert_array_equal(mlp_forward(p, np.array([5.0, -3.0])), [0.0])


def test_identity_like_relu():
    layers = [(np.array([[1.0]]), np.zeros(1))]
    p = MlpParams(layers=layers, proj=np.array([[1.0]]))
    assert mlp_forward(p, np.array([-3.0]))[0] == 0.0
    assert mlp_forward(p, np.array([2.0]))[0] == 2.0


def test_positive_homogeneity():
    p = init_mlp(3, 1, seed=4)
    p.proj[:] = np.random.default_rng(4).standard_normal(p.proj.shape)
    x = np.random.default_rng(5).standard_normal((6, 3))
    a = mlp_forward(p, 3.0 * x)
    b = 3.0 * mlp_forward(p, x)
    np.testing.assert_allclose(a, b, rtol=1e-12)  # zero biases: ReLU cone


def test_forward_dimension_check():
    p = init_mlp(3, 1, seed=0)
    with pytest.raises(ShapeError):
        mlp_forward(p, np.ones((2, 4)))


def test_taped_forward_matches_plain():
    p = init_mlp(3, 2, seed=6)
    p.proj[:] = np.random.default_rng(6).standard_normal(p.proj.shape) * 0.1
    x = np.random.default_rng(7).standard_normal((5, 3))
    t_out = mlp_forward_t(params_to_tensors(p), Tensor(x))
    np.testing.assert_allclose(t_out.data, mlp_forward(p, x), rtol=1e-13)


def test_grad_quadratic():
    p = init_mlp(2, 1, seed=8)

    def loss_fn(tensors):
        total = None
        for ts in tensors:
            for arr in tensor_arrays(ts):
                term = arr.square().sum()
                total = term if total is None else total + term
        return total * 0.5

    val, grads = grad(loss_fn, [p])
    for got, want in zip(grads[0], param_arrays(p)):
        np.testing.assert_allclose(got, want, rtol=1e-12)


def test_grad_full_pipeline_finite_difference():
    # one flow-reversal step driven by a network-backed field
    params = init_mlp(1, 1, seed=9)
    rng = np.random.default_rng(10)
    params.proj[:] = rng.standard_normal(params.proj.shape) * 0.1
    x = np.abs(rng.standard_normal((8, 1))) + 1.0
    eta = rng.standard_normal((8, 1))
    zero = VectorField(lambda t, z: z * 0.0)

    def pipeline(p):
        field = MlpField(p)
        model = ModelSpec(
            N=1, d=1, stratonovich_fields=(zero, field), x0=np.array([1.0]), payoff=Payoff(100.0)
        )
        out = sch.nv_step(model, Tensor(x), 0.25, eta, 1)
        return out.mean(), field

    loss, field = pipeline(params)
    loss.backward()
    grads = [a.grad if a.grad is not None else np.zeros_like(a.data) for a in tensor_arrays(field.tensors)]
    arrs = param_arrays(params)
    rng2 = np.random.default_rng(11)
    h = 1e-5
    for _ in range(20):
        ai = int(rng2.integers(0, len(arrs)))
        idx = tuple(int(rng2.integers(0, s)) for s in arrs[ai].shape)

        def value(delta):
            shifted = [a.copy() for a in arrs]
            shifted[ai][idx] += delta
            l2, _ = pipeline(rebuild_params(params, shifted))
            return float(l2.data)

        fd = (value(h) - value(-h)) / (2 * h)
        an = grads[ai][idx]
        assert abs(fd - an) <= 1e-4 * max(1.0, abs(fd)), f"arr {ai} idx {idx}: fd {fd} vs {an}"


def test_adam_first_step():
    theta = [np.zeros(1)]
    state = init_adam(theta)
    state, theta = adam_update(state, theta, [np.ones(1)])
    assert state.t == 1
    np.testing.assert_allclose(theta[0], [-0.001 / (1.0 + 1e-7)], rtol=1e-12)


def test_adam_zero_gradient():
    theta = [np.array([1.5, -2.0])]
    state = init_adam(theta)
    state, out = adam_update(state, theta, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], [1.5, -2.0])


def test_adam_constant_gradient_step_size():
    theta = [np.zeros(1)]
    state = init_adam(theta, alpha=0.001)
    for _ in range(500):
        prev = theta[0].copy()
        state, theta = adam_update(state, theta, [np.full(1, 3.0)])
    step = abs(theta[0][0] - prev[0])
    assert abs(step - 0.001) < 1e-4  # |update| approaches alpha, sign -sgn(g)
    assert theta[0][0] < 0.0


def test_adam_quadratic_convergence():
    theta = [np.zeros(1)]
    state = init_adam(theta, alpha=0.001)
    for _ in range(6000):
        g = theta[0] - 3.0
        state, theta = adam_update(state, theta, [g])
    assert abs(theta[0][0] - 3.0) < 0.1


def test_checkpoint_roundtrip(tmp_path):
    nets = [init_mlp(4, 1, seed=12), init_mlp(4, 1, seed=13)]
    for n in nets:
        n.proj[:] = np.random.default_rng(n.seed).standard_normal(n.proj.shape)
    path = tmp_path / "nets.ckpt"
    save_checkpoint(path, nets)
    loaded = load_checkpoint(path)
    assert len(loaded) == 2
    for a, b in zip(nets, loaded):
        assert a.seed == b.seed
        np.testing.assert_array_equal(a.proj, b.proj)
        for (w1, b1), (w2, b2) in zip(a.layers, b.layers):
            np.testing.assert_array_equal(w1, w2)
            np.testing.assert_array_equal(b1, b2)
        x = np.random.default_rng(1).standard_normal((3, 4))
        np.testing.assert_array_equal(mlp_forward(a, x), mlp_forward(b, x))
