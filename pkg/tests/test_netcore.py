import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ntklab.netcore import (
    NetworkSpec,
    activate,
    activate_grad,
    activate_hess,
    forward,
    forward_and_jacobian,
    init_params,
    jacobian_directional,
    linearized_forward,
    mixed_jacobian,
    param_jacobian,
    value_and_grad,
)
from oracles import fd_gradient, loop_forward, max_rel_err

specs = st.builds(
    NetworkSpec,
    input_dim=st.integers(1, 5),
    hidden_widths=st.lists(st.integers(1, 5), max_size=3).map(tuple),
    activation=st.sampled_from(["relu", "gelu", "tanh"]),
    bias=st.booleans(),
)


@given(specs)
def test_param_count_formula(spec):
    sizes = [spec.input_dim, *spec.hidden_widths, 1]
    expected = sum(a * b + (b if spec.bias else 0) for a, b in zip(sizes[:-1], sizes[1:]))
    assert spec.n_params == expected == init_params(spec, 0).size


@given(specs, st.integers(0, 2**31))
def test_flatten_unflatten_roundtrip(spec, seed):
    v = np.random.default_rng(seed).standard_normal(spec.n_params)
    assert np.array_equal(spec.flatten(spec.unflatten(v)), v)


@given(specs, st.integers(0, 2**20))
def test_locate_covers_every_index_once(spec, seed):
    seen = {spec.locate(k) for k in range(spec.n_params)}
    assert len(seen) == spec.n_params


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec(0)
    with pytest.raises(ValueError):
        NetworkSpec(3, (2,), "sigmoid")
    with pytest.raises(ValueError):
        NetworkSpec(2, input_scale=(1.0,))


@pytest.mark.parametrize("kind", ["gelu", "tanh", "relu"])
def test_activation_derivatives_match_finite_differences(kind):
    z = np.linspace(-3, 3, 61)
    z = z[np.abs(z) > 1e-3]  # away from the relu kink
    h = 1e-5
    fd1 = (activate(kind, z + h) - activate(kind, z - h)) / (2 * h)
    fd2 = (activate_grad(kind, z + h) - activate_grad(kind, z - h)) / (2 * h)
    assert max_rel_err(activate_grad(kind, z), fd1) < 1e-6
    if kind != "relu":
        assert max_rel_err(activate_hess(kind, z), fd2) < 1e-6


def test_relu_derivative_at_zero_is_zero():
    assert activate_grad("relu", np.array([0.0]))[0] == 0.0


def test_init_deterministic_and_counts():
    spec = NetworkSpec(6, (5, 4), "gelu")
    assert np.array_equal(init_params(spec, 7), init_params(spec, 7))
    assert init_params(NetworkSpec(4), 3).size == 5


def test_init_first_layer_variance():
    spec = NetworkSpec(64, (32,), "relu")
    W = spec.unflatten(init_params(spec, 0))[0][0]
    assert W.size == 2048
    assert abs(W.var() / (2 / 64) - 1) < 0.2
    assert np.all(spec.unflatten(init_params(spec, 0))[0][1] == 0)


def test_forward_examples():
    assert forward(NetworkSpec(2), np.array([1.0, 2.0, 0.0]), np.array([3.0, 4.0])) == 11.0
    spec = NetworkSpec(2, (1,), "tanh")
    # layout: W1 (1x2), b1, W2 (1x1), b2
    params = np.array([1.0, 0.0, 0.0, 2.0, 0.0])
    assert forward(spec, params, np.array([0.5, 9.0])) == pytest.approx(0.924234, abs=1e-6)
    relu = NetworkSpec(4, (3, 3), "relu")
    assert forward(relu, np.zeros(relu.n_params), np.ones(4)) == 0.0


@given(specs, st.integers(0, 1000))
def test_forward_matches_loop_oracle(spec, seed):
    params = init_params(spec, seed) + 0.1 * np.random.default_rng(seed).standard_normal(spec.n_params)
    X = np.random.default_rng(seed + 1).standard_normal((3, spec.input_dim))
    batch = forward(spec, params, X)
    for i in range(3):
        assert batch[i] == pytest.approx(loop_forward(spec, params, X[i]), rel=1e-12, abs=1e-12)


def test_forward_dimension_mismatch():
    spec = NetworkSpec(3, (2,), "tanh")
    with pytest.raises(ValueError):
        forward(spec, init_params(spec, 0), np.ones(4))
    with pytest.raises(ValueError):
        forward(spec, np.ones(3), np.ones(3))


def test_linear_jacobian_examples():
    spec = NetworkSpec(2)
    assert np.array_equal(param_jacobian(spec, np.array([5.0, -1.0, 2.0]), np.array([3.0, 4.0])), [3.0, 4.0, 1.0])
    M = mixed_jacobian(spec, np.array([5.0, -1.0, 2.0]), np.array([3.0, 4.0]))
    assert np.array_equal(M, np.vstack([np.eye(2), np.zeros((1, 2))]))


def test_zero_params_jacobians():
    spec = NetworkSpec(3, (4,), "tanh")
    J = param_jacobian(spec, np.zeros(spec.n_params), np.array([0.3, -1.0, 2.0]))
    expected = np.zeros(spec.n_params)
    expected[-1] = 1.0
    assert np.array_equal(J, expected)
    assert np.all(mixed_jacobian(spec, np.zeros(spec.n_params), np.array([0.3, -1.0, 2.0])) == 0)


@pytest.mark.parametrize("activation", ["tanh", "gelu"])
def test_param_jacobian_finite_differences(activation, rng):
    spec = NetworkSpec(3, (4, 3), activation)
    params = rng.standard_normal(spec.n_params)
    x = rng.standard_normal(3)
    fd = fd_gradient(lambda t: forward(spec, t, x), params)
    assert max_rel_err(param_jacobian(spec, params, x), fd) <= 1e-5


@pytest.mark.parametrize("activation", ["tanh", "gelu"])
def test_mixed_jacobian_finite_differences(activation, rng):
    spec = NetworkSpec(3, (4,), activation)
    params = rng.standard_normal(spec.n_params)
    x = rng.standard_normal(3)
    h = 1e-5
    fd = np.column_stack([
        (param_jacobian(spec, params, x + h * e) - param_jacobian(spec, params, x - h * e)) / (2 * h)
        for e in np.eye(3)
    ])
    assert max_rel_err(mixed_jacobian(spec, params, x), fd) <= 1e-4


def test_directional_matches_mixed(small_gelu, rng):
    spec, params = small_gelu
    X = rng.standard_normal((4, spec.input_dim))
    D = rng.standard_normal((2, spec.input_dim))
    out = jacobian_directional(spec, params, X, D)
    for i in range(4):
        M = mixed_jacobian(spec, params, X[i])
        assert np.allclose(out[i], (M @ D.T).T, rtol=1e-12, atol=1e-12)


def test_input_scale_is_applied():
    spec = NetworkSpec(3, (), "relu", False, (3.0, 2.0, 1.0))
    params = np.array([1.0, 1.0, 1.0])
    assert forward(spec, params, np.array([1.0, 1.0, 1.0])) == 6.0
    assert np.array_equal(mixed_jacobian(spec, params, np.zeros(3)), np.diag([3.0, 2.0, 1.0]))


def test_linearized_forward_examples(small_tanh, rng):
    spec, ref = small_tanh
    x = rng.standard_normal(3)
    assert linearized_forward(spec, ref, ref, x, True) == forward(spec, ref, x)
    assert linearized_forward(spec, ref, ref, x, False) == 0.0
    theta = ref + 0.01 * rng.standard_normal(spec.n_params)
    expected = forward(spec, ref, x) + (theta - ref) @ param_jacobian(spec, ref, x)
    assert linearized_forward(spec, ref, theta, x, True) == pytest.approx(expected, rel=1e-12)


@given(st.integers(0, 10_000))
def test_linearization_of_linear_model_is_exact(seed):
    rng = np.random.default_rng(seed)
    spec = NetworkSpec(4)
    ref, theta = rng.standard_normal(5), rng.standard_normal(5)
    X = rng.standard_normal((6, 4))
    assert np.allclose(linearized_forward(spec, ref, theta, X, True), forward(spec, theta, X), rtol=0, atol=1e-12)


def test_value_and_grad_matches_jacobian(small_gelu, rng):
    spec, params = small_gelu
    X = rng.standard_normal((7, spec.input_dim))
    w = rng.standard_normal(7)
    val, grad = value_and_grad(spec, params, X, lambda out: (float(w @ out), w))
    out, J = forward_and_jacobian(spec, params, X)
    assert val == pytest.approx(w @ out)
    assert np.allclose(grad, J.T @ w, rtol=1e-12, atol=1e-14)
