import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _fdcheck import assert_grad_close, central_diff
from priorcvae.neural import (
    AdamState,
    MlpParams,
    ModelFileError,
    adam_step,
    init_params,
    load_params,
    mlp_backward,
    mlp_forward,
    save_params,
)


def _random_net(rng, depth=None, max_width=16, final=None):
    depth = depth or int(rng.integers(1, 4))
    sizes = [int(s) for s in rng.integers(1, max_width + 1, size=depth + 1)]
    acts = [str(a) for a in rng.choice(["leaky_relu", "sigmoid", "identity"], size=depth)]
    if final:
        acts[-1] = final
    params = init_params(sizes, acts, int(rng.integers(0, 2**31)))
    for b in params.biases:
        b[:] = rng.normal(scale=0.3, size=b.shape)
    return params


# ---------------------------------------------------------------- forward


def test_zero_weights_give_bias():
    p = MlpParams([np.zeros((3, 4))], [np.array([1.0, -2.0, 0.5])], ["identity"])
    np.testing.assert_array_equal(mlp_forward(p, np.arange(4.0)), [1.0, -2.0, 0.5])


def test_leaky_relu_definition():
    p = MlpParams([np.eye(2)], [np.zeros(2)], ["leaky_relu"], negative_slope=0.01)
    np.testing.assert_allclose(mlp_forward(p, [-1.0, 2.0]), [-0.01, 2.0], rtol=1e-15)


def test_sigmoid_range():
    rng = np.random.default_rng(0)
    p = _random_net(rng, depth=2, final="sigmoid")
    out = mlp_forward(p, rng.normal(scale=50, size=(200, p.n_in)))
    assert np.all((out >= 0) & (out <= 1))


def test_batched_forward_matches_rows_and_is_deterministic():
    rng = np.random.default_rng(1)
    p = _random_net(rng, depth=3)
    x = rng.normal(size=(7, p.n_in))
    batch = mlp_forward(p, x)
    np.testing.assert_array_equal(batch, mlp_forward(p, x))
    for i in range(7):
        np.testing.assert_allclose(batch[i], mlp_forward(p, x[i]), rtol=1e-13)


def test_input_width_checked():
    p = init_params([3, 2], "identity", 0)
    with pytest.raises(ValueError):
        mlp_forward(p, np.zeros(4))


@pytest.mark.parametrize(
    "weights,biases,acts",
    [
        ([np.zeros((2, 3))], [np.zeros(3)], ["identity"]),
        ([np.zeros((2, 3)), np.zeros((1, 4))], [np.zeros(2), np.zeros(1)], ["identity", "identity"]),
        ([np.zeros((2, 3))], [np.zeros(2)], ["tanh"]),
        ([np.full((2, 3), np.nan)], [np.zeros(2)], ["identity"]),
        ([], [], []),
    ],
)
def test_malformed_params_rejected(weights, biases, acts):
    with pytest.raises(ValueError):
        MlpParams(weights, biases, acts)


# ---------------------------------------------------------------- backward


def test_linear_adjoint():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(3, 5))
    p = MlpParams([W], [np.zeros(3)], ["identity"])
    cot = rng.normal(size=3)
    _, gx = mlp_backward(p, rng.normal(size=5), cot)
    np.testing.assert_allclose(gx, W.T @ cot, rtol=1e-14)


def test_zero_cotangent():
    rng = np.random.default_rng(3)
    p = _random_net(rng, depth=2)
    grads, gx = mlp_backward(p, rng.normal(size=p.n_in), np.zeros(p.n_out))
    assert all(np.all(g == 0) for g in grads) and np.all(gx == 0)


def test_cotangent_shape_checked():
    p = init_params([3, 2], "identity", 0)
    with pytest.raises(ValueError):
        mlp_backward(p, np.zeros(3), np.zeros(3))


def _check_net_gradients(rng, batch):
    p = _random_net(rng)
    shape = (batch, p.n_in) if batch else (p.n_in,)
    x = rng.normal(size=shape)
    cot = rng.normal(size=shape[:-1] + (p.n_out,))
    grads, gx = mlp_backward(p, x, cot)

    def objective():
        return float(np.sum(mlp_forward(p, x) * cot))

    for arr, g in zip(p.arrays(), grads):
        def f(v, arr=arr):
            saved = arr.copy()
            arr[...] = v
            out = objective()
            arr[...] = saved
            return out

        assert_grad_close(g, central_diff(f, arr), what="parameter gradient")
    assert_grad_close(gx, central_diff(lambda v: float(np.sum(mlp_forward(p, v) * cot)), x), what="input gradient")


@pytest.mark.parametrize("trial", range(50))
def test_gradients_match_finite_differences(trial):
    rng = np.random.default_rng(1000 + trial)
    _check_net_gradients(rng, batch=int(rng.integers(0, 4)))


# ---------------------------------------------------------------- adam


def test_first_adam_step_is_signed_lr():
    w = [np.array([1.0, -1.0, 2.0])]
    g = [np.array([3.0, -0.5, 1e-3])]
    state = AdamState.zeros_like(w, lr=0.01)
    adam_step(w, g, state)
    np.testing.assert_allclose(w[0], [0.99, -0.99, 1.99], rtol=1e-6)


def test_zero_gradient_keeps_params():
    w = [np.array([0.3, -0.7])]
    state = AdamState.zeros_like(w)
    for _ in range(100):
        adam_step(w, [np.zeros(2)], state)
    np.testing.assert_array_equal(w[0], [0.3, -0.7])


def test_adam_minimises_quadratic():
    w = [np.array([1.0])]
    state = AdamState.zeros_like(w, lr=1e-2)
    for _ in range(2000):
        adam_step(w, [2 * w[0]], state)
    assert abs(w[0][0]) < 1e-3


def test_adam_alignment_checked():
    w = [np.zeros(2)]
    with pytest.raises(ValueError):
        adam_step(w, [np.zeros(2), np.zeros(2)], AdamState.zeros_like(w))


# ---------------------------------------------------------------- init


def test_init_repeatable_with_zero_biases():
    a = init_params([5, 4, 3], ["leaky_relu", "identity"], 9)
    b = init_params([5, 4, 3], ["leaky_relu", "identity"], 9)
    for x, y in zip(a.arrays(), b.arrays()):
        np.testing.assert_array_equal(x, y)
    assert all(np.all(bias == 0) for bias in a.biases)


def test_he_variance():
    p = init_params([1000, 1000], "leaky_relu", 4)
    var = p.weights[0].var()
    assert abs(var / (2 / 1000) - 1) < 0.2


def test_init_validation():
    with pytest.raises(ValueError):
        init_params([3], "identity", 0)
    with pytest.raises(ValueError):
        init_params([3, 4, 5], ["identity"], 0)


# ---------------------------------------------------------------- persistence


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    p = _random_net(rng)
    path = tmp_path_factory.mktemp("net") / "p.json"
    save_params(p, path)
    q = load_params(path)
    assert q.activations == p.activations and q.negative_slope == p.negative_slope
    for x, y in zip(p.arrays(), q.arrays()):
        np.testing.assert_array_equal(x, y)


def test_empty_and_truncated_files(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    with pytest.raises(ModelFileError, match="empty"):
        load_params(empty)
    good = tmp_path / "good.json"
    save_params(init_params([3, 2], "identity", 0), good)
    cut = tmp_path / "cut.json"
    cut.write_text(good.read_text()[:40])
    with pytest.raises(ModelFileError, match="malformed"):
        load_params(cut)


def test_inconsistent_layer_sizes(tmp_path):
    doc = json.loads(json.dumps({"format_version": 1, **init_params([3, 2], "identity", 0).to_dict()}))
    doc["layer_sizes"] = [3, 5]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError):
        load_params(path)
    del doc["weights"]
    path.write_text(json.dumps(doc))
    with pytest.raises(ModelFileError):
        load_params(path)
