import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import FD_STEP, gradient_check, rel_error
from onsetlab.errors import ContractViolation, UsageError
from onsetlab.nn_core import (AdamState, LayerSpec, Network, adam_step, conv2d_forward,
                              init_weights, layer_forward, maxpool2d_forward, output_shape,
                              pipeline_param_shapes, sigmoid, weighted_bce)

L = LayerSpec


def conv_oracle(x, kernel, bias, padding):
    """Direct nested-loop cross-correlation."""
    c, h, w = x.shape
    f, _, kh, kw = kernel.shape
    if padding == "same":
        pt, pl = (kh - 1) // 2, (kw - 1) // 2
        xp = np.zeros((c, h + kh - 1, w + kw - 1))
        xp[:, pt:pt + h, pl:pl + w] = x
    else:
        xp = x
    ho, wo = xp.shape[1] - kh + 1, xp.shape[2] - kw + 1
    out = np.zeros((f, ho, wo))
    for o in range(f):
        for i in range(ho):
            for j in range(wo):
                acc = bias[o]
                for ci in range(c):
                    for a in range(kh):
                        for b in range(kw):
                            acc += xp[ci, i + a, j + b] * kernel[o, ci, a, b]
                out[o, i, j] = acc
    return out


def pool_oracle(x, ph, pw):
    c, h, w = x.shape
    out = np.zeros((c, h // ph, w // pw))
    for ci in range(c):
        for i in range(h // ph):
            for j in range(w // pw):
                out[ci, i, j] = x[ci, i * ph:(i + 1) * ph, j * pw:(j + 1) * pw].max()
    return out


def conv_weights(f, c, kh, kw, rng, name="c"):
    return {f"{name}.kernel": rng.standard_normal((f, c, kh, kw)), f"{name}.bias": rng.standard_normal(f)}


# ---------------------------------------------------------------------------
# conv2d

def test_identity_kernel():
    x = np.random.default_rng(0).standard_normal((1, 6, 5))
    spec = L("conv2d", "c", filters=1, kernel=(1, 1))
    out = conv2d_forward(x, spec, {"c.kernel": np.ones((1, 1, 1, 1)), "c.bias": np.zeros(1)})
    np.testing.assert_array_equal(out, x)


def test_bias_only():
    spec = L("conv2d", "c", filters=2, kernel=(3, 3), padding="same")
    w = {"c.kernel": np.random.default_rng(0).standard_normal((2, 3, 3, 3)), "c.bias": np.array([1.5, -2.0])}
    out = conv2d_forward(np.zeros((3, 4, 4)), spec, w)
    assert out.shape == (2, 4, 4)
    assert np.all(out[0] == 1.5) and np.all(out[1] == -2.0)


@pytest.mark.parametrize("padding", ["valid", "same"])
def test_conv_matches_nested_loop_oracle(padding):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 8, 7))
    w = conv_weights(5, 3, 3, 3, rng)
    spec = L("conv2d", "c", filters=5, kernel=(3, 3), padding=padding)
    out = conv2d_forward(x, spec, w)
    ref = conv_oracle(x, w["c.kernel"], w["c.bias"], padding)
    assert out.shape == ref.shape
    assert np.max(np.abs(out - ref)) < 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(5, 9), st.integers(5, 9), st.integers(0, 10 ** 6))
def test_same_conv_keeps_shape_and_matches_oracle(kh, kw, h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, h, w))
    weights = conv_weights(3, 2, kh, kw, rng)
    spec = L("conv2d", "c", filters=3, kernel=(kh, kw), padding="same")
    out = conv2d_forward(x, spec, weights)
    assert out.shape == (3, h, w) == output_shape(spec, (2, h, w))
    assert np.max(np.abs(out - conv_oracle(x, weights["c.kernel"], weights["c.bias"], "same"))) < 1e-9


def test_same_padding_extra_zero_goes_high():
    # a 1x2 kernel picking the right-hand neighbour sees zero padding only at the last column
    x = np.arange(1.0, 5.0).reshape(1, 1, 4)
    spec = L("conv2d", "c", filters=1, kernel=(1, 2), padding="same")
    out = conv2d_forward(x, spec, {"c.kernel": np.array([[[[0.0, 1.0]]]]), "c.bias": np.zeros(1)})
    np.testing.assert_array_equal(out[0, 0], [2, 3, 4, 0])


def test_valid_conv_rejects_small_input():
    with pytest.raises(ContractViolation):
        output_shape(L("conv2d", "c", filters=1, kernel=(3, 7)), (1, 2, 15))


def test_channel_mismatch():
    spec = L("conv2d", "c", filters=1, kernel=(1, 1))
    with pytest.raises(ContractViolation):
        conv2d_forward(np.zeros((2, 3, 3)), spec, {"c.kernel": np.ones((1, 1, 1, 1)), "c.bias": np.zeros(1)})


# ---------------------------------------------------------------------------
# maxpool2d

def test_pool_identity():
    x = np.random.default_rng(0).standard_normal((2, 5, 4))
    np.testing.assert_array_equal(maxpool2d_forward(x, L("maxpool2d", "p", pool=(1, 1))), x)


def test_pool_front_end_shape():
    assert output_shape(L("maxpool2d", "p", pool=(3, 1)), (1, 80, 15)) == (1, 26, 15)
    x = np.random.default_rng(0).standard_normal((1, 80, 15))
    out = maxpool2d_forward(x, L("maxpool2d", "p", pool=(3, 1)))
    np.testing.assert_array_equal(out, pool_oracle(x, 3, 1))


def test_pool_constant_input():
    out = maxpool2d_forward(np.full((2, 9, 4), 0.7), L("maxpool2d", "p", pool=(3, 2)))
    assert out.shape == (2, 3, 2) and np.all(out == 0.7)


@settings(max_examples=30)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10 ** 6))
def test_pool_oracle(ph, pw, seed):
    x = np.random.default_rng(seed).integers(-3, 3, (2, 11, 7)).astype(float)
    np.testing.assert_array_equal(maxpool2d_forward(x, L("maxpool2d", "p", pool=(ph, pw))),
                                  pool_oracle(x, ph, pw))


def test_pool_ties_route_to_lowest_index():
    net = Network([L("maxpool2d", "p", pool=(3, 2))], (1, 3, 2), {}, dtype=np.float64)
    x = np.array([[[[1.0, 5.0], [5.0, 2.0], [5.0, 0.0]]]])
    net.forward(x, training=True)
    _, dx = net.backward(np.ones((1, 1, 1, 1)), need_input_grad=True)
    np.testing.assert_array_equal(dx[0, 0], [[0, 1], [0, 0], [0, 0]])


# ---------------------------------------------------------------------------
# element-wise layers, dropout, batchnorm

def test_sigmoid():
    assert sigmoid(0.0) == 0.5
    x = np.linspace(-30, 30, 61)
    # the tanh form is accurate in absolute terms; far tails are clamped before any log
    assert np.max(np.abs(sigmoid(x) - 1 / (1 + np.exp(-x)))) < 1e-15


def test_dropout_rate_zero_is_identity_in_training():
    x = np.random.default_rng(0).standard_normal((3, 4, 5))
    np.testing.assert_array_equal(layer_forward(L("dropout", "d", rate=0.0), x, {}, training=True), x)


def test_dropout_inference_is_identity():
    x = np.random.default_rng(0).standard_normal((3, 4, 5))
    np.testing.assert_array_equal(layer_forward(L("dropout", "d", rate=0.5), x, {}, training=False), x)


def test_inverted_dropout_scaling():
    x = np.ones((1, 200, 50))
    out = layer_forward(L("dropout", "d", rate=0.25), x, {}, training=True,
                        rng=np.random.default_rng(3))
    assert set(np.unique(out)) <= {0.0, 1 / 0.75}
    assert abs(np.mean(out == 0) - 0.25) < 0.02


def test_batchnorm_training_moments():
    rng = np.random.default_rng(0)
    x = 3.0 + 2.0 * rng.standard_normal((16, 4, 6, 5))
    spec = L("batchnorm", "b")
    w = {"b.gamma": np.ones(4), "b.beta": np.zeros(4), "b.running_mean": np.zeros(4), "b.running_var": np.ones(4)}
    net = Network([spec], (4, 6, 5), w, dtype=np.float64)
    y = net.forward(x, training=True)
    mean = y.mean(axis=(0, 2, 3))
    var = y.var(axis=(0, 2, 3))
    assert np.all(np.abs(mean) < 1e-5)
    assert np.all(np.abs(var - 1) < 1e-3)
    batch_mean = x.mean(axis=(0, 2, 3))
    batch_var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(net.weights["b.running_mean"], 0.01 * batch_mean, rtol=1e-12)
    np.testing.assert_allclose(net.weights["b.running_var"], 0.99 + 0.01 * batch_var, rtol=1e-12)


def test_batchnorm_inference_uses_running_stats():
    spec = L("batchnorm", "b")
    w = {"b.gamma": np.array([2.0]), "b.beta": np.array([0.5]),
         "b.running_mean": np.array([1.0]), "b.running_var": np.array([4.0])}
    x = np.array([[[[3.0]]]])
    out = Network([spec], (1, 1, 1), w, dtype=np.float64).forward(x)
    assert out[0, 0, 0, 0] == pytest.approx(2.0 * (3.0 - 1.0) / np.sqrt(4.0 + 1e-3) + 0.5)


def test_batchnorm_counts_only_gamma_beta():
    trainable, state = pipeline_param_shapes([L("batchnorm", "b")], (7, 3, 3))
    assert sorted(trainable) == ["b.beta", "b.gamma"]
    assert sorted(state) == ["b.running_mean", "b.running_var"]


# ---------------------------------------------------------------------------
# backward

def test_zero_upstream_gives_zero_gradients():
    layers = [L("conv2d", "c", filters=2, kernel=(2, 2)), L("relu", "r"), L("flatten", "f"),
              L("dense", "d", units=3)]
    net = Network(layers, (1, 4, 4), init_weights(layers, (1, 4, 4), 0), dtype=np.float64)
    net.forward(np.random.default_rng(0).standard_normal((2, 1, 4, 4)), training=True)
    grads, dx = net.backward(np.zeros((2, 3)), need_input_grad=True)
    assert set(grads) == set(net.trainable)
    assert all(not g.any() for g in grads.values()) and not dx.any()


def test_dense_hand_computed_gradient():
    w = {"d.weight": np.array([[1.0, 2.0], [3.0, 4.0]]), "d.bias": np.zeros(2)}
    net = Network([L("dense", "d", units=2)], (2,), w, dtype=np.float64)
    np.testing.assert_array_equal(net.forward(np.array([[1.0, 2.0]])), [[7.0, 10.0]])
    grads, dx = net.backward(np.array([[1.0, 1.0]]), need_input_grad=True)
    np.testing.assert_array_equal(grads["d.weight"], [[1, 1], [2, 2]])
    np.testing.assert_array_equal(grads["d.bias"], [1, 1])
    np.testing.assert_array_equal(dx, [[3, 7]])


def test_backward_without_forward():
    net = Network([L("relu", "r")], (3,), {})
    with pytest.raises(UsageError):
        net.backward(np.zeros((1, 3)))


BRANCH_A = (L("conv2d", "a1", filters=2, kernel=(3, 1), padding="same"), L("relu", "a2"))
BRANCH_B = (L("conv2d", "b1", filters=3, kernel=(1, 3), padding="same"), L("batchnorm", "b2"))

LAYER_CASES = {
    "conv2d_valid": ([L("conv2d", "c", filters=3, kernel=(3, 2))], (2, 6, 5)),
    "conv2d_same_odd": ([L("conv2d", "c", filters=3, kernel=(3, 3), padding="same")], (2, 6, 5)),
    "conv2d_same_even": ([L("conv2d", "c", filters=2, kernel=(2, 4), padding="same")], (2, 6, 5)),
    "maxpool2d": ([L("maxpool2d", "p", pool=(3, 2))], (2, 7, 5)),
    "dense": ([L("dense", "d", units=4)], (6,)),
    "flatten": ([L("flatten", "f")], (2, 3, 4)),
    "dropout": ([L("dropout", "d", rate=0.5)], (2, 3, 4)),
    "batchnorm": ([L("batchnorm", "b")], (3, 4, 5)),
    "relu": ([L("relu", "r")], (2, 3, 4)),
    "sigmoid": ([L("sigmoid", "s")], (2, 3, 4)),
    "concat_parallel": ([L("concat_parallel", "cat", branches=(BRANCH_A, BRANCH_B))], (2, 5, 4)),
    "concat_parallel_frozen": ([L("concat_parallel", "cat", branches=(BRANCH_A, BRANCH_B),
                                  frozen=(True, False))], (2, 5, 4)),
}


@pytest.mark.parametrize("case", sorted(LAYER_CASES))
def test_layer_gradients_finite_difference(case):
    layers, shape = LAYER_CASES[case]
    weights = init_weights(layers, shape, seed=3)
    for k in weights:  # non-trivial batchnorm parameters
        if k.endswith((".gamma", ".beta")):
            weights[k] = np.random.default_rng(1).uniform(0.5, 1.5, weights[k].shape)
    for training in (True, False):
        err = gradient_check(layers, shape, weights, per_tensor=10, training=training)
        assert err < 1e-4, (case, training, err)


def test_frozen_branch_gets_no_gradient_and_keeps_its_statistics():
    layers, shape = LAYER_CASES["concat_parallel_frozen"]
    layers = [L("concat_parallel", "cat", branches=(BRANCH_B, BRANCH_A), frozen=(True, False))]
    weights = init_weights(layers, shape, seed=0)
    net = Network(layers, shape, weights, dtype=np.float64)
    assert set(net.trainable) == {"a1.kernel", "a1.bias"}
    net.forward(np.random.default_rng(0).standard_normal((4,) + shape), training=True)
    grads = net.backward(np.ones((4, 5, 5, 4)))
    assert set(grads) == {"a1.kernel", "a1.bias"}
    np.testing.assert_array_equal(net.weights["b2.running_mean"], 0.0)
    np.testing.assert_array_equal(net.weights["b2.running_var"], 1.0)


# ---------------------------------------------------------------------------
# weighted BCE

def test_bce_closed_form():
    loss, grad = weighted_bce(np.array([0.5]), np.array([1.0]), np.array([1.0]))
    assert loss == pytest.approx(np.log(2))
    assert grad[0] == pytest.approx(-2.0)


def test_bce_zero_weights():
    p = np.random.default_rng(0).uniform(0.01, 0.99, 10)
    loss, grad = weighted_bce(p, np.ones(10), np.zeros(10))
    assert loss == 0.0 and not grad.any()


def test_bce_matches_definition_and_finite_differences():
    rng = np.random.default_rng(4)
    p = rng.uniform(0.05, 0.95, 32)
    t = rng.integers(0, 2, 32).astype(float)
    w = rng.choice([0.25, 1.0], 32)
    loss, grad = weighted_bce(p, t, w)
    ref = np.mean(w * -(t * np.log(p) + (1 - t) * np.log(1 - p)))
    assert loss == pytest.approx(ref, rel=1e-12)
    for i in range(32):
        e = np.zeros(32)
        e[i] = FD_STEP
        num = (weighted_bce(p + e, t, w)[0] - weighted_bce(p - e, t, w)[0]) / (2 * FD_STEP)
        assert rel_error(grad[i], num) < 1e-6


def test_bce_clamps_extremes():
    loss, grad = weighted_bce(np.array([0.0, 1.0]), np.array([1.0, 0.0]), np.ones(2))
    assert loss == pytest.approx(-np.log(1e-7), rel=1e-6)
    assert np.all(np.isfinite(grad)) and not grad.any()


def test_bce_length_mismatch():
    with pytest.raises(ContractViolation):
        weighted_bce(np.ones(3) * 0.5, np.ones(2), np.ones(3))


# ---------------------------------------------------------------------------
# Adam

def test_adam_zero_gradient_first_step():
    w = {"x": np.array([1.0, -2.0])}
    adam_step(w, {"x": np.zeros(2)}, AdamState(), lr=0.1)
    np.testing.assert_array_equal(w["x"], [1.0, -2.0])


@pytest.mark.parametrize("g", [3.0, -0.02, 1e-3])
def test_adam_first_step_is_lr_sign(g):
    w = {"x": np.array([0.0])}
    adam_step(w, {"x": np.array([g])}, AdamState(), lr=1e-3)
    assert abs(w["x"][0] + 1e-3 * np.sign(g)) < 1e-6


def test_adam_quadratic():
    w = {"x": np.array([1.0])}
    state = AdamState()
    m = v = 0.0
    x = 1.0
    for k in range(1, 101):
        adam_step(w, {"x": 2 * w["x"]}, state, lr=0.05)
        # independent scalar recursion
        g = 2 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.05 * (m / (1 - 0.9 ** k)) / (np.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
    assert abs(w["x"][0]) < 0.1
    assert w["x"][0] == pytest.approx(x, rel=1e-12, abs=1e-15)
    assert state.step == 100


# ---------------------------------------------------------------------------
# Determinism, validation, serialization of specs

def _small_net(seed=0):
    layers = [L("conv2d", "c", filters=3, kernel=(3, 3), padding="same"), L("relu", "r"),
              L("batchnorm", "b"), L("dropout", "d", rate=0.5), L("flatten", "f"),
              L("dense", "o", units=1), L("sigmoid", "s")]
    return Network(layers, (1, 6, 5), init_weights(layers, (1, 6, 5), 0), seed=seed)


def test_inference_is_pure_and_training_is_reproducible():
    x = np.random.default_rng(0).standard_normal((4, 1, 6, 5)).astype(np.float32)
    net = _small_net()
    a = net.forward(x)
    b = net.forward(x)
    assert a.tobytes() == b.tobytes()
    r1 = _small_net(seed=9).forward(x, training=True)
    r2 = _small_net(seed=9).forward(x, training=True)
    assert r1.tobytes() == r2.tobytes()
    assert np.all((a > 0) & (a < 1))


def test_network_rejects_bad_inputs_and_weights():
    net = _small_net()
    with pytest.raises(ContractViolation):
        net.forward(np.zeros((1, 1, 5, 5)))
    layers = [L("dense", "d", units=2)]
    with pytest.raises(ContractViolation):
        Network(layers, (3,), {"d.weight": np.zeros((3, 2))})
    with pytest.raises(ContractViolation):
        Network(layers, (3,), {"d.weight": np.zeros((2, 2)), "d.bias": np.zeros(2)})


@pytest.mark.parametrize("kwargs", [
    dict(kind="conv3d"), dict(kind="conv2d", filters=1, kernel=(0, 3)),
    dict(kind="conv2d", filters=1, kernel=(3, 3), padding="full"),
    dict(kind="maxpool2d", pool=(0, 1)), dict(kind="dropout", rate=1.0),
    dict(kind="dense", units=0),
])
def test_invalid_layer_specs(kwargs):
    with pytest.raises(ContractViolation):
        L(**kwargs)


def test_layer_spec_dict_round_trip():
    spec = L("concat_parallel", "cat", branches=(BRANCH_A, BRANCH_B), frozen=(True, False))
    assert L.from_dict(spec.to_dict()) == spec
    for s in BRANCH_A + BRANCH_B + (L("dropout", "d", rate=0.5), L("maxpool2d", "p", pool=(3, 1))):
        assert L.from_dict(s.to_dict()) == s
