import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvrobust.errors import ConfigError, DimensionError, GraphStateError
from mvrobust.gradcheck import check_gradients, relative_error
from mvrobust.nn import GRUParams, gru_cell
from mvrobust.optim import Adam, AdamState, adam_step
from mvrobust.tensor import (
    Tensor,
    activation,
    backward,
    concat,
    conv1d,
    conv1d_channels_last,
    cross_entropy,
    matmul,
    mse,
    no_grad,
    parameter,
    softmax,
    stack,
)


def _fd_report(loss_fn, params, seed=0, entries=None):
    return check_gradients(loss_fn, params, np.random.default_rng(seed), entries_per_param=entries)


# matmul


def test_matmul_identity():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, np.eye(2)).data, a)


def test_matmul_hand_value():
    assert matmul([[1.0, 2.0]], [[3.0], [4.0]]).data.tolist() == [[11.0]]


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_matmul_gradient_is_ones_times_b_transpose():
    rng = np.random.default_rng(1)
    a = parameter(rng.uniform(-1, 1, (3, 4)))
    b = parameter(rng.uniform(-1, 1, (4, 2)))
    grads = backward(matmul(a, b).sum())
    np.testing.assert_allclose(grads[a], np.ones((3, 2)) @ b.data.T)
    report = _fd_report(lambda: matmul(a, b).sum(), [("a", a), ("b", b)])
    assert report.max_error < 1e-6


# conv1d


def test_conv1d_identity_kernel():
    x = np.random.default_rng(0).normal(size=(3, 7))
    kernels = np.eye(3)[:, :, None]
    np.testing.assert_array_equal(conv1d(x, kernels, np.zeros(3)).data, x)


def test_conv1d_hand_value_with_zero_padding():
    out = conv1d([[1.0, 2.0, 3.0]], np.ones((1, 1, 3)), np.zeros(1))
    assert out.data.tolist() == [[3.0, 6.0, 5.0]]


def test_conv1d_even_kernel_rejected():
    with pytest.raises(ConfigError):
        conv1d(np.ones((1, 4)), np.ones((1, 1, 2)), np.zeros(1))


def test_conv1d_matches_direct_loops():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 6))
    w = rng.normal(size=(4, 3, 5))
    b = rng.normal(size=4)
    expected = np.zeros((2, 4, 6))
    padded = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    for n in range(2):
        for o in range(4):
            for t in range(6):
                expected[n, o, t] = np.sum(w[o] * padded[n, :, t : t + 5]) + b[o]
    np.testing.assert_allclose(conv1d(x, w, b).data, expected, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(conv1d_channels_last(x.transpose(0, 2, 1), w, b).data, expected.transpose(0, 2, 1), atol=1e-12)


def test_conv1d_gradient_vs_finite_differences():
    rng = np.random.default_rng(4)
    x = parameter(rng.uniform(-1, 1, (2, 8)))
    w = parameter(rng.uniform(-1, 1, (3, 2, 3)))
    b = parameter(rng.uniform(-1, 1, 3))
    weights = rng.normal(size=(3, 8))
    report = _fd_report(lambda: (conv1d(x, w, b) * weights).sum(), [("x", x), ("w", w), ("b", b)])
    assert report.max_error < 1e-6


# GRU


def test_gru_cell_zero_weights():
    params = GRUParams(1, 1, np.random.default_rng(0))
    for p in params.parameters():
        p.data[...] = 0.0
    assert gru_cell([0.0], [1.0], params).data.tolist() == [0.5]


def test_gru_cell_fixed_point_at_origin():
    params = GRUParams(3, 4, np.random.default_rng(0))
    np.testing.assert_array_equal(gru_cell(np.zeros(3), np.zeros(4), params).data, np.zeros(4))


def test_gru_cell_shape_mismatch():
    params = GRUParams(3, 4, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        gru_cell(np.zeros(2), np.zeros(4), params)


def test_gru_cell_gradient_every_weight():
    rng = np.random.default_rng(5)
    params = GRUParams(3, 4, rng)
    for p in params.parameters():
        p.data[...] = rng.uniform(-1, 1, p.shape)
    x = rng.uniform(-1, 1, 3)
    h = rng.uniform(-1, 1, 4)
    report = _fd_report(lambda: (gru_cell(x, h, params) ** 2).sum(), list(params.named_parameters()))
    assert report.max_error < 1e-5


# activations, softmax, losses


def test_activations():
    assert activation([-1.0, 0.0, 2.0], "relu").data.tolist() == [0.0, 0.0, 2.0]
    assert activation([0.0], "sigmoid").data.tolist() == [0.5]
    assert activation([math.log(3.0)], "tanh").data[0] == pytest.approx(0.8, abs=1e-15)


def test_relu_subgradient_at_zero_is_zero():
    x = parameter([0.0, 1.0, -1.0])
    grads = backward(activation(x, "relu").sum())
    assert grads[x].tolist() == [0.0, 1.0, 0.0]


@pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh"])
def test_activation_gradients(kind):
    rng = np.random.default_rng(6)
    x = parameter(rng.uniform(-1, 1, 10))
    report = _fd_report(lambda: (activation(x, kind) * np.arange(10)).sum(), [("x", x)])
    assert report.max_error < 1e-6


def test_softmax_examples():
    assert softmax([0.0, 0.0]).data.tolist() == [0.5, 0.5]
    np.testing.assert_allclose(softmax([math.log(2.0), 0.0]).data, [2 / 3, 1 / 3], rtol=1e-15)
    assert softmax([1000.0, 1000.0]).data.tolist() == [0.5, 0.5]


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=8),
    st.floats(-100, 100),
)
def test_softmax_properties(values, shift):
    out = softmax(values).data
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(softmax(np.array(values) + shift).data, out, atol=1e-12)


def test_masked_softmax_renormalises():
    out = softmax([3.0, 1.0, 2.0], mask=[True, False, True]).data
    assert out[1] == 0.0
    assert abs(out.sum() - 1.0) <= 1e-12


def test_cross_entropy_examples():
    assert cross_entropy([0.0, 0.0], [0]).item() == pytest.approx(math.log(2.0), abs=1e-15)
    assert cross_entropy([20.0, 0.0], [0]).item() == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-6)
    with pytest.raises(IndexError):
        cross_entropy(np.zeros((2, 3)), [0, 3])


def test_cross_entropy_gradient():
    rng = np.random.default_rng(7)
    logits = parameter(rng.uniform(-1, 1, (4, 3)))
    labels = np.array([0, 2, 1, 2])
    report = _fd_report(lambda: cross_entropy(logits, labels), [("logits", logits)])
    assert report.max_error < 1e-6


def test_mse_examples_and_gradient():
    assert mse([1.0, 2.0], [1.0, 2.0]).item() == 0.0
    assert mse([1.0, 2.0], [0.0, 0.0]).item() == 2.5
    with pytest.raises(DimensionError):
        mse([1.0], [1.0, 2.0])
    pred = parameter([1.0, 2.0, -0.5])
    target = np.array([0.0, 0.5, 0.5])
    grads = backward(mse(pred, target))
    np.testing.assert_allclose(grads[pred], 2 * (pred.data - target) / 3)
    report = _fd_report(lambda: mse(pred, target), [("pred", pred)])
    assert report.max_error < 1e-6


# graph lifecycle


def test_backward_square():
    x = parameter(3.0)
    assert backward(x * x)[x] == pytest.approx(6.0)


def test_backward_constant_function():
    x = parameter(3.0)
    assert backward(x * 0.0 + 5.0)[x] == 0.0
    assert backward(Tensor(5.0)) == {}


def test_backward_rejects_non_scalar_and_second_call():
    x = parameter([1.0, 2.0])
    with pytest.raises(DimensionError):
        backward(x * 2.0)
    loss = (x * 2.0).sum()
    backward(loss)
    with pytest.raises(GraphStateError):
        backward(loss)


def test_graph_is_topologically_ordered_and_gradients_match_shapes():
    rng = np.random.default_rng(8)
    w = parameter(rng.normal(size=(3, 2)))
    b = parameter(rng.normal(size=2))
    out = (matmul(rng.normal(size=(5, 3)), w) + b).tanh().sum()
    graph = out.graph
    for i, node in enumerate(graph.nodes):
        assert all(p is None or p < i for p in node.parents)
    grads = backward(out)
    assert grads[w].shape == w.shape and grads[b].shape == b.shape


def test_no_grad_records_nothing():
    x = parameter([1.0])
    with no_grad():
        y = x * 2.0
    assert y.graph is None and not y.requires_grad


def test_overflow_is_an_error():
    with pytest.raises(FloatingPointError):
        Tensor([1000.0]).exp()


def test_concat_and_stack_gradients():
    rng = np.random.default_rng(9)
    a = parameter(rng.normal(size=(2, 3)))
    b = parameter(rng.normal(size=(2, 2)))
    c = parameter(rng.normal(size=(2, 3)))
    weights = rng.normal(size=(2, 5))
    weights2 = rng.normal(size=(2, 2, 3))
    report = _fd_report(lambda: (concat([a, b], axis=1) * weights).sum() + (stack([a, c], axis=1) * weights2).sum(), [("a", a), ("b", b), ("c", c)])
    assert report.max_error < 1e-6


def test_determinism_bit_identical():
    def run():
        rng = np.random.default_rng(10)
        w = parameter(rng.normal(size=(4, 3)))
        loss = cross_entropy(matmul(rng.normal(size=(6, 4)), w), [0, 1, 2, 0, 1, 2])
        return loss.item(), backward(loss)[w]

    (l1, g1), (l2, g2) = run(), run()
    assert l1 == l2 and np.array_equal(g1, g2)


def test_relative_error_floor():
    assert relative_error(1.0, 1.0) == 0.0
    assert relative_error(0.0, 1e-9) < 1e-2


# Adam


def test_adam_zero_gradient_is_noop():
    p = parameter([1.0, -2.0])
    adam_step([p], [np.zeros(2)], AdamState())
    assert p.data.tolist() == [1.0, -2.0]


def test_adam_first_step_closed_form():
    g = np.array([0.3, -2.0, 1e-3])
    p = parameter([1.0, 1.0, 1.0])
    state = AdamState(lr=1e-3)
    adam_step([p], [g], state)
    np.testing.assert_allclose(p.data, 1.0 - 1e-3 * g / (np.abs(g) + 1e-8), rtol=1e-12)
    assert state.t == 1


def test_adam_descends_quadratic():
    x = parameter([1.0])
    opt = Adam([x], lr=0.1)
    for _ in range(100):
        opt.step(backward((x * x).sum()))
    assert abs(x.data[0]) < 0.05
    assert opt.state.t == 100


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        adam_step([parameter([1.0, 2.0])], [np.zeros(3)], AdamState())
