"""Unit tests for the autodiff engine: forward oracles and gradients."""

import numpy as np
import pytest

from tempocast.errors import MaskError, NonFiniteError, ShapeError
from tempocast.tensor import (
    Tensor,
    concat,
    gelu,
    layer_norm,
    matmul,
    sigmoid,
    softmax_rows,
)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


# ---- forward oracles ----


def test_matmul_identity():
    a = rng().normal(size=(4, 4))
    out = matmul(Tensor(a), Tensor(np.eye(4)))
    assert np.array_equal(out.data, a @ np.eye(4))


def test_matmul_against_triple_loop():
    r = rng(1)
    a = r.normal(size=(5, 7))
    b = r.normal(size=(7, 3))
    got = matmul(Tensor(a), Tensor(b)).data
    want = np.zeros((5, 3))
    for i in range(5):
        for j in range(3):
            for k in range(7):
                want[i, j] += a[i, k] * b[k, j]
    assert np.max(np.abs(got - want)) < 1e-12


def test_matmul_shape_errors():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


def test_softmax_matches_exp_normalize():
    x = np.array([[1.0, 2.0, 3.0]])
    got = softmax_rows(Tensor(x)).data
    e = np.exp(x - x.max())
    assert np.max(np.abs(got - e / e.sum())) < 1e-12


def test_softmax_rows_sum_to_one():
    x = rng(2).normal(size=(12, 9)) * 30.0
    y = softmax_rows(Tensor(x)).data
    assert np.max(np.abs(y.sum(axis=1) - 1.0)) < 1e-10


def test_softmax_shift_invariance():
    x = rng(3).normal(size=(4, 6))
    a = softmax_rows(Tensor(x)).data
    b = softmax_rows(Tensor(x + 123.0)).data
    assert np.max(np.abs(a - b)) < 1e-12


def test_softmax_masked_positions_exactly_zero():
    x = rng(4).normal(size=(5, 5))
    mask = np.zeros((5, 5))
    mask[np.triu_indices(5, k=1)] = -np.inf
    y = softmax_rows(Tensor(x), mask).data
    assert np.all(y[np.triu_indices(5, k=1)] == 0.0)
    assert np.max(np.abs(y.sum(axis=1) - 1.0)) < 1e-10
    # huge (but masked) logits must not disturb the visible ones
    x2 = x.copy()
    x2[np.triu_indices(5, k=1)] = 1e9
    y2 = softmax_rows(Tensor(x2), mask).data
    assert np.array_equal(y, y2)


def test_softmax_fully_masked_row_raises():
    mask = np.zeros((2, 3))
    mask[1, :] = -np.inf
    with pytest.raises(MaskError):
        softmax_rows(Tensor(np.zeros((2, 3))), mask)


def test_layer_norm_constant_row_gives_bias():
    x = Tensor(np.full((3, 8), 2.5))
    gain = Tensor(rng(5).normal(size=8))
    bias = Tensor(rng(6).normal(size=8))
    y = layer_norm(x, gain, bias).data
    assert np.max(np.abs(y - bias.data)) < 1e-12


def test_layer_norm_moments_and_eps():
    x = rng(7).normal(size=(10, 16)) * 3.0 + 1.0
    y = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
    mu = x.mean(axis=1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
    want = (x - mu) / np.sqrt(var + 1e-5)
    assert np.max(np.abs(y - want)) < 1e-12
    assert np.max(np.abs(y.mean(axis=1))) < 1e-10


def test_sigmoid_values():
    assert sigmoid(Tensor(0.0)).data == 0.5
    assert sigmoid(Tensor(-np.inf)).data == 0.0
    assert sigmoid(Tensor(np.inf)).data == 1.0
    assert abs(sigmoid(Tensor(np.log(3.0))).data - 0.75) < 1e-12
    # no overflow warnings for large magnitudes
    big = sigmoid(Tensor(np.array([-750.0, 750.0]))).data
    assert big[0] == 0.0 and big[1] == 1.0


def test_gelu_reference_points():
    # tanh form satisfies gelu(x) - gelu(-x) == x exactly
    x = rng(8).normal(size=32) * 2.0
    y = gelu(Tensor(x)).data - gelu(Tensor(-x)).data
    assert np.max(np.abs(y - x)) < 1e-12
    assert gelu(Tensor(0.0)).data == 0.0
    # large positive inputs pass through, large negative die off
    assert abs(gelu(Tensor(8.0)).data - 8.0) < 1e-9
    assert abs(gelu(Tensor(-8.0)).data) < 1e-9


def test_nonfinite_output_raises():
    with pytest.raises(NonFiniteError):
        Tensor(np.inf) - Tensor(np.inf)
    with pytest.raises(NonFiniteError):
        Tensor(1.0) / Tensor(0.0)
    # leaves may hold inf: only op outputs are checked
    t = Tensor(np.array([1.0, -np.inf]))
    assert np.isneginf(t.data[1])


def test_broadcasting_matches_numpy():
    r = rng(9)
    a = r.normal(size=(4, 5))
    b = r.normal(size=5)
    assert np.array_equal((Tensor(a) + Tensor(b)).data, a + b)
    assert np.array_equal((Tensor(a) * Tensor(b)).data, a * b)


# ---- backward ----


def test_backward_square():
    w = Tensor(3.0, requires_grad=True)
    (w * w).backward()
    assert w.grad == 6.0


def test_backward_requires_scalar():
    w = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ShapeError):
        (w * w).backward()


def test_backward_broadcast_sums_gradient():
    a = Tensor(rng(10).normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng(11).normal(size=5), requires_grad=True)
    (a * b).sum().backward()
    assert np.max(np.abs(b.grad - a.data.sum(axis=0))) < 1e-12
    assert np.max(np.abs(a.grad - np.broadcast_to(b.data, (4, 5)))) < 1e-12


def test_backward_reuse_accumulates():
    w = Tensor(2.0, requires_grad=True)
    y = w * w + w * w  # two paths through w
    y.backward()
    assert w.grad == 8.0


def test_backward_through_slice_and_concat():
    a = Tensor(rng(12).normal(size=(6, 3)), requires_grad=True)
    b = Tensor(rng(13).normal(size=(2, 3)), requires_grad=True)
    out = concat([a[1:4], b], axis=0).sum()
    out.backward()
    want = np.zeros((6, 3))
    want[1:4] = 1.0
    assert np.array_equal(a.grad, want)
    assert np.array_equal(b.grad, np.ones((2, 3)))


def test_frozen_leaf_gets_no_gradient():
    w = Tensor(2.0, requires_grad=True)
    c = Tensor(5.0)
    c.ensure_grad_buffer()
    (w * c).backward()
    assert w.grad == 5.0
    assert c.grad == 0.0


def test_backward_deterministic_across_runs():
    def run():
        r = rng(14)
        a = Tensor(r.normal(size=(8, 8)), requires_grad=True)
        b = Tensor(r.normal(size=(8, 8)), requires_grad=True)
        loss = softmax_rows(matmul(a, b)).sum() * 0.5 + (a * a).mean()
        loss.backward()
        return a.grad.copy(), b.grad.copy()

    g1 = run()
    g2 = run()
    assert np.array_equal(g1[0], g2[0])
    assert np.array_equal(g1[1], g2[1])
