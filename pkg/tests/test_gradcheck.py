"""Finite-difference verification of every primitive's gradient rule."""

import numpy as np
import pytest

from tempocast.gradcheck import central_difference, finite_difference_check
from tempocast.tensor import (
    Tensor,
    concat,
    gelu,
    layer_norm,
    matmul,
    sigmoid,
    softmax_rows,
)


def rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


def check(f, params, tol=1e-6):
    report = finite_difference_check(f, params, eps=1e-5)
    assert report["max_rel_err"] < tol, report
    return report


def test_quadratic_bowl():
    w = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    check(lambda: (w * w).sum(), {"w": w}, tol=1e-8)


def test_corrupted_gradient_is_detected():
    w = Tensor(3.0, requires_grad=True)

    def f():
        return w * w

    f().backward()
    bad = {"w": w.grad * 1.01}
    report = finite_difference_check(f, {"w": w}, eps=1e-5, analytic=bad)
    assert report["max_rel_err"] > 1e-3


def test_central_difference_helper():
    w = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    d = central_difference(lambda: (w * w * w).sum(), w, 0, 1e-5)
    assert abs(d - 12.0) < 1e-6
    assert w.data[0] == 2.0  # restored exactly


def test_arithmetic_ops():
    r = rng(0)
    a = Tensor(r.normal(size=(3, 4)), requires_grad=True)
    b = Tensor(r.normal(size=(3, 4)) + 3.0, requires_grad=True)
    check(lambda: (a * b + a - b / a.exp()).mean(), {"a": a, "b": b})


def test_matmul_transpose_reshape():
    r = rng(1)
    a = Tensor(r.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(r.normal(size=(4, 5)), requires_grad=True)
    check(lambda: matmul(a.T, b).reshape(15).sum(), {"a": a, "b": b})


def test_reductions_with_axes():
    r = rng(2)
    a = Tensor(r.normal(size=(5, 6)), requires_grad=True)
    check(lambda: (a.sum(axis=0) * a.mean(axis=1).sum()).sum(), {"a": a})


def test_sqrt_exp():
    r = rng(3)
    a = Tensor(np.abs(r.normal(size=(3, 3))) + 0.5, requires_grad=True)
    check(lambda: (a.sqrt() + a.exp()).sum(), {"a": a})


def test_sigmoid_gelu():
    r = rng(4)
    a = Tensor(r.normal(size=(4, 4)) * 2.0, requires_grad=True)
    check(lambda: (sigmoid(a) * gelu(a)).sum(), {"a": a})


def test_slice_concat():
    r = rng(5)
    a = Tensor(r.normal(size=(6, 3)), requires_grad=True)
    b = Tensor(r.normal(size=(2, 3)), requires_grad=True)
    w = Tensor(r.normal(size=(8, 3)))
    check(lambda: (concat([a[0:4], b, a[4:6]], axis=0) * w).sum(), {"a": a, "b": b})


def test_softmax_with_mask():
    r = rng(6)
    a = Tensor(r.normal(size=(5, 5)), requires_grad=True)
    w = r.normal(size=(5, 5))
    mask = np.zeros((5, 5))
    mask[np.triu_indices(5, k=1)] = -np.inf
    check(lambda: (softmax_rows(a, mask) * w).sum(), {"a": a})


def test_layer_norm_composite():
    r = rng(7)
    x = Tensor(r.normal(size=(4, 8)), requires_grad=True)
    g = Tensor(r.normal(size=8), requires_grad=True)
    b = Tensor(r.normal(size=8), requires_grad=True)
    w = r.normal(size=(4, 8))
    check(lambda: (layer_norm(x, g, b) * w).sum(), {"x": x, "g": g, "b": b})


def test_subset_sampling_uses_rng():
    r = rng(8)
    a = Tensor(r.normal(size=(10, 10)), requires_grad=True)
    report = finite_difference_check(
        lambda: (a * a).sum(), {"a": a}, eps=1e-5, max_coords_per_param=7, rng=rng(99)
    )
    assert report["n_coords"] == 7
    assert report["max_rel_err"] < 1e-7


def test_multi_eps_takes_best_agreement_per_coordinate():
    # exp curvature makes a wide step's truncation error ~eps^2/6; the
    # narrow step alone verifies it, and min-over-widths keeps that.
    w = Tensor(3.0, requires_grad=True)

    def f():
        return w.exp()

    wide = finite_difference_check(f, {"w": w}, eps=3e-2)
    both = finite_difference_check(f, {"w": w}, eps=(3e-2, 1e-5))
    assert wide["max_rel_err"] > 1e-5
    assert both["max_rel_err"] < 1e-8


def test_atol_floors_near_zero_coordinates():
    # the tiny coordinate's difference quotient loses ~2 digits to
    # cancellation against exp(3), so the strict ratio cannot verify it
    w = Tensor(np.array([3.0, 5e-10]), requires_grad=True)

    def f():
        return w[0:1].exp().sum() + (w[1:2] * w[1:2]).sum()

    strict = finite_difference_check(f, {"w": w}, eps=1e-4)
    floored = finite_difference_check(f, {"w": w}, eps=1e-4, atol=1e-6)
    assert strict["max_rel_err"] > 1e-4
    assert floored["max_rel_err"] < 1e-4
    # a genuinely wrong gradient still fails with the floor in place
    f().backward()
    bad = {"w": w.grad * 1.05}
    rep = finite_difference_check(f, {"w": w}, eps=1e-4, analytic=bad, atol=1e-6)
    assert rep["max_rel_err"] > 1e-3
