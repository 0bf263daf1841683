"""Finite-difference verification of every tape primitive."""

import numpy as np
import pytest

from tok4d import autodiff as ad
from tok4d.errors import NonFiniteGradient


def test_square_at_three():
    # f(x) = x^2 at x = 3: analytic gradient 6.
    err = ad.grad_check(lambda x: (x * x).sum(), np.array(3.0))
    assert err < 1e-8


def test_nonfinite_gradient_raises():
    def f(x):
        return (x * ad.constant(np.nan)).sum()

    with pytest.raises(NonFiniteGradient):
        ad.grad_check(f, np.array(1.0))


@pytest.mark.parametrize("op", [
    lambda x: (x * 2.5 + 1.0).sum(),
    lambda x: (x * x * x).mean(),
    lambda x: ad.tanh(x).sum(),
    lambda x: ad.sigmoid(x).sum(),
    lambda x: ad.softplus(x).sum(),
    lambda x: ad.exp(x).sum(),
    lambda x: ad.gelu(x).sum(),
    lambda x: ad.absolute(x).sum(),
    lambda x: ad.sqrt(x * x + 1.0).sum(),
    lambda x: ad.softmax(x, axis=-1).reshape(-1)[3] * 2.0,
    lambda x: ad.log_softmax(x, axis=-1).mean(),
    lambda x: (x.transpose() @ x).sum(),
    lambda x: x.reshape(12).mean(axis=0),
    lambda x: x[1:, :2].sum(),
    lambda x: ad.concat([x, x * 2.0], axis=0).mean(),
    lambda x: ad.stack([x, x * x], axis=1).sum(),
])
def test_elementwise_and_shape_ops(op):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(3, 4)) * 0.8 + 0.1
    assert ad.grad_check(op, x) < 1e-7


def test_layer_norm_gradients():
    rng = np.random.default_rng(8)
    x0 = rng.normal(size=(5, 6))
    gain = rng.normal(size=6)
    bias = rng.normal(size=6)
    weight = ad.constant(rng.normal(size=(5, 6)))

    def wrt_x(x):
        return (ad.layer_norm(x, ad.constant(gain), ad.constant(bias)) * weight).sum()

    def wrt_gain(g):
        return (ad.layer_norm(ad.constant(x0), g, ad.constant(bias)) * weight).sum()

    def wrt_bias(b):
        return (ad.layer_norm(ad.constant(x0), ad.constant(gain), b) * weight).sum()

    assert ad.grad_check(wrt_x, x0, eps=1e-6) < 1e-6
    assert ad.grad_check(wrt_gain, gain) < 1e-7
    assert ad.grad_check(wrt_bias, bias) < 1e-8


def test_log_positive_domain():
    rng = np.random.default_rng(1)
    x = rng.uniform(0.5, 2.0, size=(5,))
    assert ad.grad_check(lambda t: ad.log(t).sum(), x) < 1e-8


def test_matmul_batched():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))

    def f_a(x):
        return (x @ ad.constant(b)).sum()

    def f_b(x):
        return (ad.constant(a) @ x).sum()

    assert ad.grad_check(f_a, a) < 1e-7
    assert ad.grad_check(f_b, b) < 1e-7


def test_matmul_vector_cases():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(4,))
    m = rng.normal(size=(4, 4))
    assert ad.grad_check(lambda x: (x @ ad.constant(m)).sum(), v) < 1e-7
    assert ad.grad_check(lambda x: (ad.constant(m) @ x).sum(), v) < 1e-7
    assert ad.grad_check(lambda x: x @ ad.constant(v), v) < 1e-7


def test_broadcast_add_and_mul():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 1, 4))
    other = ad.constant(rng.normal(size=(2, 4)))
    assert ad.grad_check(lambda t: (t + other).sum(), x) < 1e-7
    assert ad.grad_check(lambda t: (t * other).mean(), x) < 1e-7


def test_take_flat_scatter_gather():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 5))
    idx = np.array([0, 3, 3, 7, 19, 11])

    def f(t):
        return (ad.take_flat(t, idx) * ad.constant(np.arange(6.0))).sum()

    assert ad.grad_check(f, x) < 1e-8


def test_getitem_fancy_index():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(6,))

    def f(t):
        return (t[np.array([0, 0, 2])] * 3.0).sum()

    assert ad.grad_check(f, x) < 1e-8


def test_gradient_accumulates_on_reuse():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    y = (x * x + x * 3.0).sum()
    y.backward()
    assert np.allclose(x.grad, [7.0])


def test_stop_gradient_blocks():
    x = ad.Tensor(np.array([2.0]), requires_grad=True)
    y = (ad.stop_gradient(x) * x).sum()
    y.backward()
    assert np.allclose(x.grad, [2.0])


def test_backward_is_deterministic():
    rng = np.random.default_rng(7)
    x0 = rng.normal(size=(8, 8))

    def run():
        x = ad.Tensor(x0, requires_grad=True)
        h = ad.gelu(x @ ad.constant(x0.T))
        loss = ad.softmax(h, axis=-1).mean() + ad.absolute(x).sum() * 0.1
        loss.backward()
        return x.grad.copy()

    g1, g2 = run(), run()
    assert np.array_equal(g1, g2)
