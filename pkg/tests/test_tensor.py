"""Gradient and contract tests for the reverse-mode engine."""

import numpy as np
import pytest

from csvae_lab import tensor as T
from csvae_lab.errors import NonFiniteTensorError
from csvae_lab.gradcheck import assert_gradients_match
from csvae_lab.tensor import Tensor


def _param(rng, shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def test_backward_sum_is_ones():
    p = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    p.sum().backward()
    np.testing.assert_array_equal(p.grad, [1.0, 1.0, 1.0])


def test_backward_quadratic():
    p = Tensor([1.0, 2.0], requires_grad=True)
    (p * p).sum().backward()
    np.testing.assert_array_equal(p.grad, [2.0, 4.0])


def test_backward_rejects_non_scalar_root():
    p = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        (p * p).backward()


def test_backward_rejects_non_finite_graph():
    p = Tensor([1.0, -1.0], requires_grad=True)
    out = p.log().sum()  # log(-1) = nan
    with pytest.raises(NonFiniteTensorError):
        out.backward()


def test_gradient_accumulation_across_uses():
    # using a parameter twice must give the sum of both path gradients
    rng = np.random.default_rng(0)
    p = _param(rng, (3,))
    (p * p + p * 2.0).sum().backward()
    expected = 2.0 * p.data + 2.0
    np.testing.assert_allclose(p.grad, expected, rtol=1e-12)

    # single-use rewrite of the same function
    q = Tensor(p.data.copy(), requires_grad=True)
    ((q + 1.0) ** 2 - 1.0).sum().backward()
    np.testing.assert_allclose(p.grad, q.grad, rtol=1e-12)


def test_grads_accumulate_across_backward_calls():
    p = Tensor([3.0], requires_grad=True)
    p.sum().backward()
    p.sum().backward()
    np.testing.assert_array_equal(p.grad, [2.0])


def test_detach_blocks_gradient():
    p = Tensor([1.0, 2.0], requires_grad=True)
    (p.detach() * p).sum().backward()
    np.testing.assert_array_equal(p.grad, p.data)  # only the live path


def test_validate_flags_non_finite():
    t = Tensor([1.0, np.inf])
    with pytest.raises(NonFiniteTensorError):
        t.validate()
    Tensor([1.0, 2.0]).validate()


def test_no_graph_without_requires_grad():
    a = Tensor([1.0, 2.0])
    out = (a * a).sum()
    assert out._grad_fn is None and not out.requires_grad


# -- finite-difference suite over every differentiable primitive ---------------

N_INSTANCES = 20


def _instances(n=N_INSTANCES):
    return [np.random.default_rng(1000 + i) for i in range(n)]


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_add_broadcast(seed_rng):
    a = _param(seed_rng, (3, 4))
    b = _param(seed_rng, (4,))  # broadcast across rows
    w = seed_rng.standard_normal((3, 4))
    assert_gradients_match(lambda: ((a + b) * w).sum(), [a, b])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_sub_mul_div(seed_rng):
    a = _param(seed_rng, (2, 3))
    b = Tensor(seed_rng.standard_normal((2, 3)) + 3.0, requires_grad=True)
    assert_gradients_match(lambda: ((a - b) * (a * b) / b).sum(), [a, b])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_matmul(seed_rng):
    a = _param(seed_rng, (3, 4))
    b = _param(seed_rng, (4, 2))
    assert_gradients_match(lambda: (a @ b).sum(), [a, b])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_relu(seed_rng):
    a = _param(seed_rng, (4, 3))
    w = seed_rng.standard_normal((4, 3))
    assert_gradients_match(lambda: (a.relu() * w).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_exp_log(seed_rng):
    a = Tensor(seed_rng.uniform(0.5, 2.0, (5,)), requires_grad=True)
    assert_gradients_match(lambda: (a.exp().log() * a.log()).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_sum_axes(seed_rng):
    a = _param(seed_rng, (3, 4, 2))
    w = seed_rng.standard_normal((3, 2))
    assert_gradients_match(lambda: (a.sum(axis=1) * w).sum(), [a])
    assert_gradients_match(lambda: (a.mean(axis=(0, 2)) * w[0, 0]).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_power_neg(seed_rng):
    a = Tensor(seed_rng.uniform(0.5, 2.0, (4,)), requires_grad=True)
    assert_gradients_match(lambda: (-(a ** 3)).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_sigmoid_softplus(seed_rng):
    a = _param(seed_rng, (6,))
    assert_gradients_match(lambda: (a.sigmoid() + a.softplus()).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_log_softmax(seed_rng):
    a = _param(seed_rng, (3, 5))
    w = seed_rng.standard_normal((3, 5))
    assert_gradients_match(lambda: (T.log_softmax(a) * w).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_concat_narrow_reshape(seed_rng):
    a = _param(seed_rng, (2, 3))
    b = _param(seed_rng, (2, 2))

    def f():
        cat = T.concat([a, b], axis=1)
        part = T.narrow(cat, 1, 1, 3)
        return (part.reshape(6) ** 2).sum()

    assert_gradients_match(f, [a, b])


@pytest.mark.parametrize("seed_rng", _instances())
def test_grad_clamp(seed_rng):
    # keep values away from the clamp edges so FD is well defined
    vals = seed_rng.uniform(-3.0, 3.0, (8,))
    vals = vals[np.abs(np.abs(vals) - 1.0) > 0.05]
    a = Tensor(vals, requires_grad=True)
    assert_gradients_match(lambda: (a.clamp(-1.0, 1.0) * 2.0).sum(), [a])


@pytest.mark.parametrize("seed_rng", _instances()[:10])
def test_grad_conv2d(seed_rng):
    x = _param(seed_rng, (2, 2, 6, 6))
    w = _param(seed_rng, (3, 2, 4, 4))
    b = _param(seed_rng, (3,))
    assert_gradients_match(lambda: (T.conv2d(x, w, b, stride=2, padding=1) ** 2).sum(), [x, w, b])


@pytest.mark.parametrize("seed_rng", _instances()[:10])
def test_grad_conv_transpose2d(seed_rng):
    x = _param(seed_rng, (2, 3, 3, 3))
    w = _param(seed_rng, (3, 2, 4, 4))
    b = _param(seed_rng, (2,))
    assert_gradients_match(lambda: (T.conv_transpose2d(x, w, b, stride=2, padding=1) ** 2).sum(), [x, w, b])


def test_conv_transpose_shape():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    w = Tensor(np.zeros((3, 2, 4, 4)))
    out = T.conv_transpose2d(x, w, stride=2, padding=1)
    assert out.shape == (1, 2, 8, 8)


def test_mlp_gradients_match_finite_differences():
    # random 2-layer MLP with scalar output, every parameter entry checked
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((4, 3)))
    w1 = _param(rng, (3, 5))
    b1 = _param(rng, (5,))
    w2 = _param(rng, (5, 1))
    b2 = _param(rng, (1,))

    def f():
        h = (x @ w1 + b1).relu()
        return (h @ w2 + b2).sum()

    err = assert_gradients_match(f, [w1, b1, w2, b2])
    assert err < 1e-4
