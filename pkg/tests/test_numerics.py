"""Tensor engine: forward values against numpy, gradients against finite
differences, and the graph-discipline errors."""

import numpy as np
import pytest

from gateloop import numerics
from gateloop.numerics import (CplxTensor, GraphError, ShapeError, Tensor,
                               as_tensor, backward, constant, cplx_mul,
                               cplx_muladd, index_assign, layer_norm,
                               matmul, parameter, softmax,
                               softmax_cross_entropy, stack, unbind)

RNG = np.random.default_rng(42)


def fd_grad(f, x, eps=1e-6):
    """Central finite differences of scalar f w.r.t. array x, in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return g


def check_unary(op, data, tol=1e-7):
    x = parameter(data.copy())
    loss = op(x).sum()
    backward(loss)
    fd = fd_grad(lambda: float(op(Tensor(data)).sum().data), data)
    assert np.abs(x.grad - fd).max() < tol


# -- elementwise forward/backward ---------------------------------------------

def test_add_mul_values():
    a, b = RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))
    assert np.array_equal((Tensor(a) + Tensor(b)).data, a + b)
    assert np.array_equal((Tensor(a) * Tensor(b)).data, a * b)
    assert np.array_equal((Tensor(a) - Tensor(b)).data, a - b)
    assert np.allclose((Tensor(a) / Tensor(b)).data, a / b)


def test_scalar_and_reflected_operands():
    a = RNG.normal(size=(2, 3))
    assert np.allclose((2.0 * Tensor(a)).data, 2 * a)
    assert np.allclose((1.0 - Tensor(a)).data, 1 - a)
    assert np.allclose((Tensor(a) ** 2).data, a ** 2)


@pytest.mark.parametrize("op", [
    lambda x: x.exp(),
    lambda x: x.log(),
    lambda x: x.sigmoid(),
    lambda x: x.tanh(),
    lambda x: x.sin(),
    lambda x: x.cos(),
    lambda x: x.gelu(),
    lambda x: x.sqrt(),
    lambda x: x ** 3,
    lambda x: -x,
])
def test_unary_gradients(op):
    check_unary(op, RNG.uniform(0.2, 1.5, size=(3, 5)))


def test_binary_gradients():
    a = parameter(RNG.normal(size=(3, 4)))
    b = parameter(RNG.normal(size=(3, 4)) + 2.0)
    loss = ((a * b + a / b - b) * (a + 3.0)).sum()
    backward(loss)
    fa = fd_grad(lambda: float((((Tensor(a.data) * b.data
                                  + Tensor(a.data) / b.data - b.data)
                                 * (Tensor(a.data) + 3.0)).sum()).data), a.data)
    assert np.abs(a.grad - fa).max() < 1e-7


def test_gelu_matches_exact_definition():
    from scipy.special import erf
    x = RNG.normal(size=100)
    expect = 0.5 * x * (1 + erf(x / np.sqrt(2)))
    assert np.allclose(Tensor(x).gelu().data, expect, atol=1e-12)


# -- broadcasting --------------------------------------------------------------

def test_broadcast_forward_and_grad_sums_correctly():
    a = parameter(RNG.normal(size=(4, 3)))
    b = parameter(RNG.normal(size=(3,)))
    loss = (a * b).sum()
    backward(loss)
    assert np.allclose(a.grad, np.broadcast_to(b.data, (4, 3)))
    assert np.allclose(b.grad, a.data.sum(axis=0))


def test_broadcast_keepdims_axis():
    a = parameter(RNG.normal(size=(2, 5, 3)))
    b = parameter(RNG.normal(size=(2, 5, 1)))
    loss = (a * b).sum()
    backward(loss)
    assert np.allclose(b.grad, a.data.sum(axis=-1, keepdims=True))


def test_incompatible_shapes_raise():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 4)))


# -- reductions, reshape, matmul ------------------------------------------------

def test_sum_mean_axes():
    x = parameter(RNG.normal(size=(2, 3, 4)))
    backward(x.sum(axis=1).mean())
    assert np.allclose(x.grad, np.full(x.data.shape, 1.0 / 8))


def test_reshape_transpose_roundtrip_grad():
    x = parameter(RNG.normal(size=(2, 6)))
    loss = (x.reshape(3, 4).transpose((1, 0)) * 2.0).sum()
    backward(loss)
    assert np.allclose(x.grad, 2.0)


def test_matmul_values_and_grads():
    a = parameter(RNG.normal(size=(4, 3)))
    b = parameter(RNG.normal(size=(3, 5)))
    w = RNG.normal(size=(4, 5))
    loss = (matmul(a, b) * w).sum()
    backward(loss)
    assert np.allclose(a.grad, w @ b.data.T)
    assert np.allclose(b.grad, a.data.T @ w)


def test_matmul_batched():
    a = parameter(RNG.normal(size=(2, 3, 4, 5)))
    b = parameter(RNG.normal(size=(2, 3, 5, 6)))
    out = matmul(a, b)
    assert out.shape == (2, 3, 4, 6)
    assert np.allclose(out.data, a.data @ b.data)
    backward(out.sum())
    fa = fd_grad(lambda: float((Tensor(a.data) @ b.data).sum().data), a.data)
    assert np.abs(a.grad - fa).max() < 1e-6


# -- gather / scatter / stack / unbind ------------------------------------------

def test_gather_rows():
    table = parameter(RNG.normal(size=(7, 4)))
    idx = np.array([[1, 1, 3], [0, 6, 2]])
    out = table.gather(idx)
    assert out.shape == (2, 3, 4)
    assert np.array_equal(out.data, table.data[idx])
    backward((out * 2.0).sum())
    expect = np.zeros_like(table.data)
    np.add.at(expect, idx.reshape(-1), 2.0)
    assert np.allclose(table.grad, expect)


def test_stack_unbind_inverse_and_grads():
    xs = [parameter(RNG.normal(size=(2, 3))) for _ in range(4)]
    s = stack(xs, axis=0)
    assert np.array_equal(s.data, np.stack([x.data for x in xs]))
    parts = unbind(s)
    assert len(parts) == 4
    loss = sum((i + 1.0) * p for i, p in enumerate(parts)).sum()
    backward(loss)
    for i, x in enumerate(xs):
        assert np.allclose(x.grad, i + 1.0)


def test_index_assign_grad_routes_around_overwrite():
    x = parameter(np.zeros((5, 2)))
    y = parameter(RNG.normal(size=(2,)))
    out = index_assign(x, 3, y)
    backward((out * out).sum())
    assert np.allclose(x.grad[3], 0.0)  # overwritten slot gets no gradient
    assert np.allclose(y.grad, 2 * y.data)


# -- fused softmax / cross entropy / layer norm ---------------------------------

def test_softmax_matches_manual_and_handles_neg_inf():
    x = RNG.normal(size=(2, 5))
    x[0, 3] = -np.inf
    p = softmax(Tensor(x), axis=-1).data
    assert np.allclose(p.sum(axis=-1), 1.0)
    assert p[0, 3] == 0.0


def test_softmax_grad():
    data = RNG.normal(size=(3, 4))
    w = RNG.normal(size=(3, 4))
    x = parameter(data.copy())
    backward((softmax(x, axis=-1) * w).sum())
    fd = fd_grad(lambda: float((softmax(Tensor(data), axis=-1) * w).sum().data),
                 data)
    assert np.abs(x.grad - fd).max() < 1e-7


def test_cross_entropy_matches_log_softmax():
    logits = RNG.normal(size=(2, 7, 5))
    targets = RNG.integers(0, 5, size=(2, 7))
    loss = softmax_cross_entropy(Tensor(logits), targets)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    expect = -np.take_along_axis(logp, targets[..., None], axis=-1).mean()
    assert abs(float(loss.data) - expect) < 1e-12


def test_cross_entropy_grad_and_oov_target():
    logits = RNG.normal(size=(2, 3, 4))
    targets = RNG.integers(0, 4, size=(2, 3))
    x = parameter(logits.copy())
    backward(softmax_cross_entropy(x, targets))
    fd = fd_grad(lambda: float(softmax_cross_entropy(Tensor(logits),
                                                     targets).data), logits)
    assert np.abs(x.grad - fd).max() < 1e-7
    with pytest.raises(IndexError):
        softmax_cross_entropy(Tensor(logits), np.full((2, 3), 9))


def test_layer_norm_normalizes_and_backprops():
    x = parameter(RNG.normal(size=(2, 6, 8)) * 3 + 1)
    gain = parameter(np.ones(8))
    bias = parameter(np.zeros(8))
    out = layer_norm(x, gain, bias)
    assert np.allclose(out.data.mean(axis=-1), 0.0, atol=1e-10)
    assert np.allclose(out.data.std(axis=-1), 1.0, atol=1e-3)
    w = RNG.normal(size=(2, 6, 8))
    backward((out * w).sum())
    fd = fd_grad(lambda: float((layer_norm(Tensor(x.data), Tensor(gain.data),
                                           Tensor(bias.data)) * w).sum().data),
                 x.data)
    assert np.abs(x.grad - fd).max() < 1e-5


# -- complex pairs ---------------------------------------------------------------

def np_cplx(c: CplxTensor):
    return c.numpy()


def test_cplx_arithmetic_matches_numpy_complex():
    za = RNG.normal(size=(3, 4)) + 1j * RNG.normal(size=(3, 4))
    zb = RNG.normal(size=(3, 4)) + 1j * RNG.normal(size=(3, 4))
    a, b = CplxTensor.from_complex(za), CplxTensor.from_complex(zb)
    assert np.allclose(np_cplx(a * b), za * zb)
    assert np.allclose(np_cplx(a + b), za + zb)
    assert np.allclose(np_cplx(a - b), za - zb)
    assert np.allclose(np_cplx(a.conj()), za.conj())
    assert np.allclose(np_cplx(a.reciprocal()), 1 / za)
    assert np.allclose(a.abs().data, np.abs(za))
    assert np.allclose(np_cplx(cplx_muladd(a, b, a)), za * zb + za)


def test_cplx_mul_gradients():
    shapes = dict(ar=(2, 3), ai=(2, 3), br=(2, 3), bi=(2, 3))
    arrays = {k: RNG.normal(size=s) for k, s in shapes.items()}

    def build():
        a = CplxTensor(Tensor(arrays["ar"], requires_grad=True),
                       Tensor(arrays["ai"], requires_grad=True))
        b = CplxTensor(Tensor(arrays["br"], requires_grad=True),
                       Tensor(arrays["bi"], requires_grad=True))
        out = cplx_mul(a, b)
        out2 = cplx_muladd(out, b, a)
        loss = (out2.re + 2.0 * out2.im).sum()
        return loss, {"ar": a.re, "ai": a.im, "br": b.re, "bi": b.im}

    loss, leaves = build()
    backward(loss)
    for name, leaf in leaves.items():
        fd = fd_grad(lambda: float(build()[0].data), arrays[name])
        assert np.abs(leaf.grad - fd).max() < 1e-7, name


# -- graph discipline -------------------------------------------------------------

def test_backward_requires_scalar_root():
    x = parameter(RNG.normal(size=(3,)))
    with pytest.raises(GraphError):
        backward(x * 2.0)


def test_backward_twice_raises():
    x = parameter(RNG.normal(size=(3,)))
    loss = (x * x).sum()
    backward(loss)
    with pytest.raises(GraphError):
        backward(loss)


def test_constants_collect_no_grad():
    c = constant(np.ones(3))
    x = parameter(np.ones(3))
    backward((c * x).sum())
    assert c.grad is None
    assert x.grad is not None


def test_zero_grad_allows_fresh_pass():
    x = parameter(np.array([2.0]))
    backward((x * x).sum())
    first = x.grad.copy()
    x.zero_grad()
    backward((x * x).sum())
    assert np.array_equal(x.grad, first)


def test_as_tensor_passthrough():
    t = Tensor(np.ones(2))
    assert as_tensor(t) is t
    assert isinstance(as_tensor(1.5), Tensor)
