"""Minimal dense-tensor engine with reverse-mode autodiff.

Everything is float64. Complex values are carried as pairs of real
tensors (CplxTensor), so a single real-valued reverse pass differentiates
the whole model. Binary ops broadcast like numpy; the backward pass sums
gradients over any broadcast axes, which covers the leading-axes case
(bias against a batched activation) the library contract requires.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class GraphError(RuntimeError):
    """Raised on misuse of the differentiation graph."""


def _broadcast_shape(sa, sb):
    """Validate operand shapes; raise a ShapeError naming both on mismatch."""
    try:
        return np.broadcast_shapes(sa, sb)
    except ValueError:
        raise ShapeError(f"shapes {tuple(sa)} and {tuple(sb)} do not broadcast") from None


def _unbroadcast(grad, shape):
    """Sum grad over the axes added or stretched by broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    kept = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if kept:
        grad = grad.sum(axis=kept, keepdims=True)
    return grad


class Tensor:
    """Node in the reverse-mode differentiation graph.

    `data` is a float64 ndarray; `grad`, once populated, has the same
    shape. Calling backward() twice on the same root raises; callers
    zero grads explicitly between passes.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn",
                 "_backward_done")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self._parents)
        self.requires_grad = requires_grad
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if g.shape != self.data.shape:
            g = _unbroadcast(g, self.data.shape).reshape(self.data.shape)
        if self.grad is None:
            self.grad = np.array(g)
        else:
            self.grad = self.grad + g

    def zero_grad(self):
        self.grad = None

    # -- elementwise arithmetic ------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            _broadcast_shape(self.data.shape, other.data.shape)
        out = Tensor(self.data + other.data, (self, other))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad)
            if other.requires_grad:
                other._accumulate(out.grad)
        out._backward_fn = bwd
        return out

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            _broadcast_shape(self.data.shape, other.data.shape)
        out = Tensor(self.data - other.data, (self, other))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad)
            if other.requires_grad:
                other._accumulate(-out.grad)
        out._backward_fn = bwd
        return out

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            _broadcast_shape(self.data.shape, other.data.shape)
        out = Tensor(self.data * other.data, (self, other))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad * other.data)
            if other.requires_grad:
                other._accumulate(out.grad * self.data)
        out._backward_fn = bwd
        return out

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor(-self.data, (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(-out.grad)
        out._backward_fn = bwd
        return out

    def __truediv__(self, other):
        other = as_tensor(other)
        if self.data.shape != other.data.shape:
            _broadcast_shape(self.data.shape, other.data.shape)
        out = Tensor(self.data / other.data, (self, other))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad / other.data)
            if other.requires_grad:
                other._accumulate(-out.grad * self.data / (other.data * other.data))
        out._backward_fn = bwd
        return out

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise ShapeError("pow supports scalar exponents only")
        out = Tensor(self.data ** exponent, (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad * exponent * self.data ** (exponent - 1))
        out._backward_fn = bwd
        return out

    # -- elementwise functions -------------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data), (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad * out.data)
        out._backward_fn = bwd
        return out

    def log(self):
        out = Tensor(np.log(self.data), (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad / self.data)
        out._backward_fn = bwd
        return out

    def sigmoid(self):
        s = 1.0 / (1.0 + np.exp(-self.data))
        out = Tensor(s, (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad * s * (1.0 - s))
        out._backward_fn = bwd
        return out

    def tanh(self):
        t = np.tanh(self.data)
        out = Tensor(t, (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad * (1.0 - t * t))
        out._backward_fn = bwd
        return out

    def sin(self):
        out = Tensor(np.sin(self.data), (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad * np.cos(self.data))
        out._backward_fn = bwd
        return out

    def cos(self):
        out = Tensor(np.cos(self.data), (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(-out.grad * np.sin(self.data))
        out._backward_fn = bwd
        return out

    def gelu(self):
        x = self.data
        cdf = 0.5 * (1.0 + erf(x / _SQRT2))
        out = Tensor(x * cdf, (self,))

        def bwd():
            if self.requires_grad:
                pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
                self._accumulate(out.grad * (cdf + x * pdf))
        out._backward_fn = bwd
        return out

    def sqrt(self):
        return self ** 0.5

    # -- shape manipulation ------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape
        out = Tensor(self.data.reshape(shape), (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad.reshape(old))
        out._backward_fn = bwd
        return out

    def transpose(self, axes):
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))
        out = Tensor(self.data.transpose(axes), (self,))

        def bwd():
            if self.requires_grad:
                self._accumulate(out.grad.transpose(inv))
        out._backward_fn = bwd
        return out

    def gather(self, indices):
        """Select rows along axis 0 by an integer index array."""
        idx = np.asarray(indices)
        out = Tensor(np.take(self.data, idx, axis=0), (self,))

        def bwd():
            if self.requires_grad:
                g = np.zeros_like(self.data)
                np.add.at(g, idx, out.grad)
                self._accumulate(g)
        out._backward_fn = bwd
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,))
        shape = self.data.shape

        def bwd():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(g, shape))
        out._backward_fn = bwd
        return out

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            n = self.data.size
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- linear algebra ----------------------------------------------------

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=False)


def constant(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=False)


def parameter(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with leading-axes broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(np.matmul(a.data, b.data), (a, b))

    def bwd():
        g = out.grad
        if a.requires_grad:
            a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))
    out._backward_fn = bwd
    return out


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors))

    def bwd():
        gs = np.moveaxis(out.grad, axis, 0)
        for t, g in zip(tensors, gs):
            if t.requires_grad:
                t._accumulate(g)
    out._backward_fn = bwd
    return out


def unbind(x: Tensor):
    """Split along axis 0 into views; inverse of stack(..., axis=0).

    All slices accumulate into one shared grad buffer on x, which keeps
    the backward pass O(1) allocations per slice.
    """
    x = as_tensor(x)

    def make(i):
        out = Tensor(x.data[i], (x,))

        def bwd():
            if x.requires_grad and out.grad is not None:
                if x.grad is None:
                    x.grad = np.zeros_like(x.data)
                x.grad[i] += out.grad
        out._backward_fn = bwd
        return out

    return [make(i) for i in range(x.data.shape[0])]


def index_assign(base: Tensor, indices, values: Tensor) -> Tensor:
    """Functional row replacement along axis 0: out = base with out[indices] = values."""
    idx = np.asarray(indices)
    values = as_tensor(values)
    data = base.data.copy()
    data[idx] = values.data
    out = Tensor(data, (base, values))

    def bwd():
        if base.requires_grad:
            g = out.grad.copy()
            g[idx] = 0.0
            base._accumulate(g)
        if values.requires_grad:
            values._accumulate(out.grad[idx])
    out._backward_fn = bwd
    return out


def elementwise(op_tag: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Tag-dispatched elementwise op; binary tags require a second operand."""
    a = as_tensor(a)
    unary = {"neg": Tensor.__neg__, "exp": Tensor.exp, "log": Tensor.log,
             "sigmoid": Tensor.sigmoid, "tanh": Tensor.tanh}
    binary = {"add": Tensor.__add__, "sub": Tensor.__sub__, "mul": Tensor.__mul__}
    if op_tag in unary:
        if b is not None:
            raise ValueError(f"{op_tag} is unary")
        return unary[op_tag](a)
    if op_tag in binary:
        if b is None:
            raise ValueError(f"{op_tag} needs two operands")
        return binary[op_tag](a, as_tensor(b))
    raise ValueError(f"unknown op tag {op_tag!r}")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered * ((var + eps) ** -0.5)
    return normed * gain + bias


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; -inf entries get exactly zero weight."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, (x,))

    def bwd():
        if x.requires_grad:
            g = out.grad
            dot = (g * p).sum(axis=axis, keepdims=True)
            x._accumulate((g - dot) * p)
    out._backward_fn = bwd
    return out


def softmax_cross_entropy(logits: Tensor, targets, ignore_index=None) -> Tensor:
    """Mean negative log-likelihood over non-ignored positions.

    logits: (..., vocab); targets: integer array of the leading shape.
    """
    logits = as_tensor(logits)
    tgt = np.asarray(targets)
    vocab = logits.shape[-1]
    if tgt.shape != logits.shape[:-1]:
        raise ShapeError(f"targets shape {tgt.shape} does not match "
                         f"logits leading shape {logits.shape[:-1]}")
    if ignore_index is None:
        valid = np.ones(tgt.shape, dtype=bool)
    else:
        valid = tgt != ignore_index
    safe_tgt = np.where(valid, tgt, 0)
    if safe_tgt.min() < 0 or safe_tgt.max() >= vocab:
        raise IndexError(f"target id out of range for vocab {vocab}")
    n_valid = int(valid.sum())
    if n_valid == 0:
        raise ValueError("all positions ignored")

    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=-1, keepdims=True)) + zmax
    picked = np.take_along_axis(z, safe_tgt[..., None], axis=-1)
    nll = (lse[..., 0] - picked[..., 0]) * valid
    out = Tensor(nll.sum() / n_valid, (logits,))

    def bwd():
        if logits.requires_grad:
            p = ez / ez.sum(axis=-1, keepdims=True)
            onehot = np.zeros_like(p)
            np.put_along_axis(onehot, safe_tgt[..., None], 1.0, axis=-1)
            g = (p - onehot) * valid[..., None] / n_valid
            logits._accumulate(out.grad * g)
    out._backward_fn = bwd
    return out


def backward(root: Tensor):
    """Reverse pass from a scalar root; populates grad on reachable leaves."""
    if root.data.size != 1:
        raise GraphError(f"backward root must be scalar, got shape {root.shape}")
    if root._backward_done:
        raise GraphError("backward already ran on this graph; rebuild the graph "
                         "or zero grads and recompute the forward pass")
    root._backward_done = True

    # Iterative topological order over nodes that require grad.
    topo, visited = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, processed = stack_.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack_.append((p, False))

    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward_fn is not None and node.grad is not None:
            node._backward_fn()


# -- complex values as pairs of real tensors -------------------------------

class CplxTensor:
    """Complex tensor as (re, im) real tensors of identical shape."""

    __slots__ = ("re", "im")

    def __init__(self, re: Tensor, im: Tensor):
        re, im = as_tensor(re), as_tensor(im)
        if re.shape != im.shape:
            raise ShapeError(f"re shape {re.shape} != im shape {im.shape}")
        self.re = re
        self.im = im

    @classmethod
    def from_complex(cls, z, requires_grad=False):
        z = np.asarray(z, dtype=np.complex128)
        return cls(Tensor(z.real.copy(), requires_grad=requires_grad),
                   Tensor(z.imag.copy(), requires_grad=requires_grad))

    @classmethod
    def from_real(cls, re: Tensor):
        re = as_tensor(re)
        return cls(re, constant(np.zeros(re.shape)))

    def numpy(self):
        return self.re.data + 1j * self.im.data

    @property
    def shape(self):
        return self.re.shape

    def __add__(self, other):
        return CplxTensor(self.re + other.re, self.im + other.im)

    def __sub__(self, other):
        return CplxTensor(self.re - other.re, self.im - other.im)

    def __mul__(self, other):
        return cplx_mul(self, other)

    def conj(self):
        return CplxTensor(self.re, -self.im)

    def abs(self) -> Tensor:
        return (self.re * self.re + self.im * self.im).sqrt()

    def reciprocal(self):
        d = self.re * self.re + self.im * self.im
        return CplxTensor(self.re / d, -self.im / d)

    def gather(self, indices):
        return CplxTensor(self.re.gather(indices), self.im.gather(indices))

    def transpose(self, axes):
        return CplxTensor(self.re.transpose(axes), self.im.transpose(axes))

    def reshape(self, *shape):
        return CplxTensor(self.re.reshape(*shape), self.im.reshape(*shape))


def cplx_mul(a: CplxTensor, b: CplxTensor) -> CplxTensor:
    """(a.re + i a.im)(b.re + i b.im), differentiable through both parts.

    Fused: one graph node per output component instead of six, which
    matters inside the scan tree.
    """
    ar, ai, br, bi = a.re, a.im, b.re, b.im
    parents = (ar, ai, br, bi)
    out_re = Tensor(ar.data * br.data - ai.data * bi.data, parents)
    out_im = Tensor(ar.data * bi.data + ai.data * br.data, parents)

    def bwd_re():
        g = out_re.grad
        if ar.requires_grad:
            ar._accumulate(g * br.data)
        if ai.requires_grad:
            ai._accumulate(-g * bi.data)
        if br.requires_grad:
            br._accumulate(g * ar.data)
        if bi.requires_grad:
            bi._accumulate(-g * ai.data)
    out_re._backward_fn = bwd_re

    def bwd_im():
        g = out_im.grad
        if ar.requires_grad:
            ar._accumulate(g * bi.data)
        if ai.requires_grad:
            ai._accumulate(g * br.data)
        if br.requires_grad:
            br._accumulate(g * ai.data)
        if bi.requires_grad:
            bi._accumulate(g * ar.data)
    out_im._backward_fn = bwd_im
    return CplxTensor(out_re, out_im)


def cplx_muladd(x: CplxTensor, y: CplxTensor, z: CplxTensor) -> CplxTensor:
    """Fused x*y + z for complex tensors (the scan combine's input-term rule)."""
    xr, xi, yr, yi, zr, zi = x.re, x.im, y.re, y.im, z.re, z.im
    out_re = Tensor(xr.data * yr.data - xi.data * yi.data + zr.data,
                    (xr, xi, yr, yi, zr))
    out_im = Tensor(xr.data * yi.data + xi.data * yr.data + zi.data,
                    (xr, xi, yr, yi, zi))

    def bwd_re():
        g = out_re.grad
        if xr.requires_grad:
            xr._accumulate(g * yr.data)
        if xi.requires_grad:
            xi._accumulate(-g * yi.data)
        if yr.requires_grad:
            yr._accumulate(g * xr.data)
        if yi.requires_grad:
            yi._accumulate(-g * xi.data)
        if zr.requires_grad:
            zr._accumulate(g)
    out_re._backward_fn = bwd_re

    def bwd_im():
        g = out_im.grad
        if xr.requires_grad:
            xr._accumulate(g * yi.data)
        if xi.requires_grad:
            xi._accumulate(g * yr.data)
        if yr.requires_grad:
            yr._accumulate(g * xi.data)
        if yi.requires_grad:
            yi._accumulate(g * xr.data)
        if zi.requires_grad:
            zi._accumulate(g)
    out_im._backward_fn = bwd_im
    return CplxTensor(out_re, out_im)


def cplx_index_assign(base: CplxTensor, indices, values: CplxTensor) -> CplxTensor:
    return CplxTensor(index_assign(base.re, indices, values.re),
                      index_assign(base.im, indices, values.im))
