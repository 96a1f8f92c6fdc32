"""Dense float64 tensors with recorded reverse-mode differentiation.

Each forward pass builds a fresh computation graph; backward() walks it once,
accumulates gradients into the participating leaves, and frees the graph.
Conventions baked in here:

- all internal computation is float64 (checkpoints may store float32),
- the ReLU subgradient at exactly 0 is 0,
- detach() produces a gradient boundary sharing the same storage,
- gradients accumulate additively across uses and across backward calls
  (callers zero grads between optimizer steps).
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteTensorError


def _as_array(value) -> np.ndarray:
    return np.asarray(value, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._grad_fn = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"expected a scalar tensor, got shape {self.shape}")

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph management ----------------------------------------------------

    def detach(self) -> "Tensor":
        """Gradient boundary: same storage, no graph, no grad tracking."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.grad = None
        out.requires_grad = False
        out._parents = ()
        out._grad_fn = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def validate(self) -> None:
        """Raise NonFiniteTensorError on NaN/Inf values or mismatched grad."""
        if not np.isfinite(self.data).all():
            raise NonFiniteTensorError(f"tensor of shape {self.shape} contains NaN/Inf")
        if self.grad is not None and self.grad.shape != self.data.shape:
            raise ValueError("grad shape does not match tensor shape")

    def backward(self) -> None:
        """Populate grads of all participating tensors with d(self)/d(tensor).

        self must be a scalar. Every node on the path is checked for
        finiteness; the recorded graph is freed afterwards.
        """
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar root, got shape {self.shape}")
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        for node in order:
            if not np.isfinite(node.data).all():
                raise NonFiniteTensorError("computation graph contains non-finite values")

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            fn = node._grad_fn
            if fn is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if parent.requires_grad and g is not None:
                    # never mutate in place: g may alias another node's buffer
                    parent.grad = g if parent.grad is None else parent.grad + g
            node._grad_fn = None
            node._parents = ()
            node.grad = None

    # -- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def softplus(self):
        return softplus(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)

    def clamp(self, lo, hi):
        return clamp(self, lo, hi)


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: tuple, grad_fn) -> Tensor:
    """Build an op-result tensor; record the graph only when grads may flow."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


# -- elementwise and reduction primitives -------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    ash, bsh = a.shape, b.shape
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    ash, bsh = a.shape, b.shape
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    return _node(ad / bd, (a, b),
                 lambda g: (_unbroadcast(g / bd, ad.shape),
                            _unbroadcast(-g * ad / (bd * bd), bd.shape)))


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    if not isinstance(exponent, (int, float)):
        raise TypeError("power exponent must be a plain number")
    ad = a.data
    return _node(ad ** exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _node(np.log(ad), (a,), lambda g: (g / ad,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # derivative at exactly 0 is 0
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    ad = a.data
    out = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))),
                   np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    ad = a.data
    out = np.log1p(np.exp(-np.abs(ad))) + np.maximum(ad, 0.0)
    sig = 1.0 / (1.0 + np.exp(-np.abs(ad)))
    sig = np.where(ad >= 0, sig, 1.0 - sig)
    return _node(out, (a,), lambda g: (g * sig,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ash = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis if isinstance(axis, tuple) else (axis,))
        return (np.broadcast_to(g, ash).copy(),)

    return _node(np.asarray(out, dtype=np.float64), (a,), grad_fn)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    ash = a.shape
    count = a.size if axis is None else np.prod(
        [ash[i] for i in (axis if isinstance(axis, tuple) else (axis,))])
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis if isinstance(axis, tuple) else (axis,))
        return (np.broadcast_to(g / count, ash).copy(),)

    return _node(np.asarray(out, dtype=np.float64), (a,), grad_fn)


def reshape(a: Tensor, shape) -> Tensor:
    ash = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(ash),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(sizes)))

    return _node(out, tuple(tensors), grad_fn)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    ash = a.shape

    def grad_fn(g):
        full = np.zeros(ash)
        full[idx] = g
        return (full,)

    return _node(a.data[idx].copy(), (a,), grad_fn)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    ad = a.data
    m = ad.max(axis=axis, keepdims=True)
    shifted = ad - m
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def grad_fn(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), grad_fn)


# -- 2-D convolution primitives ------------------------------------------------


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(B,C,H,W) -> (B, Ho*Wo, C*kh*kw) patch matrix plus output spatial dims."""
    b, c, h, w = x.shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(cols: np.ndarray, out_shape, kh: int, kw: int, stride: int, pad: int,
            grid_h: int, grid_w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back onto the image grid."""
    b, c, h, w = out_shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    cols = cols.reshape(b, grid_h, grid_w, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * grid_h:stride, j:j + stride * grid_w:stride] += cols[:, :, :, :, i, j]
    if pad:
        out = out[:, :, pad:pad + h, pad:pad + w]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 2, padding: int = 1) -> Tensor:
    """x (B,Cin,H,W), weight (Cout,Cin,kh,kw), bias (Cout,)."""
    b, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv2d channel mismatch: {cin} vs {cin_w}")
    cols, ho, wo = _im2col(x.data, kh, kw, stride, padding)
    w2 = weight.data.reshape(cout, cin * kh * kw).T
    out = cols @ w2
    if bias is not None:
        out = out + bias.data
    out = out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)
    xsh, wsh = x.shape, weight.shape
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(b, ho * wo, cout)
        grad_w = np.tensordot(cols, g2, axes=([0, 1], [0, 1]))  # (C*kh*kw, Cout)
        grad_w = grad_w.T.reshape(wsh)
        grad_cols = g2 @ w2.T
        grad_x = _col2im(grad_cols, xsh, kh, kw, stride, padding, ho, wo)
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, g2.sum(axis=(0, 1))

    return _node(np.ascontiguousarray(out), parents, grad_fn)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     stride: int = 2, padding: int = 1) -> Tensor:
    """x (B,Cin,H,W), weight (Cin,Cout,kh,kw); output (B,Cout,(H-1)s-2p+kh,...)."""
    b, cin, h, w = x.shape
    cin_w, cout, kh, kw = weight.shape
    if cin != cin_w:
        raise ValueError(f"conv_transpose2d channel mismatch: {cin} vs {cin_w}")
    ho = (h - 1) * stride - 2 * padding + kh
    wo = (w - 1) * stride - 2 * padding + kw
    x2 = x.data.transpose(0, 2, 3, 1).reshape(b, h * w, cin)
    v2 = weight.data.reshape(cin, cout * kh * kw)
    cols = x2 @ v2
    out = _col2im(cols, (b, cout, ho, wo), kh, kw, stride, padding, h, w)
    if bias is not None:
        out = out + bias.data.reshape(1, cout, 1, 1)
    wsh = weight.shape
    parents = (x, weight) if bias is None else (x, weight, bias)

    def grad_fn(g):
        # _im2col of the output grid visits exactly the scatter positions
        gcols, _, _ = _im2col(g, kh, kw, stride, padding)
        grad_x = (gcols @ v2.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2)
        grad_w = np.tensordot(x2, gcols, axes=([0, 1], [0, 1])).reshape(wsh)
        if bias is None:
            return grad_x, grad_w
        return grad_x, grad_w, g.sum(axis=(0, 2, 3))

    return _node(out, parents, grad_fn)
