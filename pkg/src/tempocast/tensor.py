"""Reverse-mode automatic differentiation over float64 numpy arrays.

The graph is built as operations execute (define by run). Each operation
records its parent tensors and a closure that routes the output gradient
back to them; ``Tensor.backward`` walks the graph once in reverse
topological order. Everything is float64.

Error contract: every operation checks its *output* for non-finite values
and raises NonFiniteError if any appear. Leaf tensors are exempt, so
constants such as additive attention masks or gate parameters forced to
-inf are legal inputs.
"""

import numpy as np

from .errors import MaskError, NonFiniteError, ShapeError

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def _as_f64(x):
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """A float64 array plus an optional gradient buffer and graph record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._parents = ()
        self._backward = None

    # ---- basic introspection ----

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return self.transpose()

    def item(self):
        return float(self.data)

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.data.shape, self.requires_grad)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def ensure_grad_buffer(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)

    # ---- graph construction ----

    @staticmethod
    def _result(data, parents, backward, what):
        # Non-finite outputs surface as exceptions, so numpy's own warnings
        # for the same event are redundant noise; callers compute under an
        # ignore errstate (see _quiet).
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("non-finite values in output of %s" % what)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents)
        out.grad = np.zeros_like(data) if out.requires_grad else None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar, got shape %s" % (self.data.shape,))
        if not self.requires_grad:
            return
        # Iterative post-order walk. Parents are tuples, so both the visit
        # order and the float accumulation order are identical run to run.
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad[...] = 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ---- operators ----

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def transpose(self):
        return transpose(self)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def sqrt(self):
        return sqrt(self)

    def exp(self):
        return exp(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _quiet(fn):
    with np.errstate(all="ignore"):
        return fn()


_GRAD_ENABLED = [True]


class no_grad:
    """Context manager: ops inside build no graph (pure inference)."""

    def __enter__(self):
        _GRAD_ENABLED.append(False)
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED.pop()
        return False


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _accum(p, g):
    if p.requires_grad:
        p.grad += _unbroadcast(g, p.data.shape)


# ---- arithmetic primitives ----


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._result(_quiet(lambda: a.data + b.data), (a, b), None, "add")

    def backward():
        _accum(a, out.grad)
        _accum(b, out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._result(_quiet(lambda: a.data - b.data), (a, b), None, "sub")

    def backward():
        _accum(a, out.grad)
        _accum(b, -out.grad)

    out._backward = backward if out.requires_grad else None
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._result(_quiet(lambda: a.data * b.data), (a, b), None, "mul")

    def backward():
        _accum(a, out.grad * b.data)
        _accum(b, out.grad * a.data)

    out._backward = backward if out.requires_grad else None
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor._result(_quiet(lambda: a.data / b.data), (a, b), None, "div")

    def backward():
        _accum(a, out.grad / b.data)
        _accum(b, -out.grad * a.data / (b.data * b.data))

    out._backward = backward if out.requires_grad else None
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects 2-D operands, got %s @ %s" % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dimensions differ: %s @ %s" % (a.shape, b.shape))
    out = Tensor._result(_quiet(lambda: a.data @ b.data), (a, b), None, "matmul")

    def backward():
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    out._backward = backward if out.requires_grad else None
    return out


# ---- structural primitives ----


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor, got %s" % (a.shape,))
    out = Tensor._result(a.data.T.copy(), (a,), None, "transpose")

    def backward():
        _accum(a, out.grad.T)

    out._backward = backward if out.requires_grad else None
    return out


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor._result(a.data.reshape(shape).copy(), (a,), None, "reshape")

    def backward():
        _accum(a, out.grad.reshape(a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def take(a, key):
    """Basic indexing/slicing; gradient scatter-adds into the source."""
    a = as_tensor(a)
    data = a.data[key]
    out = Tensor._result(np.array(data, dtype=np.float64), (a,), None, "take")

    def backward():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, key, out.grad)
            a.grad += g

    out._backward = backward if out.requires_grad else None
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    out = Tensor._result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), None, "concat")

    def backward():
        offset = 0
        for t in tensors:
            n = t.data.shape[axis]
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(offset, offset + n)
            _accum(t, out.grad[tuple(idx)])
            offset += n

    out._backward = backward if out.requires_grad else None
    return out


# ---- reductions ----


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor._result(a.data.sum(axis=axis, keepdims=keepdims), (a,), None, "sum")

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    out._backward = backward if out.requires_grad else None
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor._result(a.data.mean(axis=axis, keepdims=keepdims), (a,), None, "mean")
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    out._backward = backward if out.requires_grad else None
    return out


# ---- elementwise nonlinearities ----


def sqrt(a):
    a = as_tensor(a)
    out = Tensor._result(_quiet(lambda: np.sqrt(a.data)), (a,), None, "sqrt")

    def backward():
        _accum(a, out.grad * 0.5 / out.data)

    out._backward = backward if out.requires_grad else None
    return out


def exp(a):
    a = as_tensor(a)
    out = Tensor._result(_quiet(lambda: np.exp(a.data)), (a,), None, "exp")

    def backward():
        _accum(a, out.grad * out.data)

    out._backward = backward if out.requires_grad else None
    return out


def _sigmoid_stable(x):
    # Two-branch form: never exponentiates a large positive argument, and
    # sigmoid(-inf) comes out exactly 0.0 (exp(-inf) == 0.0).
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(a):
    a = as_tensor(a)
    out = Tensor._result(_sigmoid_stable(a.data), (a,), None, "sigmoid")

    def backward():
        _accum(a, out.grad * out.data * (1.0 - out.data))

    out._backward = backward if out.requires_grad else None
    return out


def gelu(a):
    """Gaussian error linear unit, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + _GELU_A * x ** 3)
    t = np.tanh(inner)
    out = Tensor._result(0.5 * x * (1.0 + t), (a,), None, "gelu")

    def backward():
        dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
        _accum(a, out.grad * local)

    out._backward = backward if out.requires_grad else None
    return out


# ---- softmax and layer norm ----


def softmax_rows(a, mask=None):
    """Row-wise softmax over the last axis of a 2-D tensor.

    ``mask`` is an additive numpy array (0 for visible, -inf for blocked)
    applied to the logits before normalization; it is a constant, not a
    differentiable input. Masked positions come out exactly 0.0. A row with
    every position masked raises MaskError.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor, got %s" % (a.shape,))
    z = a.data if mask is None else a.data + np.asarray(mask, dtype=np.float64)
    # The max is taken after masking, so masked logits are already -inf and
    # can never set the row max.
    zmax = z.max(axis=1, keepdims=True)
    if np.isneginf(zmax).any():
        raise MaskError("softmax row has no unmasked position")
    e = np.exp(z - zmax)
    y = e / e.sum(axis=1, keepdims=True)
    out = Tensor._result(y, (a,), None, "softmax_rows")

    def backward():
        g = out.grad
        dot = (g * y).sum(axis=1, keepdims=True)
        _accum(a, y * (g - dot))

    out._backward = backward if out.requires_grad else None
    return out


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalize each row to zero mean / unit variance, then scale and shift.

    Composite of existing primitives (population variance, eps inside the
    square root), so its gradient needs no dedicated rule.
    """
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    std = sqrt(add(var, eps))
    return add(mul(div(centered, std), gain), bias)
