"""Dense float64 tensors with reverse-mode differentiation.

Every operation records its parents and a closure that pushes the output
gradient back to them.  Only nodes that (transitively) depend on a tensor
with ``requires_grad=True`` are recorded, so inference builds no graph.

Gradient policy: :meth:`Tensor.backward` clears the gradient of every node
reachable from the loss before propagating, so calling it twice on the same
graph yields the same gradients rather than doubling them.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .errors import ContractError, NumericalDomainError, ShapeError

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _op=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self._op = _op

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def backward(self):
        """Populate ``.grad`` on every reachable node requiring gradients."""
        if self.data.size != 1:
            raise ContractError(
                f"backward() needs a scalar loss, got shape {self.shape}"
            )
        order = _topological_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _accumulate(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        # leaves own their buffer (optimisers mutate it); interior nodes may alias
        node.grad = np.array(g, copy=True) if node._backward is None else g
    else:
        node.grad = node.grad + g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _result(data, parents, op, backward):
    requires = any(p.requires_grad for p in parents)
    if not requires:
        return Tensor(data)
    out = Tensor(data, requires_grad=True, _parents=parents, _op=op)
    out._backward = backward
    return out


# elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), "add", backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), "sub", backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), "mul", backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), "div", backward)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)

    def backward(g):
        _accumulate(x, g * y)

    return _result(y, (x,), "exp", backward)


def log(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NumericalDomainError("log of a non-positive value")

    def backward(g):
        _accumulate(x, g / x.data)

    return _result(np.log(x.data), (x,), "log", backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), "relu", backward)


def gelu(x):
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        _accumulate(x, g * (cdf + x.data * pdf))

    return _result(x.data * cdf, (x,), "gelu", backward)


# reductions and shape ---------------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), "sum", backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g / count, x.shape))

    return _result(x.data.mean(axis=axis, keepdims=keepdims), (x,), "mean", backward)


def reshape(x, shape):
    x = as_tensor(x)

    def backward(g):
        _accumulate(x, g.reshape(x.shape))

    return _result(x.data.reshape(shape), (x,), "reshape", backward)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(x, g.transpose(inverse))

    return _result(x.data.transpose(axes), (x,), "transpose", backward)


# linear algebra -------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                # fold the leading axes of a into rows: one GEMM, no temporaries
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            _accumulate(b, gb)

    return _result(a.data @ b.data, (a, b), "matmul", backward)


# fused neural-network kernels -----------------------------------------------

def _softmax_np(z, axis=-1):
    shifted = z - z.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    e /= e.sum(axis=axis, keepdims=True)
    return e


def _log_softmax_np(z, axis=-1):
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x, axis=-1):
    """Softmax along ``axis`` with max-subtraction."""
    x = as_tensor(x)
    y = _softmax_np(x.data, axis)

    def backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), "softmax", backward)


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    y = _log_softmax_np(x.data, axis)

    def backward(g):
        _accumulate(x, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _result(y, (x,), "log_softmax", backward)


def layer_norm(x, gamma, beta, eps=1e-9):
    """Normalise the last axis to zero mean / unit variance, then rescale."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, _unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            _accumulate(beta, _unbroadcast(g, beta.shape))
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = inv_std * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accumulate(x, dx)

    return _result(xhat * gamma.data + beta.data, (x, gamma, beta), "layer_norm", backward)


def dropout(x, p, rng, train=True):
    """Inverted dropout; identity when ``train`` is false or ``p == 0``."""
    x = as_tensor(x)
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in train mode needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        _accumulate(x, g * mask)

    return _result(x.data * mask, (x,), "dropout", backward)


def smoothed_cross_entropy_logits(logits, labels, epsilon=0.1):
    """Label-smoothed cross-entropy of ``logits`` (N x K) against int labels.

    Fused log-softmax path; the gradient w.r.t. the logits is
    ``(softmax(logits) - target) / N``.
    """
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(
            f"expected logits (N, K) and N labels, got {logits.shape} and {labels.shape}"
        )
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k - 1}]")
    if not 0.0 <= epsilon < 1.0:
        raise ContractError(f"epsilon must lie in [0, 1), got {epsilon}")
    target = np.full((n, k), epsilon / k)
    target[np.arange(n), labels] += 1.0 - epsilon
    logp = _log_softmax_np(logits.data)
    loss = -(target * logp).sum() / n

    def backward(g):
        _accumulate(logits, g * (np.exp(logp) - target) / n)

    return _result(np.asarray(loss), (logits,), "smoothed_ce", backward)


def smoothed_cross_entropy(probs, labels, epsilon=0.1):
    """Label-smoothed cross-entropy evaluated directly on probabilities.

    ``-(1/N) sum_j sum_k [(1 - eps) 1{y_j = k} + eps/K] log p_jk``.  Used as a
    reference evaluator; training goes through
    :func:`smoothed_cross_entropy_logits`.
    """
    probs = np.asarray(probs.data if isinstance(probs, Tensor) else probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ShapeError(
            f"expected probs (N, K) and N labels, got {probs.shape} and {labels.shape}"
        )
    n, k = probs.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k - 1}]")
    target = np.full((n, k), epsilon / k)
    target[np.arange(n), labels] += 1.0 - epsilon
    live = target > 0
    if np.any(probs[live] <= 0):
        raise NumericalDomainError("probability <= 0 where the target weight is nonzero")
    logp = np.zeros_like(probs)
    logp[live] = np.log(probs[live])
    return float(-(target * logp).sum() / n)
