"""Reverse-mode autodiff over numpy arrays, plus Adam and a gradient checker.

Small tape-based engine: every op builds an output Tensor holding a closure
that routes gradients to its parents. Training runs in float32; the gradient
checker runs the same graph code in float64. Dtype always follows the operand
arrays, never a global switch.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeMismatch

__all__ = [
    "Tensor",
    "add",
    "scale",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "gather_rows",
    "put_rows",
    "softmax",
    "masked_softmax",
    "layer_norm",
    "gelu",
    "cross_entropy_sum",
    "bce_with_logits_sum",
    "Adam",
    "linear_lr",
    "grad_check",
]


class Tensor:
    """Array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar, got shape {self.shape}")
        order = _topo_order(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, name={self.name!r})"


def _topo_order(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _needs_grad(parents):
    return any(p.requires_grad or p._parents for p in parents)


def _make(data, parents, backward):
    out = Tensor(data)
    if _needs_grad(parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if not (t.requires_grad or t._parents):
        return
    if t.grad is None:
        t.grad = np.array(g, copy=True)
    else:
        t.grad += g


def _unbroadcast(g, shape):
    # Reduce a broadcast gradient back to the operand's shape.
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeMismatch(f"mixed dtypes {dt} and {t.data.dtype}")
    return dt


def add(a, b):
    _same_dtype(a, b)
    data = a.data + b.data

    def backward(dout):
        _accum(a, _unbroadcast(dout, a.data.shape))
        _accum(b, _unbroadcast(dout, b.data.shape))

    return _make(data, (a, b), backward)


def scale(a, c):
    """Multiply by a python scalar."""
    data = a.data * c

    def backward(dout):
        _accum(a, dout * c)

    return _make(data, (a,), backward)


def matmul(a, b):
    """2D (m,k)@(k,n) or batched 3D (B,m,k)@(B,k,n); no batch broadcasting."""
    _same_dtype(a, b)
    ad, bd = a.data, b.data
    if ad.ndim == 3 or bd.ndim == 3:
        if ad.ndim != 3 or bd.ndim != 3 or ad.shape[0] != bd.shape[0]:
            raise ShapeMismatch(f"bad batched matmul {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(f"inner dims differ: {ad.shape} @ {bd.shape}")
    data = ad @ bd

    def backward(dout):
        if ad.ndim == 3:
            _accum(a, dout @ bd.transpose(0, 2, 1))
            _accum(b, ad.transpose(0, 2, 1) @ dout)
        else:
            _accum(a, dout @ bd.T)
            _accum(b, ad.T @ dout)

    return _make(data, (a, b), backward)


def transpose(a, axes):
    axes = tuple(axes)
    inv = tuple(int(i) for i in np.argsort(axes))
    data = a.data.transpose(axes)

    def backward(dout):
        _accum(a, dout.transpose(inv))

    return _make(data, (a,), backward)


def reshape(a, shape):
    src = a.data.shape
    data = a.data.reshape(shape)

    def backward(dout):
        _accum(a, dout.reshape(src))

    return _make(data, (a,), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    _same_dtype(*tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(dout):
        for t, piece in zip(tensors, np.split(dout, splits, axis=axis)):
            _accum(t, piece)

    return _make(data, tuple(tensors), backward)


def gather_rows(a, idx):
    """Select rows a[idx]; duplicate indices accumulate gradient."""
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]

    def backward(dout):
        if a.requires_grad or a._parents:
            g = np.zeros_like(a.data)
            np.add.at(g, idx, dout)
            _accum(a, g)

    return _make(data, (a,), backward)


def put_rows(x, idx, n):
    """Scatter rows of x into a zero (n, d) array at unique positions idx."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(np.unique(idx)) != len(idx):
        raise ShapeMismatch("put_rows needs unique target rows")
    data = np.zeros((n,) + x.data.shape[1:], dtype=x.data.dtype)
    data[idx] = x.data

    def backward(dout):
        _accum(x, dout[idx])

    return _make(data, (x,), backward)


def softmax(scores):
    """Row-wise softmax over the last axis of a (k, n, n) array."""
    probs = kernels.softmax_fwd(scores.data)

    def backward(dout):
        _accum(scores, kernels.softmax_bwd(probs, dout))

    return _make(probs, (scores,), backward)


def masked_softmax(scores, mask):
    """Softmax with hard visibility: weights at mask==0 are exactly zero.

    `mask` is a constant (n, n) uint8 array shared across the k score heads.
    """
    kernels.check_mask(mask)
    if scores.data.shape[-2:] != mask.shape:
        raise ShapeMismatch(f"scores {scores.data.shape} vs mask {mask.shape}")
    probs = kernels.masked_softmax_fwd(scores.data, mask)

    def backward(dout):
        # Masked positions hold prob 0, so the kernel already routes zero
        # gradient there; no extra masking needed.
        _accum(scores, kernels.softmax_bwd(probs, dout))

    return _make(probs, (scores,), backward)


def layer_norm(x, gamma, beta, eps=1e-12):
    _same_dtype(x, gamma, beta)
    y, mean, rstd = kernels.layer_norm_fwd(x.data, gamma.data, beta.data, eps)

    def backward(dout):
        dx, dgamma, dbeta = kernels.layer_norm_bwd(x.data, gamma.data, mean, rstd, dout)
        _accum(x, dx)
        _accum(gamma, dgamma)
        _accum(beta, dbeta)

    return _make(y, (x, gamma, beta), backward)


def gelu(x):
    y = kernels.gelu_fwd(x.data)

    def backward(dout):
        _accum(x, kernels.gelu_bwd(x.data, dout))

    return _make(y, (x,), backward)


def cross_entropy_sum(logits, targets):
    """Sum of -log softmax(logits)[i, targets[i]] over rows.

    Returned as a 0-d tensor; the gradient is the classic softmax-minus-onehot.
    """
    targets = np.asarray(targets, dtype=np.int64)
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    ez = np.exp(z - m)
    denom = ez.sum(axis=1, keepdims=True)
    logp = (z - m) - np.log(denom)
    rows = np.arange(z.shape[0])
    loss = -logp[rows, targets].sum(dtype=z.dtype)

    def backward(dout):
        g = ez / denom
        g[rows, targets] -= 1.0
        _accum(logits, g * dout)

    return _make(np.asarray(loss, dtype=z.dtype), (logits,), backward)


def bce_with_logits_sum(logits, labels):
    """Sum of binary cross-entropy with a numerically safe formulation."""
    y = np.asarray(labels, dtype=logits.data.dtype)
    x = logits.data
    if x.shape != y.shape:
        raise ShapeMismatch(f"logits {x.shape} vs labels {y.shape}")
    # max(x,0) - x*y + log(1 + exp(-|x|)) is exact and never overflows
    loss = (np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))).sum(dtype=x.dtype)

    def backward(dout):
        sig = 1.0 / (1.0 + np.exp(-x))
        _accum(logits, (sig - y) * dout)

    return _make(np.asarray(loss, dtype=x.dtype), (logits,), backward)


# ---------------------------------------------------------------------------
# optimization


def linear_lr(lr0, step, total_steps):
    """Linearly decayed rate: full at step 0, zero from total_steps onward."""
    return lr0 * max(0.0, 1.0 - step / total_steps)


class Adam:
    """Adam with bias correction and a linear decay schedule.

    The epsilon term is added outside the square root. Moments live in the
    parameter dtype; all updates run through the active kernel backend.
    """

    def __init__(self, params, lr0, total_steps, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.lr0 = float(lr0)
        self.total_steps = int(total_steps)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.steps_done = 0
        self.m = [np.zeros(p.data.size, dtype=p.data.dtype) for p in self.params]
        self.v = [np.zeros(p.data.size, dtype=p.data.dtype) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        lr = linear_lr(self.lr0, self.steps_done, self.total_steps)
        t = self.steps_done + 1
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            flat = p.data.reshape(-1)
            grad = np.ascontiguousarray(p.grad.reshape(-1))
            kernels.adam_update(flat, grad, m, v, t, lr, self.beta1, self.beta2, self.eps)
        self.steps_done = t

    def state_arrays(self):
        """Moment arrays keyed for checkpointing."""
        out = {}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"adam.m.{i}"] = m
            out[f"adam.v.{i}"] = v
        return out

    def load_state_arrays(self, arrays, steps_done):
        for i in range(len(self.params)):
            self.m[i][:] = arrays[f"adam.m.{i}"]
            self.v[i][:] = arrays[f"adam.v.{i}"]
        self.steps_done = int(steps_done)


# ---------------------------------------------------------------------------
# finite differences


def grad_check(loss_fn, params, eps=1e-5, indices=None):
    """Compare analytic gradients against central differences.

    loss_fn rebuilds the graph from the current parameter values and returns a
    scalar Tensor. Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1). Returns the worst error found. `indices`
    optionally restricts which flat coordinates of each parameter are probed.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        probe = range(flat.size) if indices is None else indices
        for i in probe:
            orig = flat[i]
            flat[i] = orig + eps
            hi = float(loss_fn().data)
            flat[i] = orig - eps
            lo = float(loss_fn().data)
            flat[i] = orig
            num = (hi - lo) / (2.0 * eps)
            ana = float(aflat[i])
            err = abs(ana - num) / max(abs(ana), abs(num), 1.0)
            if err > worst:
                worst = err
    return worst
