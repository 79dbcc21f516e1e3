"""Primitive operations and their backward rules.

The set is deliberately closed: every composite (attention, convolution,
feed-forward blocks) is assembled from these, so grad-checking this file
covers the whole model.
"""
from __future__ import annotations

import numpy as np

from .engine import Tensor, constant, make_node, rule

PRIMITIVES = (
    "add",
    "sub",
    "mul",
    "matmul",
    "relu",
    "tanh",
    "layernorm",
    "softmax",
    "softmax_cross_entropy",
    "embedding",
    "gather",
    "transpose",
    "reshape",
    "sum",
    "mean",
)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = constant(a, like=b)
    if not isinstance(b, Tensor):
        b = constant(b, like=a)
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node("add", a.data + b.data, (a, b))


@rule("add")
def _add_back(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node("sub", a.data - b.data, (a, b))


@rule("sub")
def _sub_back(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_node("mul", a.data * b.data, (a, b))


@rule("mul")
def _mul_back(g, out, a, b):
    ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def matmul(a, b) -> Tensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least 2 dims")
    return make_node("matmul", np.matmul(a.data, b.data), (a, b))


@rule("matmul")
def _matmul_back(g, out, a, b):
    ga = gb = None
    if a.requires_grad:
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    if b.requires_grad:
        if a.ndim > 2 and b.ndim == 2:
            # fold batch dims into rows: one big GEMM instead of a batched one
            k = a.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return ga, gb


def relu(x: Tensor) -> Tensor:
    return make_node("relu", np.maximum(x.data, 0), (x,))


@rule("relu")
def _relu_back(g, out, x):
    return (g * (x.data > 0),)


def tanh(x: Tensor) -> Tensor:
    return make_node("tanh", np.tanh(x.data), (x,))


@rule("tanh")
def _tanh_back(g, out, x):
    return (g * (1 - out.data * out.data),)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = make_node("layernorm", xhat * gamma.data + beta.data, (x, gamma, beta), xhat=xhat, inv=inv)
    return out


@rule("layernorm")
def _layernorm_back(g, out, x, gamma, beta, xhat, inv):
    gx = None
    if x.requires_grad:
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
    ggamma = _unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
    gbeta = _unbroadcast(g, beta.shape) if beta.requires_grad else None
    return gx, ggamma, gbeta


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return make_node("softmax", e / e.sum(axis=axis, keepdims=True), (x,), axis=axis)


@rule("softmax")
def _softmax_back(g, out, x, axis):
    p = out.data
    return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)


def log_softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits: Tensor, targets, pad_id: int | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over non-pad positions.

    ``logits`` has shape (..., V) and ``targets`` the matching leading shape.
    """
    targets = np.asarray(targets, dtype=np.int64)
    V = logits.shape[-1]
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    mask = np.ones(targets.shape, dtype=bool) if pad_id is None else targets != pad_id
    count = int(mask.sum())
    if count == 0:
        raise ValueError("every target position is padding")
    valid = targets[mask]
    if valid.min() < 0 or valid.max() >= V:
        raise ValueError(f"target id out of range for vocabulary of size {V}")
    logp = log_softmax_np(logits.data.astype(np.float64))
    safe = np.where(mask, targets, 0)
    picked = np.take_along_axis(logp, safe[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / count
    data = np.asarray(loss, dtype=logits.dtype)
    return make_node("softmax_cross_entropy", data, (logits,), logp=logp, safe=safe, mask=mask, count=count)


@rule("softmax_cross_entropy")
def _sce_back(g, out, logits, logp, safe, mask, count):
    grad = np.exp(logp)
    np.put_along_axis(grad, safe[..., None], np.take_along_axis(grad, safe[..., None], axis=-1) - 1.0, axis=-1)
    grad *= (mask / count)[..., None]
    return ((grad * g).astype(logits.dtype),)


def embedding(weight: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    return make_node("embedding", weight.data[ids], (weight,), ids=ids)


@rule("embedding")
def _embedding_back(g, out, weight, ids):
    gw = np.zeros_like(weight.data)
    np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[-1]))
    return (gw,)


def gather(x: Tensor, index, axis: int = 0) -> Tensor:
    """Select slices of ``x`` along ``axis``; index -1 yields a zero slice.

    Used for strided frame stacking (convolution via im2col) and for
    scattering encoded references into a batch with zero rows.
    """
    index = np.asarray(index, dtype=np.int64)
    axis = axis % x.ndim
    valid = index >= 0
    picked = np.take(x.data, np.where(valid, index, 0), axis=axis)
    shape = [1] * picked.ndim
    shape[axis : axis + index.ndim] = index.shape
    vmask = valid.reshape(shape)
    out = picked * vmask if not valid.all() else picked
    return make_node("gather", out, (x,), index=index, axis=axis, vmask=vmask)


@rule("gather")
def _gather_back(g, out, x, index, axis, vmask):
    g = g * vmask
    gx = np.zeros_like(x.data)
    flat = np.where(index >= 0, index, 0).reshape(-1)
    gm = np.moveaxis(g, list(range(axis, axis + index.ndim)), list(range(index.ndim)))
    gm = gm.reshape((flat.size,) + gm.shape[index.ndim :])
    target = np.moveaxis(gx, axis, 0)
    np.add.at(target, flat, gm)
    return (gx,)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim - 2)) + (x.ndim - 1, x.ndim - 2)
    axes = tuple(axes)
    return make_node("transpose", np.transpose(x.data, axes), (x,), axes=axes)


@rule("transpose")
def _transpose_back(g, out, x, axes):
    return (np.transpose(g, np.argsort(axes)),)


def reshape(x: Tensor, shape) -> Tensor:
    return make_node("reshape", x.data.reshape(shape), (x,))


@rule("reshape")
def _reshape_back(g, out, x):
    return (g.reshape(x.shape),)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return make_node("sum", np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), axis=axis, keepdims=keepdims)


@rule("sum")
def _sum_back(g, out, x, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return make_node(
        "mean", np.asarray(x.data.mean(axis=axis, keepdims=keepdims)), (x,), axis=axis, keepdims=keepdims, n=int(n)
    )


@rule("mean")
def _mean_back(g, out, x, axis, keepdims, n):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention built from matmul, mul, add and softmax.

    ``mask`` is an additive array broadcastable to the score shape
    (0 where allowed, a large negative number where blocked).
    """
    scores = mul(matmul(q, transpose(k)), 1.0 / np.sqrt(q.shape[-1]))
    if mask is not None:
        scores = add(scores, constant(mask.astype(scores.dtype)))
    return matmul(softmax(scores, axis=-1), v)
