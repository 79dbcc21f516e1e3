"""Finite-difference verification of the backward rules."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .engine import Tape, Tensor, backward


def finite_difference_check(f: Callable[[Sequence[Tensor]], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between central differences and ``backward``.

    ``f`` maps the parameter list to a scalar Tensor. Parameters are perturbed
    in place and restored.
    """
    with Tape() as tape:
        loss = f(params)
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("f returned a non-finite value")
    grads = backward(loss, tape)
    worst = 0.0
    for p in params:
        ad = grads.get(p)
        ad = np.zeros_like(p.data) if ad is None else ad
        flat = p.data.reshape(-1)
        adf = ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(params).data)
            flat[i] = orig - eps
            fm = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError("f returned a non-finite value")
            fd = (fp - fm) / (2 * eps)
            a = float(adf[i])
            err = abs(fd - a) / max(abs(fd), abs(a), 1e-12)
            worst = max(worst, err)
    return worst


@dataclass
class CheckResult:
    op: str
    max_error: float
    passed: bool


def _rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    # random projection so every output coordinate contributes a distinct slope
    w = Tensor(rng.standard_normal(out.shape))
    return ops.sum(ops.mul(out, w))


def _case(name: str, rng):
    """Build (f, params) exercising one primitive on random shapes."""
    b, n, d = (int(x) for x in rng.integers(2, 5, size=3))
    if name in ("add", "sub", "mul"):
        a, c = _rand(rng, b, n, d), _rand(rng, n, d)  # broadcast on the second input
        fn = getattr(ops, name)
        return (lambda p: _weighted(fn(p[0], p[1]), rng_fixed(p, 1))), [a, c]
    if name == "matmul":
        a, c = _rand(rng, b, n, d), _rand(rng, d, n + 1)
        return (lambda p: _weighted(ops.matmul(p[0], p[1]), rng_fixed(p, 2))), [a, c]
    if name == "relu":
        x = Tensor(rng.standard_normal((b, n)) + np.sign(rng.standard_normal((b, n))) * 0.1, requires_grad=True)
        return (lambda p: _weighted(ops.relu(p[0]), rng_fixed(p, 3))), [x]
    if name == "tanh":
        return (lambda p: _weighted(ops.tanh(p[0]), rng_fixed(p, 4))), [_rand(rng, b, n)]
    if name == "layernorm":
        x, g, be = _rand(rng, b, n, d + 1), _rand(rng, d + 1), _rand(rng, d + 1)
        return (lambda p: _weighted(ops.layernorm(p[0], p[1], p[2]), rng_fixed(p, 5))), [x, g, be]
    if name == "softmax":
        return (lambda p: _weighted(ops.softmax(p[0]), rng_fixed(p, 6))), [_rand(rng, b, n, d)]
    if name == "softmax_cross_entropy":
        logits = _rand(rng, b, n + 1)
        targets = rng.integers(0, n + 1, size=b)
        targets[0] = 0
        return (lambda p: ops.softmax_cross_entropy(p[0], targets, pad_id=None)), [logits]
    if name == "embedding":
        w = _rand(rng, n + 2, d)
        ids = rng.integers(0, n + 2, size=(b, n))
        return (lambda p: _weighted(ops.embedding(p[0], ids), rng_fixed(p, 7))), [w]
    if name == "gather":
        x = _rand(rng, b, n + 2, d)
        idx = rng.integers(-1, n + 2, size=(n, 3))
        return (lambda p: _weighted(ops.gather(p[0], idx, axis=1), rng_fixed(p, 8))), [x]
    if name == "transpose":
        return (lambda p: _weighted(ops.transpose(p[0], (2, 0, 1)), rng_fixed(p, 9))), [_rand(rng, b, n, d)]
    if name == "reshape":
        return (lambda p: _weighted(ops.reshape(p[0], (b * n, d)), rng_fixed(p, 10))), [_rand(rng, b, n, d)]
    if name == "sum":
        return (lambda p: _weighted(ops.sum(p[0], axis=1), rng_fixed(p, 11))), [_rand(rng, b, n, d)]
    if name == "mean":
        return (lambda p: _weighted(ops.mean(p[0], axis=-1, keepdims=True), rng_fixed(p, 12))), [_rand(rng, b, n, d)]
    raise KeyError(name)


def rng_fixed(params, salt: int):
    # same projection weights on every re-evaluation of f, keyed by the shapes
    seed = hash((salt,) + tuple(p.shape for p in params)) & 0xFFFFFFFF
    return np.random.default_rng(seed)


def check_primitives(
    names: Sequence[str] = ops.PRIMITIVES, seeds: Sequence[int] = tuple(range(10)), tol: float = 1e-4, eps: float = 1e-5
) -> list[CheckResult]:
    results = []
    for name in names:
        worst = 0.0
        for seed in seeds:
            f, params = _case(name, np.random.default_rng(seed))
            worst = max(worst, finite_difference_check(f, params, eps=eps))
        results.append(CheckResult(name, worst, worst < tol))
    return results
