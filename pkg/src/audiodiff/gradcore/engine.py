"""Tape-based reverse-mode autodiff over dense numpy arrays.

Every primitive computes its forward value eagerly and, when a :class:`Tape`
is active and one of its inputs requires a gradient, appends the output node
to that tape. ``backward`` walks the tape in reverse creation order, which is
a valid topological order by construction.

Backward rules live in the module-level ``RULES`` table keyed by primitive
name so that the gradient checker can swap a rule out and prove it notices.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "RULES",
    "backward",
    "checked_mode",
    "tensor",
    "constant",
]

_state = threading.local()

# name -> fn(out_grad, out, *inputs, **attrs) returning one grad per input (None = no grad)
RULES: dict[str, Callable] = {}


def rule(name: str):
    def register(fn):
        RULES[name] = fn
        return fn

    return register


def _tape_stack() -> list:
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class checked_mode:
    """Context manager raising ``FloatingPointError`` on any non-finite op output."""

    def __enter__(self):
        self._prev = getattr(_state, "checked", False)
        _state.checked = True
        return self

    def __exit__(self, *exc):
        _state.checked = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "op", "inputs", "attrs", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.op: str | None = None
        self.inputs: tuple = ()
        self.attrs: dict = {}
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; the primitives themselves live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def tensor(data, requires_grad: bool = False, dtype=np.float32, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=requires_grad, name=name)


def constant(data, like: Tensor | None = None) -> Tensor:
    if isinstance(data, Tensor):
        return data
    dtype = like.dtype if like is not None else None
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype.kind != "f":
        arr = arr.astype(np.float32)
    return Tensor(arr)


class Tape:
    """Ordered record of primitive applications for one forward pass.

    Used as a context manager; nested tapes are allowed and only the
    innermost one records.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.nodes)

    def reset(self) -> None:
        self.nodes.clear()


def make_node(op: str, data: np.ndarray, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Wrap a primitive's forward value and record it on the active tape."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.op = None
    out.inputs = ()
    out.attrs = {}
    if getattr(_state, "checked", False) and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite output from {op}")
    tape = active_tape()
    out.requires_grad = tape is not None and any(t.requires_grad for t in inputs)
    if out.requires_grad:
        out.op = op
        out.inputs = tuple(inputs)
        out.attrs = attrs
        tape.nodes.append(out)
    return out


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Reverse-accumulate ``d loss / d leaf`` for every leaf requiring a gradient.

    Returns a mapping keyed by the leaf tensors themselves (identity hashing).
    The tape is reset afterwards.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    position = {id(node): i for i, node in enumerate(tape.nodes)}
    if id(loss) not in position:
        if loss.requires_grad or loss.op is not None:
            raise ValueError("loss was not recorded on this tape")
        tape.reset()
        return {}
    stop = position[id(loss)]
    for i, node in enumerate(tape.nodes[: stop + 1]):
        for parent in node.inputs:
            if parent.op is not None and position.get(id(parent), i) >= i:
                raise ValueError(f"node {node.op} references an input recorded after it or on another tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes[: stop + 1]):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        in_grads = RULES[node.op](g, node, *node.inputs, **node.attrs)
        for parent, pg in zip(node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if parent.op is None:
                leaves[key] = parent
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    tape.reset()
    return {leaf: grads[key].astype(leaf.dtype, copy=False) for key, leaf in leaves.items()}
