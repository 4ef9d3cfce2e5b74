"""Dense tensor value type and the reverse-mode gradient tape.

Operations live in :mod:`ianet.ops`; each one computes its result with numpy
and, when a :class:`GradTape` is active and some input is tracked, appends a
node holding the adjoint closure. ``GradTape.backward`` replays the nodes in
reverse recording order, which is a valid reverse-topological order because
a node is only recorded after all of its inputs exist.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import UsageError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array with optional gradient tracking.

    ``data`` is a numpy array (possibly a strided view); ``grad`` is filled by
    :meth:`GradTape.backward` for tracked leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.shape[0]

    # Operator sugar; the real work is in ops.
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

        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    @property
    def T(self):
        from . import ops

        return ops.transpose(self)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        dtype = np.float64
    return Tensor(x, dtype=dtype)


@dataclass
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence["np.ndarray | None"]]


_perturbed: dict[str, float] = {}


@contextlib.contextmanager
def perturbed_gradients(ops: Iterable[str], factor: float = 1.05):
    """Scale the adjoints of the named ops while the context is active.

    Used to check that the gradient checker actually catches broken
    backward passes.
    """
    saved = dict(_perturbed)
    for name in ops:
        _perturbed[name] = factor
    try:
        yield
    finally:
        _perturbed.clear()
        _perturbed.update(saved)


class GradTape:
    """Ordered record of executed differentiable operations.

    Use as a context manager; every op executed inside the block whose
    inputs include a tracked tensor is recorded::

        with GradTape() as tape:
            loss = ops.sum(ops.mul(x, x))
        grads = tape.backward(loss)
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self._produced: set[int] = set()
        self._closed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)
        return False

    def record(self, op: str, inputs: tuple, output: Tensor, backward) -> None:
        if self._closed:
            raise UsageError("tape already consumed by backward()")
        self.nodes.append(Node(op, inputs, output, backward))
        self._produced.add(id(output))

    def watch(self, *tensors: Tensor) -> None:
        for t in tensors:
            t.requires_grad = True

    def leaves(self) -> list[Tensor]:
        """Tracked inputs that were not produced by a recorded op, in first-use order."""
        seen: set[int] = set()
        out = []
        for node in self.nodes:
            for t in node.inputs:
                if (
                    isinstance(t, Tensor)
                    and t.requires_grad
                    and id(t) not in self._produced
                    and id(t) not in seen
                ):
                    seen.add(id(t))
                    out.append(t)
        return out

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None, grad_output=None):
        """Propagate d(loss)/d(.) through the recorded nodes.

        Populates ``.grad`` on every tracked leaf (zeros if untouched) and on
        every tensor in ``wrt``. Returns the gradients of ``wrt`` as a list,
        or the leaf gradients as ``{id(tensor): grad}`` when ``wrt`` is None.
        A non-scalar ``loss`` needs ``grad_output``, the upstream gradient of
        the same shape (a vector-Jacobian product).
        """
        if id(loss) not in self._produced:
            raise UsageError("loss was not produced by an operation recorded on this tape")
        if grad_output is None:
            if loss.size != 1:
                raise UsageError(f"loss must be a scalar, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        else:
            seed = np.asarray(grad_output, dtype=loss.dtype)
            if seed.shape != loss.shape:
                raise UsageError(f"grad_output shape {seed.shape} does not match output {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): seed}
        for node in reversed(self.nodes):
            g_out = grads.pop(id(node.output), None)
            if g_out is None:
                continue
            in_grads = node.backward(g_out)
            factor = _perturbed.get(node.op)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                if factor is not None:
                    g = g * factor
                if g.shape != t.shape:
                    g = _unbroadcast(g, t.shape)
                key = id(t)
                grads[key] = grads[key] + g if key in grads else g
        self._closed = True
        leaves = self.leaves()
        for t in leaves:
            g = grads.get(id(t))
            t.grad = np.zeros_like(t.data) if g is None else np.array(g, dtype=t.dtype)
        if wrt is None:
            return {id(t): t.grad for t in leaves}
        leaf_ids = {id(t) for t in leaves}
        out = []
        for t in wrt:
            if id(t) in leaf_ids:
                g = t.grad
            else:
                g = grads.get(id(t))
                g = np.zeros_like(t.data) if g is None else np.array(g, dtype=t.dtype)
                t.grad = g
            out.append(g)
        return out


def backward(loss: Tensor, tape: GradTape, wrt: Sequence[Tensor] | None = None, grad_output=None):
    """Functional spelling of :meth:`GradTape.backward`."""
    return tape.backward(loss, wrt, grad_output)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g
