"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a numpy array. Every differentiable primitive records a
:class:`Node` on its output holding the operands and a backward rule; calling
:func:`backward` walks the recorded graph once in reverse topological order and
accumulates into the ``grad`` buffer of every leaf with ``requires_grad``.
"""

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled() -> bool:
    return _grad_enabled


class GraphConsumedError(RuntimeError):
    pass


@dataclass(eq=False)
class Node:
    op: str
    parents: tuple
    backward_fn: Optional[Callable]
    consumed: bool = False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "iub":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    # -- introspection ------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._node is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators (implemented in ops) -----------------------------------------
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, idx):
        from . import ops
        return ops.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    def backward(self, seed=None):
        backward(self, seed)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def make_result(data, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    """Wrap ``data`` as the output of primitive ``op`` and record it if needed.

    ``backward_fn(g)`` receives the upstream gradient (an ndarray shaped like
    ``data``) and returns one gradient per parent, ``None`` for parents that
    do not need one.
    """
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if needs:
        out.requires_grad = True
        out._node = Node(op, tuple(parents), backward_fn)
    return out


@dataclass
class CompGraph:
    """Recorded primitive applications reachable from ``output``, operands first."""

    output: Tensor
    order: list = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "CompGraph":
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            if t._node is not None:
                for p in t._node.parents:
                    if id(p) not in seen and p.requires_grad:
                        stack.append((p, False))
        return cls(output, order)

    @property
    def nodes(self):
        return [t._node for t in self.order if t._node is not None]

    def leaves(self):
        return [t for t in self.order if t._node is None and t.requires_grad]


def backward(output, seed=None):
    """Accumulate d(output)/d(leaf), scaled by ``seed``, into every leaf's ``grad``.

    The recorded graph is released afterwards; a second call on the same
    recording raises :class:`GraphConsumedError`.
    """
    graph = output if isinstance(output, CompGraph) else CompGraph.trace(output)
    out = graph.output
    if not out.requires_grad:
        raise RuntimeError("output does not depend on any tensor that requires grad")
    if seed is None:
        if out.size != 1:
            raise ValueError(f"seed required for non-scalar output of shape {out.shape}")
        seed = np.ones_like(out.data)
    else:
        seed = np.asarray(seed.data if isinstance(seed, Tensor) else seed, dtype=out.dtype)
        if seed.shape != out.shape:
            raise ValueError(f"seed shape {seed.shape} does not match output shape {out.shape}")

    for t in graph.order:
        if t._node is not None and t._node.consumed:
            raise GraphConsumedError(f"graph through '{t._node.op}' was already consumed by backward")

    grads = {id(out): seed}
    for t in reversed(graph.order):
        g = grads.pop(id(t), None)
        node = t._node
        if node is None:
            if g is not None and t.requires_grad:
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        if g is not None:
            pgrads = node.backward_fn(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                if pg.shape != p.shape:
                    raise RuntimeError(
                        f"{node.op}: gradient shape {pg.shape} != operand shape {p.shape}"
                    )
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        node.consumed = True
        node.backward_fn = None
    return graph
