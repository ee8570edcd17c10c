"""Dense float64 tensor with a recorded reverse-mode graph.

Every op in :mod:`rcbproto.numerics` builds a new :class:`Tensor` whose
``_backward`` closure maps the output gradient to one gradient per parent.
The graph is only recorded when at least one parent requires a gradient.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class NonFiniteError(FloatingPointError):
    """A NaN or Inf reached a tensor."""


class GraphError(RuntimeError):
    """Backward was requested on something that has no recorded forward."""


class ShapeError(ValueError):
    pass


# ---------------------------------------------------------------------------
# MAC instrumentation
# ---------------------------------------------------------------------------

class MacCounter:
    """Accumulates multiply-accumulate counts reported by the kernels."""

    def __init__(self) -> None:
        self.total = 0
        self.by_op: dict[str, int] = {}

    def add(self, op: str, n: int) -> None:
        self.total += int(n)
        self.by_op[op] = self.by_op.get(op, 0) + int(n)


_mac_counter: contextvars.ContextVar[Optional[MacCounter]] = contextvars.ContextVar(
    "mac_counter", default=None
)


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Count MACs of every kernel executed inside the block.

    Counting rules: matmul-like kernels count one MAC per multiply-accumulate,
    elementwise binary ops one per output element, reductions one per input
    element, nonlinearities nothing.
    """
    counter = MacCounter()
    token = _mac_counter.set(counter)
    try:
        yield counter
    finally:
        _mac_counter.reset(token)


def record_macs(op: str, n: int) -> None:
    counter = _mac_counter.get()
    if counter is not None:
        counter.add(op, n)


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
    ) -> None:
        arr = np.array(data, dtype=DTYPE) if not isinstance(data, np.ndarray) else data
        if arr.dtype != DTYPE:
            arr = arr.astype(DTYPE)
        # a sum is cheaper than an elementwise mask and is non-finite whenever
        # an element is (it can also overflow, hence the exact re-check)
        with np.errstate(over="ignore", invalid="ignore"):
            total = arr.sum()
        if not np.isfinite(total) and not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''} of shape {arr.shape}")
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)

    def __getitem__(self, index):
        from .ops import getitem
        return getitem(self, index)

    def reshape(self, *shape):
        from .ops import reshape
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        from .ops import transpose
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        from .ops import sum_
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        from .ops import mean
        return mean(self, axis, keepdims)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(
    data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn
) -> Tensor:
    """Wrap an op output, recording the graph only if some parent needs it."""
    track = any(p.requires_grad for p in parents)
    if not track:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor with ``requires_grad`` that feeds ``loss``.

    Gradients accumulate into existing ``.grad`` slots of leaf tensors, so call
    ``zero_grad`` on parameters between steps.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or (loss._backward is None and not loss._parents):
        raise GraphError("no recorded forward computation leads to this tensor")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            # leaf
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            if pg.shape != p.shape:
                raise ShapeError(f"gradient shape {pg.shape} != tensor shape {p.shape}")
            key = id(p)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
