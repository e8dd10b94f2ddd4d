"""
Dense tensor with a recorded reverse-mode graph.

Shape conventions: images are [channels, height, width], token grids are
[height, width, dim] and sequences are [tokens, dim]. Data is row-major numpy.
"""

from contextlib import contextmanager
from typing import Any, Callable, Iterator, Optional, Sequence
import os

import numpy as np
from loguru import logger

from app.utils.error import GraphError, NonFiniteError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_SUPPORTED_DTYPES = (np.float32, np.float64)
_default_dtype: type = np.float32

# NaN/Inf checks at op boundaries; off on the release path
_check_finite = (
    os.getenv("GRUAUNET_CHECK_FINITE", "false").lower() == "true"
)


def get_default_dtype() -> type:
    return _default_dtype


def set_default_dtype(dtype: Any) -> None:
    global _default_dtype
    dtype = np.dtype(dtype).type
    if dtype not in _SUPPORTED_DTYPES:
        raise ValueError(f"Unsupported tensor dtype {dtype}; use float32 or float64")
    _default_dtype = dtype


@contextmanager
def float64() -> Iterator[None]:
    """Run the enclosed block in 64-bit mode (used by gradient checks)."""
    previous = _default_dtype
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(previous)


def set_finite_checks(enabled: bool) -> None:
    global _check_finite
    _check_finite = enabled


def finite_checks_enabled() -> bool:
    return _check_finite


# distances to ReLU/max/clamp breakpoints, collected only inside track_breakpoints()
_breakpoint_margins: Optional[list[float]] = None


@contextmanager
def track_breakpoints() -> Iterator[list[float]]:
    """
    Collect how close each ReLU, max and clamp evaluated in the block came to
    its non-differentiable point (0 for ReLU, the runner-up for max, the bounds
    for clamp). Gradient checks use this to reject points sitting on a kink.
    """
    global _breakpoint_margins
    previous = _breakpoint_margins
    _breakpoint_margins = []
    try:
        yield _breakpoint_margins
    finally:
        _breakpoint_margins = previous


def breakpoints_tracked() -> bool:
    return _breakpoint_margins is not None


def record_breakpoint_margin(distance: float) -> None:
    if _breakpoint_margins is not None:
        _breakpoint_margins.append(float(distance))


class Tensor:
    """
    A value in the computation graph.

    `data` is treated as immutable once created; only `grad` is written to after
    construction (and the optimizer swaps `data` for a new array between steps).
    """

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data: np.ndarray = np.asarray(data, dtype=_default_dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.data.dtype}{label}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """
        Accumulate d(self)/d(leaf) into every reachable leaf's `grad`.

        Leaves sum into their existing buffers so gradients of several graphs
        (one per sample) add up. Interior nodes receive their own gradient.
        A graph can be walked once.
        """
        if self.data.size != 1:
            raise GraphError(f"backward() needs a scalar root, got shape {self.shape}")
        if not self.requires_grad:
            raise GraphError("backward() on a tensor that does not require grad")
        if self._consumed:
            raise GraphError(
                "backward() already ran on this graph; rebuild it with a new forward pass"
            )

        order = _topological_order(self)
        pending: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.shape != parent.shape:
                    raise GraphError(
                        f"{node._op} backward produced gradient {pg.shape} for input {parent.shape}"
                    )
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg
        self._consumed = True

    # operator sugar; implementations live in app.tensor.ops
    def __add__(self, other: Any) -> "Tensor":
        return _ops.add(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return _ops.add(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return _ops.sub(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return _ops.sub(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return _ops.mul(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return _ops.mul(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return _ops.div(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return _ops.div(other, self)

    def __neg__(self) -> "Tensor":
        return _ops.neg(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return _ops.power(self, exponent)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return _ops.matmul(self, other)

    def __getitem__(self, index: Any) -> "Tensor":
        return _ops.getitem(self, index)

    def sum(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return _ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return _ops.mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis: Any = None, keepdims: bool = False) -> "Tensor":
        return _ops.max(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops.transpose(self, axes or None)


def make_node(
    value: np.ndarray,
    parents: Sequence[Tensor],
    backward: BackwardFn,
    op: str,
) -> Tensor:
    """
    Register the result of an operation in the graph.

    `backward` maps the gradient of the output to one gradient per parent
    (None where a parent receives nothing). Every differentiable op goes
    through here, which also makes it the single place finite checks run.
    """
    out = Tensor(value)
    out._op = op
    if _check_finite and not np.all(np.isfinite(out.data)):
        logger.error(f"Non-finite values produced by {op}")
        raise NonFiniteError(f"{op} produced non-finite values")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative post-order; graphs of a full model are deeper than the recursion limit
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


from app.tensor import ops as _ops  # noqa: E402
