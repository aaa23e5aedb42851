"""
Minimal reverse-mode autograd over dense numpy arrays.

A Tensor holds its value, an optional gradient, the tensors it was computed
from and a closure that pushes its gradient back to them. Ops live in
src.core.functional; this module only knows about graph bookkeeping.
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]

_DEFAULT_DTYPE = np.float32
_grad_state = threading.local()


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are inconsistent with an op's contract."""
    pass


class NonFiniteError(ArithmeticError):
    """Raised when a forward value or gradient is NaN or infinite."""
    pass


class MissingContextError(RuntimeError):
    """Raised when a backward pass is asked for without its saved forward context."""
    pass


def set_default_dtype(dtype) -> None:
    """Select the repo-wide training precision (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Build no graph inside the block (inference on a frozen model)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def check_finite(values: np.ndarray, where: str) -> None:
    """
    Raise if any entry is NaN or infinite.

    Args:
        values: Array to check
        where: Op name for the error message

    Raises:
        NonFiniteError: On the first non-finite value
    """
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"non-finite value produced by {where}")


class Tensor:
    """Dense N-dimensional array with a gradient slot."""

    def __init__(self, data: ArrayLike, requires_grad: bool = False, dtype=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = _DEFAULT_DTYPE
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._prev: tuple = ()
        self._backward: Callable[[], None] = lambda: None
        self._op = ""

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}, op={self._op!r})"

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.item())

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray) -> None:
        """Add an incoming gradient into this tensor's slot."""
        if not self.requires_grad:
            return
        if grad.shape != self.data.shape:
            raise ShapeMismatchError(f"gradient shape {grad.shape} does not match tensor shape {self.data.shape}")
        check_finite(grad, f"backward of {self._op or 'leaf'}")
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad = self.grad + grad

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """
        Run reverse-mode differentiation from this tensor.

        Args:
            grad: Seed gradient; defaults to ones for a scalar tensor

        Raises:
            ShapeMismatchError: If no seed is given for a non-scalar tensor
        """
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatchError("backward() on a non-scalar tensor needs an explicit seed gradient")
            grad = np.ones_like(self.data)
        self.accumulate_grad(np.asarray(grad, dtype=self.data.dtype))

        for node in reversed(self._topological_order()):
            if node.grad is not None:
                node._backward()

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __add__(self, other: Union["Tensor", float, int]) -> "Tensor":
        if not isinstance(other, Tensor):
            value = self.data + np.asarray(other, dtype=self.data.dtype)
            return make_result(value, (self,), lambda g: (g,), "add_scalar")
        if other.shape != self.shape:
            raise ShapeMismatchError(f"cannot add shapes {self.shape} and {other.shape}")
        return make_result(self.data + other.data, (self, other), lambda g: (g, g), "add")

    __radd__ = __add__

    def __mul__(self, scalar: Union[float, int]) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise TypeError("only scalar multiplication is supported")
        factor = np.asarray(scalar, dtype=self.data.dtype)
        return make_result(self.data * factor, (self,), lambda g: (g * factor,), "mul_scalar")

    __rmul__ = __mul__

    def sum(self) -> "Tensor":
        shape = self.shape
        return make_result(np.asarray(self.data.sum()), (self,),
                           lambda g: (np.broadcast_to(g, shape).astype(g.dtype),), "sum")


def make_result(value: np.ndarray, parents: Iterable[Tensor],
                backward_fn: Callable[[np.ndarray], tuple], op: str) -> Tensor:
    """
    Wrap an op's forward value and wire its backward closure into the graph.

    Args:
        value: Forward result
        parents: Input tensors, in the order backward_fn returns their gradients
        backward_fn: Maps the output gradient to one gradient (or None) per parent
        op: Op name for diagnostics

    Returns:
        Result tensor; it only records parents when some parent needs a gradient
    """
    check_finite(value, op)
    parents = tuple(parents)
    dtype = parents[0].dtype if parents else _DEFAULT_DTYPE
    out = Tensor(np.asarray(value, dtype=dtype))
    out._op = op

    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._prev = parents

        def _backward() -> None:
            grads = backward_fn(out.grad)
            for parent, grad in zip(parents, grads):
                if grad is not None and parent.requires_grad:
                    parent.accumulate_grad(np.asarray(grad, dtype=parent.dtype))

        out._backward = _backward

    return out
