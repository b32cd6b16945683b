"""
Minimal reverse-mode automatic differentiation over dense float64 tensors.

Operations executed inside an active ``Tape`` are appended to it together with
their backward rule; ``backward(loss)`` walks the tape in exact reverse append
order and accumulates gradients into every tensor that requires them. Outside
a tape the same operations simply compute values.

Example:
    >>> with Tape():
    ...     x = Tensor([-1.0, 2.0], requires_grad=True)
    ...     loss = sum_all(relu(x))
    ...     backward(loss)
    >>> x.grad
    array([0., 1.])

Only scalar broadcasting is supported; every other operation checks shapes
explicitly and raises ShapeError.
"""

import threading
from abc import ABC, abstractmethod
from typing import Callable, Sequence

import numpy as np
import scipy.sparse
from scipy.special import logsumexp, softmax

from graphmsl.scripts.errors import (
    ConfigError,
    DomainError,
    EmptyTapeError,
    NonScalarLossError,
    ShapeError,
    ZeroNormError,
)

_state = threading.local()


def current_tape():
    """The innermost active tape of the calling thread, or None."""
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """
    Dense float64 tensor with an optional gradient buffer.

    Attributes:
        data (np.ndarray): Row-major values
        requires_grad (bool): Whether backward() should populate ``grad``
        grad (np.ndarray | None): Gradient of the last backward pass
    """

    __slots__ = ("data", "requires_grad", "grad", "tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.tape = None
        if requires_grad:
            tape = current_tape()
            if tape is not None:
                tape.register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Node:
    __slots__ = ("output", "inputs", "function")

    def __init__(self, output, inputs, function):
        self.output = output
        self.inputs = inputs
        self.function = function


class Tape:
    """
    Append-only record of differentiable operations.

    Use as a context manager; tapes nest per thread and independent tapes may
    run concurrently on different threads.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._tracked: dict[int, Tensor] = {}

    def __enter__(self):
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _state.stack.pop()
        return False

    def register(self, tensor: Tensor) -> None:
        if id(tensor) not in self._tracked:
            self._tracked[id(tensor)] = tensor
            tensor.tape = self

    def record(self, output: Tensor, inputs: Sequence[Tensor], function: "Function") -> None:
        for tensor in inputs:
            if tensor.requires_grad:
                self.register(tensor)
        self.register(output)
        self.nodes.append(_Node(output, tuple(inputs), function))

    def backward(self, loss: Tensor) -> None:
        """
        Populate ``grad`` of every tracked tensor with d(loss)/d(tensor).

        Tensors the loss does not depend on receive a zero gradient.
        """
        if loss.data.size != 1:
            raise NonScalarLossError(f"loss must be a scalar, got shape {loss.shape}")
        if not self.nodes:
            raise EmptyTapeError("the tape recorded no operations")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            upstream = grads.get(id(node.output))
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.function.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                key = id(tensor)
                grads[key] = grad if key not in grads else grads[key] + grad

        for key, tensor in self._tracked.items():
            grad = grads.get(key)
            tensor.grad = np.zeros_like(tensor.data) if grad is None else np.array(grad)


def backward(loss: Tensor) -> None:
    """
    Run reverse-mode differentiation from a scalar loss.

    Raises:
        NonScalarLossError: ``loss`` is not a scalar
        EmptyTapeError: ``loss`` was not produced on a tape
    """
    if loss.data.size != 1:
        raise NonScalarLossError(f"loss must be a scalar, got shape {loss.shape}")
    if loss.tape is None:
        raise EmptyTapeError("loss was not recorded on any tape")
    loss.tape.backward(loss)


class Function(ABC):
    """
    A differentiable primitive.

    Subclasses implement ``forward`` on raw arrays (saving whatever the
    backward rule needs) and ``backward``, which maps the upstream gradient to
    one gradient per input (``None`` for non-differentiable inputs).
    """

    @abstractmethod
    def forward(self, *arrays: np.ndarray) -> np.ndarray:
        pass

    @abstractmethod
    def backward(self, grad: np.ndarray) -> tuple:
        pass

    @classmethod
    def apply(cls, *tensors: Tensor, **options) -> Tensor:
        function = cls(**options)
        out = Tensor(function.forward(*[t.data for t in tensors]))
        tape = current_tape()
        if tape is not None and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            tape.record(out, tensors, function)
        return out


def _same_or_scalar(a: np.ndarray, b: np.ndarray, name: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} differ")


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    return np.asarray(grad.sum()) if shape == () and grad.shape != () else grad


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        return grad @ self.b.T, self.a.T @ grad


class Add(Function):
    def forward(self, a, b):
        _same_or_scalar(a, b, "add")
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        _same_or_scalar(a, b, "mul")
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class ScalarMul(Function):
    def __init__(self, c: float):
        self.c = float(c)

    def forward(self, a):
        return a * self.c

    def backward(self, grad):
        return (grad * self.c,)


class Relu(Function):
    def forward(self, a):
        self.mask = a > 0
        return np.where(self.mask, a, 0.0)

    def backward(self, grad):
        return (np.where(self.mask, grad, 0.0),)


class Concat(Function):
    def __init__(self, axis: int):
        self.axis = axis

    def forward(self, a, b):
        if a.ndim != b.ndim:
            raise ShapeError(f"concat: ranks {a.ndim} and {b.ndim} differ")
        for dim in range(a.ndim):
            if dim != self.axis and a.shape[dim] != b.shape[dim]:
                raise ShapeError(f"concat: shapes {a.shape} and {b.shape} differ off axis {self.axis}")
        self.split = a.shape[self.axis]
        return np.concatenate([a, b], axis=self.axis)

    def backward(self, grad):
        first, second = np.split(grad, [self.split], axis=self.axis)
        return first, second


class SumRows(Function):
    """Sum of the rows of a matrix: ``(n, m) -> (m,)``."""

    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"sum_rows expects a matrix, got shape {a.shape}")
        self.n = a.shape[0]
        return a.sum(axis=0)

    def backward(self, grad):
        return (np.tile(grad, (self.n, 1)),)


class SumAll(Function):
    def forward(self, a):
        self.shape = a.shape
        return np.asarray(a.sum())

    def backward(self, grad):
        return (np.full(self.shape, float(grad)),)


class GatherSum(Function):
    """Row ``i`` of the output is the sum of the rows of ``a`` listed in ``index_lists[i]``."""

    def __init__(self, index_lists: Sequence[Sequence[int]]):
        rows, cols = [], []
        for i, indices in enumerate(index_lists):
            rows.extend([i] * len(indices))
            cols.extend(indices)
        self.n_out = len(index_lists)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)

    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"gather_sum expects a matrix, got shape {a.shape}")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= a.shape[0]):
            raise ShapeError("gather_sum: index out of range")
        self.source_shape = a.shape
        if self.cols.size == 0:
            self.matrix = None
            return np.zeros((self.n_out, a.shape[1]))
        self.matrix = scipy.sparse.csr_matrix(
            (np.ones(self.rows.size), (self.rows, self.cols)), shape=(self.n_out, a.shape[0])
        )
        return np.asarray(self.matrix @ a)

    def backward(self, grad):
        if self.matrix is None:
            return (np.zeros(self.source_shape),)
        return (np.asarray(self.matrix.T @ grad),)


class Log(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise DomainError("log of a non-positive value")
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class RowSoftmax(Function):
    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"row_softmax expects a matrix, got shape {a.shape}")
        # scipy subtracts the row maximum before exponentiating
        self.out = softmax(a, axis=1)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=1, keepdims=True)),)


class RowLogSoftmax(Function):
    """Fused ``log(softmax(a))`` per row via log-sum-exp."""

    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"row_log_softmax expects a matrix, got shape {a.shape}")
        out = a - logsumexp(a, axis=1, keepdims=True)
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * grad.sum(axis=1, keepdims=True),)


class CosineRows(Function):
    """
    ``out[i, j] = cos(a_i, b_j)`` for row vectors of ``a`` and ``b``.

    With ``eps > 0`` every norm is floored at ``eps``, so a zero row yields a
    zero similarity instead of an error.
    """

    def __init__(self, eps: float = 0.0):
        self.eps = eps

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
            raise ShapeError(f"cosine_rows: incompatible shapes {a.shape} and {b.shape}")
        norm_a = np.linalg.norm(a, axis=1)
        norm_b = np.linalg.norm(b, axis=1)
        if self.eps <= 0 and (np.any(norm_a == 0) or np.any(norm_b == 0)):
            raise ZeroNormError("cosine similarity of a zero vector")
        self.free_a = norm_a > self.eps
        self.free_b = norm_b > self.eps
        self.norm_a = np.maximum(norm_a, self.eps)
        self.norm_b = np.maximum(norm_b, self.eps)
        self.unit_a = a / self.norm_a[:, None]
        self.unit_b = b / self.norm_b[:, None]
        return self.unit_a @ self.unit_b.T

    def backward(self, grad):
        g_unit_a = grad @ self.unit_b
        g_unit_b = grad.T @ self.unit_a
        # Project out the radial component of unfloored rows, then undo the normalization
        radial_a = (g_unit_a * self.unit_a).sum(axis=1, keepdims=True) * self.free_a[:, None]
        radial_b = (g_unit_b * self.unit_b).sum(axis=1, keepdims=True) * self.free_b[:, None]
        g_a = g_unit_a - radial_a * self.unit_a
        g_b = g_unit_b - radial_b * self.unit_b
        return g_a / self.norm_a[:, None], g_b / self.norm_b[:, None]


class Transpose(Function):
    def forward(self, a):
        if a.ndim != 2:
            raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
        return a.T.copy()

    def backward(self, grad):
        return (grad.T,)


class TakeRows(Function):
    def __init__(self, indices: Sequence[int]):
        self.indices = np.asarray(indices, dtype=np.int64)

    def forward(self, a):
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= a.shape[0]):
            raise ShapeError("take_rows: index out of range")
        self.shape = a.shape
        return a[self.indices]

    def backward(self, grad):
        out = np.zeros(self.shape)
        np.add.at(out, self.indices, grad)
        return (out,)


class StackRows(Function):
    def forward(self, *vectors):
        if not vectors:
            raise ShapeError("stack_rows needs at least one vector")
        width = vectors[0].shape
        if any(v.ndim != 1 or v.shape != width for v in vectors):
            raise ShapeError("stack_rows expects vectors of one common length")
        return np.stack(vectors)

    def backward(self, grad):
        return tuple(grad[i] for i in range(grad.shape[0]))


class ScaleRows(Function):
    """Multiply row ``i`` by the constant ``factors[i]``."""

    def __init__(self, factors):
        self.factors = np.asarray(factors, dtype=np.float64)

    def forward(self, a):
        if a.ndim != 2 or a.shape[0] != self.factors.shape[0]:
            raise ShapeError(f"scale_rows: {self.factors.shape[0]} factors for shape {a.shape}")
        return a * self.factors[:, None]

    def backward(self, grad):
        return (grad * self.factors[:, None],)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def matmul(a, b) -> Tensor:
    return MatMul.apply(_as_tensor(a), _as_tensor(b))


def add(a, b) -> Tensor:
    return Add.apply(_as_tensor(a), _as_tensor(b))


def mul(a, b) -> Tensor:
    return Mul.apply(_as_tensor(a), _as_tensor(b))


def scalar_mul(a, c: float) -> Tensor:
    return ScalarMul.apply(_as_tensor(a), c=c)


def relu(a) -> Tensor:
    return Relu.apply(_as_tensor(a))


def concat(a, b, axis: int = 0) -> Tensor:
    return Concat.apply(_as_tensor(a), _as_tensor(b), axis=axis)


def sum_rows(a) -> Tensor:
    return SumRows.apply(_as_tensor(a))


def sum_all(a) -> Tensor:
    return SumAll.apply(_as_tensor(a))


def gather_sum(a, index_lists: Sequence[Sequence[int]]) -> Tensor:
    return GatherSum.apply(_as_tensor(a), index_lists=index_lists)


def log(a) -> Tensor:
    return Log.apply(_as_tensor(a))


def exp(a) -> Tensor:
    return Exp.apply(_as_tensor(a))


def row_softmax(a) -> Tensor:
    return RowSoftmax.apply(_as_tensor(a))


def row_log_softmax(a) -> Tensor:
    return RowLogSoftmax.apply(_as_tensor(a))


def cosine_rows(a, b, eps: float = 0.0) -> Tensor:
    return CosineRows.apply(_as_tensor(a), _as_tensor(b), eps=eps)


def transpose(a) -> Tensor:
    return Transpose.apply(_as_tensor(a))


def take_rows(a, indices: Sequence[int]) -> Tensor:
    return TakeRows.apply(_as_tensor(a), indices=indices)


def stack_rows(vectors: Sequence) -> Tensor:
    return StackRows.apply(*[_as_tensor(v) for v in vectors])


def scale_rows(a, factors) -> Tensor:
    return ScaleRows.apply(_as_tensor(a), factors=factors)


def grad_check(
    f: Callable[..., Tensor], inputs: Sequence[np.ndarray], epsilon: float = 1e-6
) -> float:
    """
    Compare backward() against central finite differences.

    Args:
        f: Program mapping input tensors to a scalar tensor
        inputs: Input arrays; every element is perturbed in turn
        epsilon (float): Step size in [1e-7, 1e-3]

    Returns:
        float: Maximum over elements of ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``

    Raises:
        ConfigError: ``epsilon`` lies outside [1e-7, 1e-3]
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError(f"epsilon must be in [1e-7, 1e-3], got {epsilon}")
    arrays = [np.array(x, dtype=np.float64) for x in inputs]

    with Tape():
        tensors = [Tensor(x, requires_grad=True) for x in arrays]
        out = f(*tensors)
        backward(out)
    analytic = [t.grad for t in tensors]

    def evaluate(values):
        return f(*[Tensor(v) for v in values]).item()

    worst = 0.0
    for k, base in enumerate(arrays):
        for index in np.ndindex(base.shape):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k][index] += epsilon
            minus[k][index] -= epsilon
            numeric = (evaluate(plus) - evaluate(minus)) / (2 * epsilon)
            exact = analytic[k][index]
            denominator = max(abs(exact), abs(numeric), 1e-8)
            worst = max(worst, abs(exact - numeric) / denominator)
    return worst
