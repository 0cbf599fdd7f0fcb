"""Dense tensors with tape-based reverse-mode differentiation.

Values live in numpy arrays. Every differentiable operation executed while a
`Tape` is active and at least one operand requires a gradient is appended to
that tape; `Tape.backward` replays the entries in reverse execution order.

32-bit floats are the default. Gradient checks switch to 64-bit through
`precision("float64")`, since central differences are meaningless at 32-bit.
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.special import expit

from gmm_wae.exceptions import (
    ContractError,
    DimensionError,
    GradCheckInvalidError,
    NumericError,
)

logger = logging.getLogger(__name__)

_DTYPES = {"float32": np.float32, "float64": np.float64}

_default_dtype = np.float32
_active_tapes: list["Tape"] = []


def set_default_dtype(dtype: Union[str, type]):
    global _default_dtype

    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ContractError(f"Unsupported dtype {dtype!r} (float32 or float64)")
        dtype = _DTYPES[dtype]

    if dtype not in (np.float32, np.float64):
        raise ContractError(f"Unsupported dtype {dtype!r} (float32 or float64)")

    _default_dtype = dtype


def get_default_dtype() -> type:
    return _default_dtype


@contextmanager
def precision(dtype: Union[str, type]):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def _current_tape() -> Optional["Tape"]:
    return _active_tapes[-1] if _active_tapes else None


class Tensor:
    def __init__(
        self,
        data,
        requires_grad: bool = False,
        dtype: Optional[type] = None,
        name: Optional[str] = None,
    ):
        self.data = np.array(data, dtype=dtype or _default_dtype)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._tape: Optional[Tape] = None

    @staticmethod
    def _wrap(data: np.ndarray, requires_grad: bool) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        out._tape = None
        return out

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return (
            f"Tensor{label}(shape={self.shape}, dtype={self.data.dtype.name}, "
            f"requires_grad={self.requires_grad})"
        )

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single value, shape is {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    # Operators

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(_as_tensor(other, self), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(_as_tensor(other, self), self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other, self), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take_slice(self, index)

    def sum(self, axis: Optional[int] = None, keepdims: bool = False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def square(self):
        return square(self)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeEntry:
    op: str
    inputs: tuple
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of differentiable operations of one training step.

    ```
    >>> with Tape() as tape:
    ...     loss = (x * y).sum()
    >>> tape.backward(loss)
    ```
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []

    def __enter__(self) -> "Tape":
        _active_tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tapes.remove(self)

    def __len__(self):
        return len(self.entries)

    def record(self, op: str, inputs: tuple, output: Tensor, backward: BackwardFn):
        output._tape = self
        self.entries.append(TapeEntry(op, inputs, output, backward))

    def backward(self, loss: Tensor, reset: bool = True):
        """Populate `grad` of every `requires_grad` tensor reachable from `loss`.

        With `reset=False` the gradients of this pass are added to the existing
        `grad` buffers instead of replacing them.

        Raises:
            ContractError: `loss` is not a scalar or was not produced on this tape.
            NumericError: `loss` or a propagated gradient is not finite.
        """

        if loss.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

        if loss._tape is not self:
            raise ContractError("The loss was not produced on this tape")

        if not np.all(np.isfinite(loss.data)):
            raise NumericError(
                f"Loss is not finite: {loss.item()}{self.__first_non_finite()}"
            )

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for entry in reversed(self.entries):
            out_grad = grads.get(id(entry.output))
            if out_grad is None:
                continue

            input_grads = entry.backward(out_grad)
            for operand, operand_grad in zip(entry.inputs, input_grads):
                if operand_grad is None or not operand.requires_grad:
                    continue

                if not np.all(np.isfinite(operand_grad)):
                    raise NumericError(
                        f"Non-finite gradient produced by op {entry.op!r}"
                    )

                key = id(operand)
                if key in grads:
                    grads[key] = grads[key] + operand_grad
                else:
                    grads[key] = operand_grad

        for tensor in self.__tracked_tensors():
            grad = grads.get(id(tensor))
            if grad is None:
                grad = np.zeros_like(tensor.data)
            grad = np.asarray(grad, dtype=tensor.data.dtype).reshape(tensor.shape)

            if reset or tensor.grad is None:
                tensor.grad = grad.copy()
            else:
                tensor.grad = tensor.grad + grad

    def __first_non_finite(self) -> str:
        for entry in self.entries:
            if not np.all(np.isfinite(entry.output.data)):
                return f" (first produced by op {entry.op!r})"
        return ""

    def __tracked_tensors(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for entry in self.entries:
            for tensor in (*entry.inputs, entry.output):
                if tensor.requires_grad:
                    seen.setdefault(id(tensor), tensor)
        return list(seen.values())


def backward(loss: Tensor, reset: bool = True):
    if loss._tape is None:
        raise ContractError("The loss is not on an active tape")

    loss._tape.backward(loss, reset=reset)


def check_finite(tensor: Tensor, what: str):
    if not np.all(np.isfinite(tensor.data)):
        raise NumericError(f"{what} is not finite")


def _as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value

    dtype = like.data.dtype if like is not None else _default_dtype
    return Tensor._wrap(np.asarray(value, dtype=dtype), False)


def _result(op: str, data: np.ndarray, operands: tuple, backward: BackwardFn) -> Tensor:
    requires_grad = any(operand.requires_grad for operand in operands)
    out = Tensor._wrap(data, requires_grad)

    if requires_grad:
        tape = _current_tape()
        if tape is not None:
            tape.record(op, operands, out, backward)

    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)

    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)

    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}")


# Elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("div", a, b)

    def backward(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _result("div", a.data / b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def square(a: Tensor) -> Tensor:
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return _result("exp", out_data, (a,), lambda g: (g * out_data,))


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out_data = np.log(a.data)
    return _result("log", out_data, (a,), lambda g: (g / a.data,))


def sigmoid(a: Tensor) -> Tensor:
    out_data = expit(a.data)
    return _result(
        "sigmoid", out_data, (a,), lambda g: (g * out_data * (1.0 - out_data),)
    )


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return _result("tanh", out_data, (a,), lambda g: (g * (1.0 - out_data**2),))


# Linear algebra and shape


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b, a)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not chain")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got shape {a.shape}")

    return _result("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple) -> Tensor:
    try:
        out_data = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view shape {a.shape} as {shape}")

    return _result("reshape", out_data, (a,), lambda g: (g.reshape(a.shape),))


def take_slice(a: Tensor, index) -> Tensor:
    out_data = a.data[index]

    def backward(g):
        grad = np.zeros_like(a.data)
        np.add.at(grad, index, g)
        return (grad,)

    return _result("slice", out_data, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")

    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}")

    sizes = [t.shape[axis] for t in tensors]
    split_points = np.cumsum(sizes)[:-1]

    def backward(g):
        return np.split(g, split_points, axis=axis)

    return _result("concat", out_data, tuple(tensors), backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for tensor in tensors:
        shape = list(tensor.shape)
        shape.insert(axis if axis >= 0 else len(shape) + 1 + axis, 1)
        expanded.append(reshape(tensor, tuple(shape)))
    return concat(expanded, axis=axis)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractError(
            f"embedding ids must be in [0, {table.shape[0]}), got "
            f"[{ids.min()}, {ids.max()}]"
        )

    def backward(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return _result("embedding", table.data[ids], (table,), backward)


# Reductions


def reduce_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out_data = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", out_data, (a,), backward)


def reduce_mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


# Fused losses


def softmax_cross_entropy(
    logits: Tensor, targets: np.ndarray, mask: Optional[np.ndarray] = None
) -> Tensor:
    """Per-row negative log-likelihood of `targets` under `softmax(logits)`.

    Rows whose `mask` entry is 0 contribute exactly 0 and receive no gradient.
    """

    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy needs (rows, classes), got {logits.shape}")

    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise DimensionError(
            f"softmax_cross_entropy: targets {targets.shape} vs logits {logits.shape}"
        )

    if mask is None:
        mask = np.ones(logits.shape[0], dtype=logits.data.dtype)
    mask = np.asarray(mask, dtype=logits.data.dtype)

    rows = np.arange(logits.shape[0])
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp_shifted = np.exp(shifted)
    partition = exp_shifted.sum(axis=1)
    log_probs_target = shifted[rows, targets] - np.log(partition)
    out_data = -log_probs_target * mask

    def backward(g):
        probs = exp_shifted / partition[:, None]
        probs[rows, targets] -= 1.0
        return (probs * (g * mask)[:, None],)

    return _result("softmax_cross_entropy", out_data, (logits,), backward)


# Gradient checking


def _evaluate(f: Callable[..., Tensor], inputs: Sequence[Tensor]) -> float:
    return float(np.asarray(f(*inputs).data, dtype=np.float64).reshape(-1)[0])


def grad_check(
    f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-4
) -> float:
    """Compare analytic gradients of `f(*inputs)` against central differences.

    Returns the maximum over every input coordinate of
    |analytic - numeric| / max(1, |analytic|, |numeric|).

    Raises:
        ContractError: `eps` is not positive or an input is not finite.
        GradCheckInvalidError: two evaluations at the same point disagree.
    """

    if eps <= 0:
        raise ContractError(f"eps must be positive, got {eps}")

    for tensor in inputs:
        check_finite(tensor, "grad_check input")

    flags = [tensor.requires_grad for tensor in inputs]
    try:
        for tensor in inputs:
            tensor.requires_grad = True
        return _max_relative_error(f, inputs, eps)
    finally:
        for tensor, flag in zip(inputs, flags):
            tensor.requires_grad = flag


def _max_relative_error(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float) -> float:
    with Tape() as tape:
        loss = f(*inputs)
    tape.backward(loss)

    analytic = [
        np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64).copy()
        for t in inputs
    ]

    first_value = _evaluate(f, inputs)
    second_value = _evaluate(f, inputs)
    if first_value != second_value:
        raise GradCheckInvalidError(
            f"f is not deterministic: {first_value!r} != {second_value!r}"
        )

    max_error = 0.0
    for tensor, analytic_grad in zip(inputs, analytic):
        flat = tensor.data.reshape(-1)
        flat_grad = analytic_grad.reshape(-1)

        for i in range(flat.size):
            original = flat[i]

            flat[i] = original + eps
            plus = _evaluate(f, inputs)
            flat[i] = original - eps
            minus = _evaluate(f, inputs)
            flat[i] = original

            numeric = (plus - minus) / (2.0 * eps)
            error = abs(flat_grad[i] - numeric) / max(
                1.0, abs(flat_grad[i]), abs(numeric)
            )
            max_error = max(max_error, error)

    logger.debug("grad_check over %d inputs: max relative error %.3e", len(inputs), max_error)
    return max_error
