"""
Tensor Module
Dense numpy-backed tensors with a reverse-mode gradient tape
"""

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from tensor_core.errors import ContractError, DimensionError, NumericError

_DTYPES = {"float64": np.float64, "float32": np.float32}
_default_dtype = np.float64
_state = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def set_default_dtype(name: str) -> None:
    """Switch between the 64-bit default and the opt-in 32-bit mode"""
    global _default_dtype
    if name not in _DTYPES:
        raise ValueError(f"Unknown precision '{name}', expected one of {sorted(_DTYPES)}")
    _default_dtype = _DTYPES[name]


def get_default_dtype():
    return _default_dtype


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Operations inside this block are not recorded on any tape"""
    previous = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """Dense row-major tensor that can take part in a gradient tape"""

    __array_priority__ = 1000

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.array(data, dtype=_default_dtype)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None

    @classmethod
    def _result(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str,
                backward: Optional[Callable[[np.ndarray], None]] = None) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out.op = op
        track = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
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
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "Tape":
        return backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label}, requires_grad={self.requires_grad})"

    # -- operators -----------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)
    def __pow__(self, exponent: float): return pow_scalar(self, exponent)
    def __getitem__(self, index): return slice_(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims: bool = False): return mean(self, axis, keepdims)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)


class Tape:
    """Topologically ordered record of the primitive operations behind a root tensor"""

    def __init__(self, root: Tensor):
        self.nodes: List[Tensor] = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.index = {id(node): position for position, node in enumerate(self.nodes)}

    def __len__(self) -> int:
        return len(self.nodes)

    def ops(self) -> List[str]:
        return [node.op for node in self.nodes]

    def replay_backward(self) -> None:
        """Visit every node once, in reverse topological order"""
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None


def backward(loss: Tensor) -> Tape:
    """Populate .grad of every requires_grad leaf with d(loss)/d(leaf)"""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss is not on a tape: none of its inputs requires grad")
    tape = Tape(loss)
    loss.grad = np.ones_like(loss.data)
    tape.replay_backward()
    return tape


# -- helpers -------------------------------------------------------------

def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(tensor: Tensor, grad: np.ndarray) -> None:
    if not tensor.requires_grad:
        return
    grad = _unbroadcast(grad, tensor.shape)
    if tensor.grad is None:
        tensor.grad = np.array(grad, dtype=tensor.data.dtype)
    else:
        tensor.grad = tensor.grad + grad


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def _check_nan(x: Tensor, op: str) -> None:
    if np.isnan(x.data).any():
        raise NumericError(f"{op}: NaN in input of shape {x.shape}")


# -- arithmetic ----------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def _backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return Tensor._result(a.data @ b.data, (a, b), "matmul", _backward)


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return Tensor._result(a.data + b.data, (a, b), "add", _backward)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return Tensor._result(a.data - b.data, (a, b), "sub", _backward)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def _backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return Tensor._result(a.data * b.data, (a, b), "mul", _backward)


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")

    def _backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return Tensor._result(a.data / b.data, (a, b), "div", _backward)


def neg(a: Tensor) -> Tensor:
    def _backward(g):
        _accumulate(a, -g)

    return Tensor._result(-a.data, (a,), "neg", _backward)


def pow_scalar(a: Tensor, exponent: float) -> Tensor:
    def _backward(g):
        _accumulate(a, g * exponent * a.data ** (exponent - 1))

    return Tensor._result(a.data ** exponent, (a,), "pow", _backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def _backward(g):
        _accumulate(a, g * out)

    return Tensor._result(out, (a,), "exp", _backward)


def log(a: Tensor) -> Tensor:
    _check_nan(a, "log")

    def _backward(g):
        _accumulate(a, g / a.data)

    return Tensor._result(np.log(a.data), (a,), "log", _backward)


def silu(a: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-a.data))

    def _backward(g):
        _accumulate(a, g * (sig + a.data * sig * (1.0 - sig)))

    return Tensor._result(a.data * sig, (a,), "silu", _backward)


def relu(a: Tensor) -> Tensor:
    def _backward(g):
        _accumulate(a, g * (a.data > 0))

    return Tensor._result(np.maximum(a.data, 0), (a,), "relu", _backward)


def clip(a: ArrayLike, low: float, high: float) -> Tensor:
    """Clamp to [low, high]; no gradient flows through clamped entries"""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)

    def _backward(g):
        _accumulate(a, g * inside)

    return Tensor._result(np.clip(a.data, low, high), (a,), "clip", _backward)


def minimum(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise min; ties send the gradient to the first operand"""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "minimum")
    take_a = a.data <= b.data

    def _backward(g):
        _accumulate(a, g * take_a)
        _accumulate(b, g * ~take_a)

    return Tensor._result(np.minimum(a.data, b.data), (a, b), "minimum", _backward)


# -- reductions and shape ops -------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape))

    return Tensor._result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), "sum", _backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g / count, a.shape))

    return Tensor._result(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), "mean", _backward)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {a.shape}")

    def _backward(g):
        _accumulate(a, g.T)

    return Tensor._result(a.data.T, (a,), "transpose", _backward)


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None

    def _backward(g):
        _accumulate(a, g.reshape(a.shape))

    return Tensor._result(out, (a,), "reshape", _backward)


def slice_(a: Tensor, index) -> Tensor:
    def _backward(g):
        full = np.zeros_like(a.data)
        full[index] += g
        _accumulate(a, full)

    return Tensor._result(a.data[index], (a,), "slice", _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        for tensor, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            _accumulate(tensor, piece)

    return Tensor._result(out, tensors, "concat", _backward)


def take_rows(a: Tensor, rows: np.ndarray) -> Tensor:
    """Gather rows by index (embedding lookup, expert dispatch)"""
    rows = np.asarray(rows, dtype=np.int64)

    def _backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, rows, g)
        _accumulate(a, full)

    return Tensor._result(a.data[rows], (a,), "take_rows", _backward)


def put_rows(a: Tensor, rows: np.ndarray, n_rows: int) -> Tensor:
    """Scatter rows of `a` into a zero tensor with n_rows rows; rows must be unique"""
    rows = np.asarray(rows, dtype=np.int64)
    out = np.zeros((n_rows,) + a.shape[1:], dtype=a.data.dtype)
    out[rows] = a.data

    def _backward(g):
        _accumulate(a, g[rows])

    return Tensor._result(out, (a,), "put_rows", _backward)


def pick(a: Tensor, columns: np.ndarray) -> Tensor:
    """out[i] = a[i, columns[i]]"""
    columns = np.asarray(columns, dtype=np.int64)
    if a.ndim != 2 or columns.shape != (a.shape[0],):
        raise DimensionError(f"pick: {a.shape} rows against index of shape {columns.shape}")
    rows = np.arange(a.shape[0])

    def _backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, columns), g)
        _accumulate(a, full)

    return Tensor._result(a.data[rows, columns], (a,), "pick", _backward)


# -- normalisers ---------------------------------------------------------

def softmax_rows(x: ArrayLike, scale: float = 1.0, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row softmax of scale*x with max subtraction; masked-out entries get probability 0"""
    x = as_tensor(x)
    if scale <= 0:
        raise ContractError(f"softmax scale must be positive, got {scale}")
    _check_nan(x, "softmax_rows")
    z = x.data * scale
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def _backward(g):
        _accumulate(x, scale * p * (g - (g * p).sum(axis=-1, keepdims=True)))

    return Tensor._result(p, (x,), "softmax_rows", _backward)


def log_softmax_rows(x: Tensor) -> Tensor:
    _check_nan(x, "log_softmax_rows")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)

    def _backward(g):
        _accumulate(x, g - p * g.sum(axis=-1, keepdims=True))

    return Tensor._result(out, (x,), "log_softmax_rows", _backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of integer targets under row-softmax logits"""
    picked = pick(log_softmax_rows(logits), targets)
    total = neg(sum_(picked))
    if reduction == "sum":
        return total
    return total / max(len(targets), 1)


def rms_norm(x: Tensor, weight: Optional[Tensor] = None, eps: float = 1e-6) -> Tensor:
    """Scale-only root-mean-square normalisation over the last axis"""
    inv = pow_scalar(mean(x * x, axis=-1, keepdims=True) + eps, -0.5)
    out = x * inv
    return out * weight if weight is not None else out


def rotate_pairs(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate adjacent pairs (x[2i], x[2i+1]) by the angles whose cos/sin are given"""
    if x.shape[-1] % 2:
        raise DimensionError(f"rotate_pairs needs an even last extent, got shape {x.shape}")
    even, odd = x.data[..., 0::2], x.data[..., 1::2]
    out = np.empty_like(x.data)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos

    def _backward(g):
        g_even, g_odd = g[..., 0::2], g[..., 1::2]
        full = np.empty_like(x.data)
        full[..., 0::2] = g_even * cos + g_odd * sin
        full[..., 1::2] = -g_even * sin + g_odd * cos
        _accumulate(x, full)

    return Tensor._result(out, (x,), "rotate_pairs", _backward)


def parameters_finite(params: Iterable[Tensor]) -> bool:
    return all(np.isfinite(p.data).all() for p in params)
