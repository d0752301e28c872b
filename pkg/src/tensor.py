"""
Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation builds a ``Function`` node that remembers its parents and
whatever it needs for the local gradient rule. ``Tensor.backward`` orders the
nodes reachable from a scalar loss into a ``ComputationTape`` and replays it
in reverse, so each node propagates its gradient exactly once.
"""
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ArgumentError, DimensionError

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, Sequence, float, int]


def _as_array(data: ArrayLike) -> np.ndarray:
    return np.array(data, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None,
                 _ctx: Optional["Function"] = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._ctx = _ctx

    def __repr__(self):
        label = f" {self.name}" if self.name else ""
        return f"<Tensor{label} shape={self.shape} requires_grad={self.requires_grad}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        """Same values, cut from the graph."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    # *** backward pass ***

    def backward(self):
        if self.data.size != 1:
            raise ArgumentError(f"backward needs a scalar loss, got shape {self.shape}")
        ComputationTape.from_output(self).run(self)

    # *** operators ***

    def __add__(self, other): return Add.apply(self, lift(other))
    def __radd__(self, other): return Add.apply(lift(other), self)
    def __sub__(self, other): return Add.apply(self, Scale.apply(lift(other), scale=-1.0))
    def __rsub__(self, other): return Add.apply(lift(other), Scale.apply(self, scale=-1.0))
    def __neg__(self): return Scale.apply(self, scale=-1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return Scale.apply(self, scale=float(other))
        return Mul.apply(self, lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other): return MatMul.apply(self, lift(other))

    def scale(self, c: float) -> "Tensor": return Scale.apply(self, scale=float(c))
    def relu(self) -> "Tensor": return ReLU.apply(self)
    def exp(self) -> "Tensor": return Exp.apply(self)
    def log(self, floor: float = 0.0) -> "Tensor": return Log.apply(self, floor=floor)
    def log1p(self, floor: float = -1.0 + 1e-12) -> "Tensor": return Log1p.apply(self, floor=floor)
    def abs(self) -> "Tensor": return Abs.apply(self)
    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else self.data.shape[axis]
        return Sum.apply(self, axis=axis, keepdims=keepdims).scale(1.0 / count)

    def softmax(self, axis: int = -1) -> "Tensor": return Softmax.apply(self, axis=axis)
    def logsumexp(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return LogSumExp.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "Tensor": return Reshape.apply(self, shape=shape)

    @property
    def T(self) -> "Tensor":
        return Transpose.apply(self)

    def reciprocal(self) -> "Tensor":
        """1/x expressed through the log/exp primitives; x must be positive."""
        return self.log().scale(-1.0).exp()


def lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One recorded primitive: parents plus a local gradient rule."""

    def __init__(self, *parents: Tensor, **kwargs):
        self.parents = parents
        self.needs_grad = [p.requires_grad for p in parents]
        self.kwargs = kwargs

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs) -> Tensor:
        fn = cls(*parents, **kwargs)
        out = fn.forward(*[p.data for p in parents])
        if not np.all(np.isfinite(out)):
            logger.debug(f"{cls.__name__} produced non-finite values")
        requires_grad = any(fn.needs_grad)
        return Tensor(out, requires_grad=requires_grad, _ctx=fn if requires_grad else None)

    def forward(self, *args: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


class ComputationTape:
    """Topologically ordered record of the functions behind one output."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self):
        return len(self.nodes)

    @classmethod
    def from_output(cls, output: Tensor) -> "ComputationTape":
        order: List[Tensor] = []
        visited = set()
        # iterative DFS, deep graphs would overflow the recursion limit
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if node._ctx is not None:
                for parent in node._ctx.parents:
                    if parent.requires_grad and id(parent) not in visited:
                        stack.append((parent, False))
        return cls(order)

    def run(self, output: Tensor):
        grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node._ctx is None:
                # leaf: accumulate across backward calls
                node.grad = grad.copy() if node.grad is None else node.grad + grad
                continue
            parent_grads = node._ctx.backward(grad)
            for parent, needs, g in zip(node._ctx.parents, node._ctx.needs_grad, parent_grads):
                if not needs or g is None:
                    continue
                g = _unbroadcast(g, parent.shape)
                key = id(parent)
                grads[key] = g if key not in grads else grads[key] + g


# *** primitives ***

class Add(Function):
    def forward(self, x, y): return x + y
    def backward(self, grad): return grad, grad


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad): return grad * self.y, grad * self.x


class Scale(Function):
    def forward(self, x): return x * self.kwargs["scale"]
    def backward(self, grad): return (grad * self.kwargs["scale"],)


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[0]:
            raise DimensionError(f"matmul shapes {x.shape} and {y.shape} do not align")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad): return grad @ self.y.T, self.x.T @ grad


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad): return (grad * self.mask,)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad): return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        floor = self.kwargs["floor"]
        self.x = x
        self.active = x > floor if floor > 0 else np.ones_like(x, dtype=bool)
        with np.errstate(divide="ignore"):
            return np.log(np.maximum(x, floor) if floor > 0 else x)

    def backward(self, grad):
        safe = np.where(self.active, self.x, 1.0)
        return (np.where(self.active, grad / safe, 0.0),)


class Log1p(Function):
    def forward(self, x):
        floor = self.kwargs["floor"]
        self.x = x
        self.active = x > floor
        return np.log1p(np.maximum(x, floor))

    def backward(self, grad):
        safe = np.where(self.active, self.x, 0.0)
        return (np.where(self.active, grad / (1.0 + safe), 0.0),)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad): return (grad * self.sign,)


class Sum(Function):
    def forward(self, x):
        self.in_shape = x.shape
        return np.sum(x, axis=self.kwargs["axis"], keepdims=self.kwargs["keepdims"])

    def backward(self, grad):
        axis = self.kwargs["axis"]
        if axis is not None and not self.kwargs["keepdims"]:
            grad = np.expand_dims(grad, axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Softmax(Function):
    def forward(self, x):
        axis = self.kwargs["axis"]
        shifted = x - np.max(x, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        axis = self.kwargs["axis"]
        s = self.out
        return (s * (grad - np.sum(grad * s, axis=axis, keepdims=True)),)


class LogSumExp(Function):
    def forward(self, x):
        axis, keepdims = self.kwargs["axis"], self.kwargs["keepdims"]
        if x.size == 0:
            raise ArgumentError("logsumexp of an empty tensor")
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
        total = np.sum(e, axis=axis, keepdims=True)
        self.weights = e / total
        out = m + np.log(total)
        return out if keepdims else (np.squeeze(out, axis=axis) if axis is not None else out.reshape(()))

    def backward(self, grad):
        axis = self.kwargs["axis"]
        if not self.kwargs["keepdims"]:
            grad = np.expand_dims(grad, axis) if axis is not None else np.reshape(grad, (1,) * self.weights.ndim)
        return (grad * self.weights,)


class Reshape(Function):
    def forward(self, x):
        self.in_shape = x.shape
        try:
            return x.reshape(self.kwargs["shape"])
        except ValueError as e:
            raise DimensionError(str(e)) from None

    def backward(self, grad): return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x): return x.T
    def backward(self, grad): return (grad.T,)


class Concat(Function):
    def forward(self, *xs):
        axis = self.kwargs["axis"]
        self.sizes = [x.shape[axis] for x in xs]
        try:
            return np.concatenate(xs, axis=axis)
        except ValueError as e:
            raise DimensionError(str(e)) from None

    def backward(self, grad):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=self.kwargs["axis"]))


# *** functional surface ***

def matmul(a: Tensor, b: Tensor) -> Tensor:
    return MatMul.apply(lift(a), lift(b))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not tensors:
        raise ArgumentError("concat of nothing")
    return Concat.apply(*[lift(t) for t in tensors], axis=axis)


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    return lift(logits).softmax(axis=axis)


def logsumexp(v: Union[Tensor, ArrayLike], axis: Optional[int] = None) -> Union[Tensor, float]:
    """Stable log-sum-exp. Plain sequences give a float, tensors stay in the graph."""
    if isinstance(v, Tensor):
        return v.logsumexp(axis=axis)
    arr = _as_array(v)
    if arr.size == 0:
        raise ArgumentError("logsumexp of an empty vector")
    return Tensor(arr).logsumexp(axis=axis).item() if axis is None else Tensor(arr).logsumexp(axis=axis).data


def parameters_to_vector(params: Iterable[Tensor]) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for p in params])
