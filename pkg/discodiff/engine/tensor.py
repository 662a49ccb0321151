"""
Dense float64 tensors with a reverse-mode autodiff tape
"""

from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp


ArrayLike = Union[np.ndarray, Sequence, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class ShapeError(ValueError):
    """Raised when the shapes of op inputs do not agree"""


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a value or gradient"""


class GraphError(RuntimeError):
    """Raised for a malformed backward request"""


class OpKind(str, Enum):
    """Operation kinds recorded on the tape"""

    LEAF = "leaf"
    ADD = "add"
    SUBTRACT = "subtract"
    MULTIPLY = "multiply"
    SCALE = "scale"
    MATMUL = "matmul"
    AFFINE = "affine"
    SILU = "silu"
    SOFTMAX = "softmax"
    LOG_SOFTMAX = "log_softmax"
    SUM = "sum"
    MEAN = "mean"
    SQ_NORM = "sq_norm"
    CONCAT = "concat"
    SLICE = "slice"


class Tensor:
    """
    Dense real array with shape metadata and an optional tape node.

    A tensor that requires grad remembers the op that produced it, its input
    tensors and a closure mapping the output gradient to input gradients.
    Gradients are never stored on the tensor itself; `grad` and `backward`
    return them, so a parameter snapshot can be shared read-only.
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _op: OpKind = OpKind.LEAF,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
    ):
        array = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(array)):
            label = name or _op.value
            raise NonFiniteError(f"{label} produced non-finite values")
        self.data = array
        self.requires_grad = requires_grad
        self.name = name
        self.op = _op
        self.parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op.value}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, as_tensor(other))

    def __sub__(self, other: "Tensor") -> "Tensor":
        return subtract(self, as_tensor(other))

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, as_tensor(other))

    def __rmul__(self, other: float) -> "Tensor":
        return self.__mul__(other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, as_tensor(other))


def as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    """Wrap a constant as a tensor, passing tensors through"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(data: ArrayLike, name: str) -> Tensor:
    """Create a named leaf tensor that requires grad"""
    return Tensor(data, requires_grad=True, name=name)


def _node(data: np.ndarray, op: OpKind, parents: Tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    tracked = any(p.requires_grad for p in parents)
    if tracked:
        return Tensor(data, requires_grad=True, _op=op, _parents=parents, _backward=backward)
    return Tensor(data, _op=op)


def _same_shape(op: OpKind, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op.value}: shape mismatch {a.shape} vs {b.shape}")


# Forward ops

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(OpKind.ADD, a, b)
    return _node(a.data + b.data, OpKind.ADD, (a, b), lambda g: (g, g))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(OpKind.SUBTRACT, a, b)
    return _node(a.data - b.data, OpKind.SUBTRACT, (a, b), lambda g: (g, -g))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(OpKind.MULTIPLY, a, b)
    a_data, b_data = a.data, b.data
    return _node(a_data * b_data, OpKind.MULTIPLY, (a, b), lambda g: (g * b_data, g * a_data))


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    return _node(a.data * factor, OpKind.SCALE, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return g @ b_data.T, a_data.T @ g

    return _node(a_data @ b_data, OpKind.MATMUL, (a, b), backward)


def affine(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """x @ W + b with W stored as (in, out); the only op that broadcasts (the bias)"""
    if weight.data.ndim != 2 or bias.shape != (weight.shape[1],):
        raise ShapeError(f"affine: weight {weight.shape} does not match bias {bias.shape}")
    if x.data.ndim not in (1, 2) or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"affine: shape mismatch {x.shape} vs {weight.shape}")
    x_data, w_data = x.data, weight.data

    def backward(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if x_data.ndim == 1:
            return g @ w_data.T, np.outer(x_data, g), g
        return g @ w_data.T, x_data.T @ g, g.sum(axis=0)

    return _node(x_data @ w_data + bias.data, OpKind.AFFINE, (x, weight, bias), backward)


def silu(a: Tensor) -> Tensor:
    sig = expit(a.data)
    a_data = a.data
    return _node(a_data * sig, OpKind.SILU, (a,), lambda g: (g * (sig + a_data * sig * (1.0 - sig)),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis"""
    probs = np.exp(a.data - logsumexp(a.data, axis=-1, keepdims=True))

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (probs * (g - np.sum(g * probs, axis=-1, keepdims=True)),)

    return _node(probs, OpKind.SOFTMAX, (a,), backward)


def log_softmax(a: Tensor) -> Tensor:
    out = a.data - logsumexp(a.data, axis=-1, keepdims=True)
    probs = np.exp(out)

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        return (g - probs * np.sum(g, axis=-1, keepdims=True),)

    return _node(out, OpKind.LOG_SOFTMAX, (a,), backward)


def _spread(g: np.ndarray, shape: Tuple[int, ...], axis: Optional[int]) -> np.ndarray:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def reduce_sum(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape
    return _node(np.sum(a.data, axis=axis), OpKind.SUM, (a,), lambda g: (_spread(g, shape, axis),))


def reduce_mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    shape = a.shape
    count = a.size if axis is None else shape[axis]
    return _node(
        np.mean(a.data, axis=axis), OpKind.MEAN, (a,), lambda g: (_spread(g, shape, axis) / count,)
    )


def sq_norm(a: Tensor, axis: Optional[int] = None) -> Tensor:
    """Squared L2 norm, over everything or along one axis"""
    shape, a_data = a.shape, a.data
    return _node(
        np.sum(a_data * a_data, axis=axis),
        OpKind.SQ_NORM,
        (a,),
        lambda g: (2.0 * a_data * _spread(g, shape, axis),),
    )


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate over the last axis"""
    if not tensors:
        raise ShapeError("concat: no inputs")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(f"concat: shape mismatch {tensors[0].shape} vs {t.shape}")
    widths = [t.shape[-1] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def backward(g: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.split(g, splits, axis=-1))

    return _node(np.concatenate([t.data for t in tensors], axis=-1), OpKind.CONCAT, tuple(tensors), backward)


def take(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice [start, stop) of the last axis"""
    width = a.shape[-1]
    if not 0 <= start < stop <= width:
        raise ShapeError(f"slice: [{start}, {stop}) out of range for shape {a.shape}")
    shape = a.shape

    def backward(g: np.ndarray) -> Tuple[np.ndarray]:
        full = np.zeros(shape)
        full[..., start:stop] = g
        return (full,)

    return _node(a.data[..., start:stop], OpKind.SLICE, (a,), backward)


_FORWARD: Dict[OpKind, Callable[..., Tensor]] = {
    OpKind.ADD: add,
    OpKind.SUBTRACT: subtract,
    OpKind.MULTIPLY: multiply,
    OpKind.SCALE: scale,
    OpKind.MATMUL: matmul,
    OpKind.AFFINE: affine,
    OpKind.SILU: silu,
    OpKind.SOFTMAX: softmax,
    OpKind.LOG_SOFTMAX: log_softmax,
    OpKind.SUM: reduce_sum,
    OpKind.MEAN: reduce_mean,
    OpKind.SQ_NORM: sq_norm,
    OpKind.CONCAT: lambda *tensors: concat(tensors),
    OpKind.SLICE: take,
}


def forward_op(kind: Union[OpKind, str], *inputs, **attrs) -> Tensor:
    """
    Apply an op by kind

    Args:
        kind: Op kind (enum member or its string value)
        inputs: Input tensors, plus scalar operands for `scale` and `slice`
        attrs: Keyword attributes such as `axis` for reductions

    Returns:
        Output tensor, registered on the tape when any input requires grad
    """
    op = OpKind(kind)
    if op not in _FORWARD:
        raise ValueError(f"Unsupported op kind: {op.value}")
    return _FORWARD[op](*inputs, **attrs)


# Backward

def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    state: Dict[int, int] = {}  # 1 = on stack, 2 = done
    stack: List[Tuple[Tensor, int]] = [(root, 0)]
    while stack:
        node, child = stack.pop()
        if child == 0:
            if state.get(id(node)) == 2:
                continue
            state[id(node)] = 1
        if child < len(node.parents):
            stack.append((node, child + 1))
            parent = node.parents[child]
            if not parent.requires_grad:
                continue
            mark = state.get(id(parent))
            if mark == 1:
                raise GraphError(f"cycle detected at {parent.op.value} node")
            if mark is None:
                stack.append((parent, 0))
        else:
            state[id(node)] = 2
            order.append(node)
    return order


def grad(
    output: Tensor,
    inputs: Iterable[Tensor],
    seed: Optional[np.ndarray] = None,
) -> List[np.ndarray]:
    """
    Reverse-mode gradients of `output` with respect to `inputs`

    Args:
        output: Tensor to differentiate; must be a scalar unless `seed` is given
        inputs: Tensors to differentiate with respect to
        seed: Upstream gradient with the shape of `output`

    Returns:
        One gradient array per input; inputs not on the tape get zeros
    """
    inputs = list(inputs)
    if seed is None:
        if output.size != 1 or output.data.ndim != 0:
            raise GraphError(f"backward needs a scalar loss, got shape {output.shape}")
        seed = np.ones(())
    seed = np.asarray(seed, dtype=np.float64)
    if seed.shape != output.shape:
        raise ShapeError(f"backward: seed shape {seed.shape} vs output {output.shape}")

    grads: Dict[int, np.ndarray] = {}
    if output.requires_grad:
        grads[id(output)] = seed
        for node in reversed(_topological_order(output)):
            upstream = grads.get(id(node))
            if upstream is None or node._backward is None:
                continue
            for parent, contribution in zip(node.parents, node._backward(upstream)):
                if not parent.requires_grad or contribution is None:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + contribution
                else:
                    grads[id(parent)] = contribution

    results = []
    for tensor in inputs:
        value = grads.get(id(tensor))
        if value is None:
            value = np.zeros(tensor.shape)
        elif not np.all(np.isfinite(value)):
            raise NonFiniteError(f"gradient of {tensor.name or tensor.op.value} is non-finite")
        results.append(np.array(value, dtype=np.float64).reshape(tensor.shape))
    return results


def backward(loss: Tensor, params: Dict[str, Tensor]) -> Dict[str, np.ndarray]:
    """Gradient map d loss / d p for every named parameter"""
    names = list(params)
    return dict(zip(names, grad(loss, [params[n] for n in names])))
