"""Reverse-mode automatische differentiatie op numpy arrays (float64).

Elke bewerking is een Function met forward op arrays en backward die per ouder een gradiënt
teruggeeft. Tensor.backward loopt de graaf één keer in omgekeerde topologische volgorde af en
telt gradiënten op in de bladeren; herhaalde aanroepen accumuleren.
"""
import threading
from collections import OrderedDict
from contextlib import contextmanager
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import GraphError, ShapeError

RMS_EPS = 1e-6

_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Schakel het opbouwen van de rekengraaf uit voor de huidige thread."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Tel de gradiënt op over assen die door broadcasting zijn toegevoegd of uitgerekt."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array met optionele gradiënt en een verwijzing naar de bewerking die hem maakte."""

    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = np.zeros_like(self.data) if requires_grad else None
        self.name = name
        self._ctx: Optional["Function"] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._ctx is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operatoren
    def __add__(self, other): return Add.apply(self, other)
    def __radd__(self, other): return Add.apply(other, self)
    def __sub__(self, other): return Sub.apply(self, other)
    def __rsub__(self, other): return Sub.apply(other, self)
    def __mul__(self, other): return Mul.apply(self, other)
    def __rmul__(self, other): return Mul.apply(other, self)
    def __truediv__(self, other): return Div.apply(self, other)
    def __rtruediv__(self, other): return Div.apply(other, self)
    def __neg__(self): return Neg.apply(self)
    def __matmul__(self, other): return MatMul.apply(self, other)
    def __getitem__(self, index): return GetItem.apply(self, index=index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def exp(self) -> "Tensor": return Exp.apply(self)
    def log(self) -> "Tensor": return Log.apply(self)
    def tanh(self) -> "Tensor": return Tanh.apply(self)
    def sigmoid(self) -> "Tensor": return Sigmoid.apply(self)

    def _topological_order(self) -> List["Tensor"]:
        """Knopen in volgorde ouders-voor-kinderen (iteratieve DFS)."""
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
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
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Vul .grad van alle bladeren die aan deze (scalaire) tensor bijdragen."""
        if not self.requires_grad:
            raise GraphError("backward op een tensor zonder rekengraaf (forward niet met gradiënten uitgevoerd)")
        if grad is None:
            if self.data.size != 1:
                raise GraphError(f"backward vereist een scalaire loss, kreeg vorm {self.shape}")
            grad = np.ones_like(self.data)
        pending: Dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(self._topological_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


TensorLike = Union[Tensor, np.ndarray, float, int]


def as_tensor(value: TensorLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """Bewerking in de rekengraaf; forward op arrays, backward per ouder."""

    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *inputs, **kwargs) -> Tensor:
        tensors = [as_tensor(x) for x in inputs]
        fn = cls(*tensors)
        out = Tensor(fn.forward(*[t.data for t in tensors], **kwargs))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._ctx = fn
        return out

    def forward(self, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class Div(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x / y

    def backward(self, grad):
        gx = grad / self.y
        gy = -grad * self.x / (self.y * self.y)
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


class Neg(Function):
    def forward(self, x):
        return -x

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    def forward(self, x, y):
        if x.ndim < 2 or y.ndim < 2:
            raise ShapeError(f"matmul verwacht minstens 2-dimensionale operanden, kreeg {x.shape} en {y.shape}")
        if x.shape[-1] != y.shape[-2]:
            raise ShapeError(f"matmul vormen passen niet: {x.shape} @ {y.shape}")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        gx = grad @ np.swapaxes(self.y, -1, -2)
        gy = np.swapaxes(self.x, -1, -2) @ grad
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(grad, (1,) * len(shape)), shape)
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    axes = tuple(a % len(shape) for a in axes)
    if not keepdims:
        for a in sorted(axes):
            grad = np.expand_dims(grad, a)
    return np.broadcast_to(grad, shape)


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.sum(x, axis=axis, keepdims=keepdims)

    def backward(self, grad):
        return (np.array(_expand_reduced(grad, self.shape, self.axis, self.keepdims)),)


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = np.mean(x, axis=axis, keepdims=keepdims)
        self.count = x.size // max(np.size(out), 1) if x.size else 1
        return out

    def backward(self, grad):
        return (np.array(_expand_reduced(grad, self.shape, self.axis, self.keepdims)) / self.count,)


class Exp(Function):
    def forward(self, x):
        self.out = np.exp(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Tanh(Function):
    def forward(self, x):
        self.out = np.tanh(x)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class Sigmoid(Function):
    def forward(self, x):
        self.out = _stable_sigmoid(x)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Silu(Function):
    def forward(self, x):
        self.x = x
        self.sig = _stable_sigmoid(x)
        return x * self.sig

    def backward(self, grad):
        return (grad * (self.sig + self.x * self.sig * (1.0 - self.sig)),)


def _softmax_array(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def _log_softmax_array(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


class Softmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        self.out = _softmax_array(x, axis)
        return self.out

    def backward(self, grad):
        inner = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - inner),)


class LogSoftmax(Function):
    def forward(self, x, axis=-1):
        self.axis = axis
        out = _log_softmax_array(x, axis)
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * np.sum(grad, axis=self.axis, keepdims=True),)


class RmsNorm(Function):
    """y = x / sqrt(mean(x^2) + eps) * gain over de laatste as."""

    def forward(self, x, gain, eps=RMS_EPS):
        if gain.shape != x.shape[-1:]:
            raise ShapeError(f"RMSNorm gain {gain.shape} past niet bij laatste as van {x.shape}")
        self.gain = gain
        self.rms = np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
        self.xhat = x / self.rms
        return self.xhat * gain

    def backward(self, grad):
        dxhat = grad * self.gain
        dgain = np.sum(grad * self.xhat, axis=tuple(range(grad.ndim - 1)))
        inner = np.mean(dxhat * self.xhat, axis=-1, keepdims=True)
        dx = (dxhat - self.xhat * inner) / self.rms
        return dx, dgain


class Embedding(Function):
    """Rijen uit een tabel opzoeken; alleen opgezochte rijen krijgen gradiënt."""

    def forward(self, table, ids=None):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise ShapeError(f"Token id buiten tabel met {table.shape[0]} rijen")
        self.table_shape, self.ids = table.shape, ids
        return table[ids]

    def backward(self, grad):
        gtable = np.zeros(self.table_shape, dtype=np.float64)
        np.add.at(gtable, self.ids.reshape(-1), grad.reshape(-1, self.table_shape[1]))
        return (gtable,)


class GetItem(Function):
    def forward(self, x, index=None):
        self.shape, self.index = x.shape, index
        try:
            return np.array(x[index])
        except IndexError as exc:
            raise ShapeError(f"Index {index!r} ongeldig voor vorm {x.shape}: {exc}")

    def backward(self, grad):
        gx = np.zeros(self.shape, dtype=np.float64)
        np.add.at(gx, self.index, grad)
        return (gx,)


class Concat(Function):
    def forward(self, *xs, axis=0):
        try:
            out = np.concatenate(xs, axis=axis)
        except ValueError as exc:
            raise ShapeError(f"concat vormen passen niet: {[x.shape for x in xs]}: {exc}")
        self.axis = axis
        self.splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return out

    def backward(self, grad):
        return tuple(np.split(grad, self.splits, axis=self.axis))


class Reshape(Function):
    def forward(self, x, shape=None):
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"reshape van {x.shape} naar {shape} kan niet: {exc}")

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        self.axes = tuple(axes) if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class GatherLast(Function):
    """x[..., idx[...]] langs de laatste as."""

    def forward(self, x, idx=None):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.shape != x.shape[:-1]:
            raise ShapeError(f"gather index {idx.shape} past niet bij {x.shape}")
        self.shape, self.idx = x.shape, idx
        return np.take_along_axis(x, idx[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        gx = np.zeros(self.shape, dtype=np.float64)
        flat = gx.reshape(-1, self.shape[-1])
        np.add.at(flat, (np.arange(flat.shape[0]), self.idx.reshape(-1)), grad.reshape(-1))
        return (gx,)


class MaskedFill(Function):
    """Vervang posities waar mask waar is door een constante (geen gradiënt daar)."""

    def forward(self, x, mask=None, value=0.0):
        self.mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        return np.where(self.mask, value, x)

    def backward(self, grad):
        return (np.where(self.mask, 0.0, grad),)


# Functionele vorm
def matmul(x: TensorLike, y: TensorLike) -> Tensor: return MatMul.apply(x, y)
def add(x: TensorLike, y: TensorLike) -> Tensor: return Add.apply(x, y)
def exp(x: TensorLike) -> Tensor: return Exp.apply(x)
def log(x: TensorLike) -> Tensor: return Log.apply(x)
def tanh(x: TensorLike) -> Tensor: return Tanh.apply(x)
def sigmoid(x: TensorLike) -> Tensor: return Sigmoid.apply(x)
def silu(x: TensorLike) -> Tensor: return Silu.apply(x)


def softmax(x: TensorLike, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def log_softmax(x: TensorLike, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


def rms_norm(x: TensorLike, gain: TensorLike, eps: float = RMS_EPS) -> Tensor:
    return RmsNorm.apply(x, gain, eps=eps)


def embedding(table: Tensor, ids) -> Tensor:
    return Embedding.apply(table, ids=ids)


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def gather_last(x: TensorLike, idx) -> Tensor:
    return GatherLast.apply(x, idx=idx)


def masked_fill(x: TensorLike, mask, value: float) -> Tensor:
    return MaskedFill.apply(x, mask=mask, value=value)


class ParameterVector:
    """Geordende, benoemde parameters met stapteller en seed."""

    def __init__(self, seed: int = 0):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self.step = 0
        self.seed = int(seed)

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeError(f"Parameter '{name}' bestaat al")
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self) -> List[Tuple[str, Tensor]]:
        return list(self._params.items())

    def names(self) -> List[str]:
        return list(self._params.keys())

    def tensors(self) -> List[Tensor]:
        return list(self._params.values())

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self._params.items()}

    @property
    def num_parameters(self) -> int:
        return int(sum(t.size for t in self._params.values()))

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def gradients(self) -> List[np.ndarray]:
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in self._params.values()]

    def global_grad_norm(self) -> float:
        """L2-norm over alle gradiënten, opgeteld in vaste volgorde."""
        total = 0.0
        for grad in self.gradients():
            total += float(np.sum(grad * grad))
        return float(np.sqrt(total))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((name, t.data.copy()) for name, t in self._params.items())

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Laad waarden; namen en vormen moeten exact overeenkomen."""
        if list(state.keys()) != self.names():
            raise ShapeError(f"Parameternamen verschillen: {list(state.keys())} tegenover {self.names()}")
        for name, value in state.items():
            target = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != target.shape:
                raise ShapeError(f"Parameter '{name}' heeft vorm {value.shape}, verwacht {target.shape}")
            target.data = value.copy()
            target.zero_grad()

    def copy(self) -> "ParameterVector":
        clone = ParameterVector(seed=self.seed)
        clone.step = self.step
        for name, tensor in self._params.items():
            clone.add(name, tensor.data.copy())
        return clone


def finite_difference_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = 1e-5,
    scale_floor: float = 1e-2,
) -> float:
    """Grootste relatieve fout tussen autodiff en centrale differenties over alle invoerelementen."""
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    loss.backward()
    analytic = [t.grad for t in tensors]

    worst = 0.0
    with no_grad():
        for which, base in enumerate(arrays):
            for pos in np.ndindex(base.shape):
                original = base[pos]
                base[pos] = original + h
                plus = fn(*[Tensor(a) for a in arrays]).item()
                base[pos] = original - h
                minus = fn(*[Tensor(a) for a in arrays]).item()
                base[pos] = original
                numeric = (plus - minus) / (2.0 * h)
                a = float(analytic[which][pos])
                rel = abs(a - numeric) / max(abs(a), abs(numeric), scale_floor)
                worst = max(worst, rel)
    return worst
