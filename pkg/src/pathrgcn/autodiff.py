"""Dense float64 tensors with reverse-mode automatic differentiation.

Every op returns a new :class:`Tensor` holding a closure that pushes the
output gradient back onto its inputs.  :func:`backward` walks the graph in a
fixed reverse-topological order, so gradient accumulation is deterministic.

Binary elementwise ops accept identical shapes or *trailing* broadcast: the
smaller operand's shape must be a suffix of the larger one (a 0-d tensor is a
suffix of everything).  Any other combination raises :class:`DimensionError`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "GradCheckError",
    "Tensor",
    "Parameter",
    "ParameterSet",
    "tensor",
    "constant",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "sigmoid",
    "tanh",
    "log",
    "softmax",
    "reduce",
    "concat",
    "split",
    "backward",
    "grad_check",
]


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class GradCheckError(RuntimeError):
    """Raised when a loss function is not deterministic."""


class Tensor:
    """A node in the compute graph.

    ``op`` names the producing operation ("leaf" for inputs), ``parents`` are
    the input nodes and ``grad`` is filled in by :func:`backward`.
    """

    __slots__ = ("data", "grad", "parents", "op", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, parents: Sequence["Tensor"] = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.op = op
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True).reshape(self.shape)
        else:
            self.grad += g

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce("sum", self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce("mean", self, axis)

    def max(self, axis: int | None = None) -> "Tensor":
        return reduce("max", self, axis)

    def backward(self) -> dict[str, np.ndarray]:
        return backward(self)

    def item(self) -> float:
        return float(self.data)


class Parameter(Tensor):
    """A named, persistent leaf tensor.

    Gradients accumulate into ``grad`` across :func:`backward` calls until
    :meth:`zero_grad` is called, which is what lets a parameter shared by
    several layers (or several samples of a batch) collect their sum.
    """

    __slots__ = ("name", "trainable")

    def __init__(self, name: str, data, trainable: bool = True):
        super().__init__(data, (), "param")
        self.data = np.array(self.data, dtype=np.float64, order="C")
        self.name = name
        self.trainable = trainable

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"

    def zero_grad(self) -> None:
        self.grad = None


class ParameterSet:
    """Ordered collection of uniquely named parameters."""

    def __init__(self, params: Iterable[Parameter] = ()):
        self._params: dict[str, Parameter] = {}
        for p in params:
            self.add(p)

    def add(self, param: Parameter) -> Parameter:
        if param.name in self._params:
            raise ValueError(f"duplicate parameter name {param.name!r}")
        self._params[param.name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def trainable(self) -> list[Parameter]:
        return [p for p in self._params.values() if p.trainable]

    def count(self) -> int:
        """Total number of scalar entries."""
        return int(sum(p.data.size for p in self._params.values()))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self._params.items()
        }

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(
                    f"parameter {name!r}: expected shape {p.shape}, got {value.shape}"
                )
            p.data = value.copy()


def tensor(data) -> Tensor:
    return data if isinstance(data, Tensor) else Tensor(data)


constant = tensor


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, fn) -> Tensor:
    out = Tensor(data, parents, op)
    out._backward = fn
    return out


# -- shape helpers ----------------------------------------------------------
def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if big[len(big) - len(small):] != small:
        raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


def _axis(ndim: int, axis: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# -- linear algebra ----------------------------------------------------------
def matmul(a, b) -> Tensor:
    """Matrix product of 2-d tensors ``a[m×k] @ b[k×n]``."""
    a, b = tensor(a), tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data

    def fn(g):
        a._accumulate(g @ bd.T)
        b._accumulate(ad.T @ g)

    return _make(ad @ bd, (a, b), "matmul", fn)


def transpose(a) -> Tensor:
    a = tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a 2-d tensor, got {a.shape}")
    return _make(a.data.T, (a,), "transpose", lambda g: a._accumulate(g.T))


def reshape(a, shape) -> Tensor:
    a = tensor(a)
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from exc
    return _make(out, (a,), "reshape", lambda g: a._accumulate(g.reshape(a.shape)))


def take(a, index) -> Tensor:
    """NumPy-style indexing; repeated indices accumulate in the gradient."""
    a = tensor(a)
    out = a.data[index]

    def fn(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        a._accumulate(full)

    return _make(out, (a,), "take", fn)


# -- elementwise ------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_check(a, b, "add")

    def fn(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", fn)


def sub(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_check(a, b, "sub")

    def fn(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(-_unbroadcast(g, b.shape))

    return _make(a.data - b.data, (a, b), "sub", fn)


def mul(a, b) -> Tensor:
    a, b = tensor(a), tensor(b)
    _broadcast_check(a, b, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        a._accumulate(_unbroadcast(g * bd, a.shape))
        b._accumulate(_unbroadcast(g * ad, b.shape))

    return _make(ad * bd, (a, b), "mul", fn)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    """Logistic function; strictly inside (0, 1) for |x| < 36."""
    a = tensor(a)
    s = _sigmoid(a.data)
    return _make(s, (a,), "sigmoid", lambda g: a._accumulate(g * s * (1.0 - s)))


def tanh(a) -> Tensor:
    """Hyperbolic tangent; strictly inside (-1, 1) for |x| < 19."""
    a = tensor(a)
    t = np.tanh(a.data)
    return _make(t, (a,), "tanh", lambda g: a._accumulate(g * (1.0 - t * t)))


def log(a, floor: float = 0.0) -> Tensor:
    """Natural log of ``max(a, floor)``; no gradient flows below the floor."""
    a = tensor(a)
    x = a.data
    clipped = np.maximum(x, floor) if floor > 0 else x
    live = x > floor if floor > 0 else np.ones_like(x, dtype=bool)

    def fn(g):
        a._accumulate(np.where(live, g / np.where(live, x, 1.0), 0.0))

    return _make(np.log(clipped), (a,), "log", fn)


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "add": add, "mul": mul, "sub": sub}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name to one of ``sigmoid``, ``tanh``, ``add``, ``mul``, ``sub``."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    if op in ("sigmoid", "tanh"):
        if b is not None:
            raise ValueError(f"{op} is unary")
        return fn(a)
    if b is None:
        raise ValueError(f"{op} needs two operands")
    return fn(a, b)


# -- normalisation and reductions --------------------------------------------
def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Max-shifted softmax along ``axis``.

    ``mask`` (boolean, broadcastable to ``x``) marks the admissible entries;
    masked-out entries get probability exactly zero.
    """
    x = tensor(x)
    ax = _axis(x.ndim, axis)
    xd = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=ax).all():
            raise ValueError("softmax: every position along the axis is masked")
        xd = np.where(mask, xd, -np.inf)
    shifted = xd - xd.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=ax, keepdims=True)

    def fn(g):
        x._accumulate(s * (g - (g * s).sum(axis=ax, keepdims=True)))

    return _make(s, (x,), "softmax", fn)


def reduce(op: str, x, axis: int | None = None) -> Tensor:
    """``mean``, ``max`` or ``sum`` over ``axis`` (all axes when None).

    ``max`` routes the gradient to the first maximal entry only.
    """
    x = tensor(x)
    xd = x.data
    if axis is None:
        flat = reshape(x, (xd.size,))
        return reduce(op, flat, 0)
    ax = _axis(x.ndim, axis)
    n = xd.shape[ax]
    if n == 0:
        raise DimensionError(f"{op}: cannot reduce over an empty axis")
    if op == "sum":
        out = xd.sum(axis=ax)
        fn = lambda g: x._accumulate(np.broadcast_to(np.expand_dims(g, ax), xd.shape))
    elif op == "mean":
        out = xd.mean(axis=ax)
        fn = lambda g: x._accumulate(np.broadcast_to(np.expand_dims(g, ax) / n, xd.shape))
    elif op == "max":
        idx = np.argmax(xd, axis=ax)
        out = np.take_along_axis(xd, np.expand_dims(idx, ax), ax).squeeze(ax)

        def fn(g):
            full = np.zeros_like(xd)
            np.put_along_axis(full, np.expand_dims(idx, ax), np.expand_dims(g, ax), ax)
            x._accumulate(full)

    else:
        raise ValueError(f"unknown reduction {op!r}")
    return _make(out, (x,), op, fn)


def concat(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat needs at least one tensor")
    if len(parts) == 1:
        return parts[0]
    ndim = parts[0].ndim
    ax = _axis(ndim, axis)
    ref = parts[0].shape
    for p in parts[1:]:
        if p.ndim != ndim or any(
            p.shape[i] != ref[i] for i in range(ndim) if i != ax
        ):
            raise DimensionError(
                f"concat: shapes {[q.shape for q in parts]} disagree off axis {ax}"
            )
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def fn(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=ax)):
            p._accumulate(piece)

    return _make(np.concatenate([p.data for p in parts], axis=ax), parts, "concat", fn)


def split(x, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    """Inverse of :func:`concat` for the given piece sizes."""
    x = tensor(x)
    ax = _axis(x.ndim, axis)
    if sum(sizes) != x.shape[ax]:
        raise DimensionError(f"split: sizes {list(sizes)} do not cover axis of {x.shape[ax]}")
    out, start = [], 0
    for n in sizes:
        index = [slice(None)] * x.ndim
        index[ax] = slice(start, start + n)
        out.append(take(x, tuple(index)))
        start += n
    return out


# -- backpropagation -----------------------------------------------------------
def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in reversed(node.parents):
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> dict[str, np.ndarray]:
    """Propagate d(root)/d(.) through the graph below a scalar ``root``.

    Intermediate gradients are reset first; :class:`Parameter` gradients keep
    accumulating.  Returns the gradients of every reachable parameter.
    """
    if root.data.shape != () and root.data.size != 1:
        raise DimensionError(f"backward needs a scalar root, got shape {root.shape}")
    order = _topological(root)
    for node in order:
        if not isinstance(node, Parameter):
            node.grad = None
    root._accumulate(np.ones_like(root.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    return {
        n.name: n.grad if n.grad is not None else np.zeros_like(n.data)
        for n in order
        if isinstance(n, Parameter) and n.trainable
    }


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParameterSet | Iterable[Parameter],
    epsilon: float = 1e-6,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    ``loss_fn`` takes no arguments and reads the parameters it closes over;
    entries are perturbed in place.  The relative error of one entry is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    params = [p for p in params if p.trainable]
    first = loss_fn()
    again = loss_fn()
    if not np.array_equal(first.data, again.data):
        raise GradCheckError("loss function is not deterministic")
    for p in params:
        p.zero_grad()
    root = loss_fn()
    backward(root)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            hi = float(loss_fn().data)
            flat[k] = orig - epsilon
            lo = float(loss_fn().data)
            flat[k] = orig
            numeric = (hi - lo) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[k])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
