"""Rank-2 tensors with a reverse-mode differentiation tape.

Only the operations the graph autoencoder needs are provided. Every value
is a 2-D float64 array; scalars are 1 x 1. A ``Tensor`` created with
``requires_grad=True`` is a leaf parameter; any op with at least one such
input records a closure that pushes its adjoint back to the inputs.

    >>> x = Tensor([[3.0]], requires_grad=True)
    >>> backward(sum_(square(x)))
    >>> x.grad
    array([[6.]])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or infinity."""


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False, *, op: str = "leaf",
                 parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise DimensionError(f"tensors are rank 2, got shape {v.shape}")
        self.value = v
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def rows(self) -> int:
        return self.value.shape[0]

    @property
    def cols(self) -> int:
        return self.value.shape[1]

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.value.shape}")
        return float(self.value[0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, other)
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return add_scalar(self, -other)
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_finite(value: np.ndarray, op: str):
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced non-finite values")


def _node(value, op, parents, backward_fn) -> Tensor:
    _check_finite(value, op)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, op=op, parents=parents, backward_fn=backward_fn)
    return Tensor(value, op=op)


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- binary ops ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.cols != b.rows:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = a.value @ b.value

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g @ b.value.T)
        if b.requires_grad:
            _accumulate(b, a.value.T @ g)
    return _node(out, "matmul", (a, b), backward_fn)


def propagate(p, h) -> Tensor:
    """Left-multiply ``h`` by a constant (possibly sparse) square operator.

    The backward pass uses ``p.T``; for the symmetric graph operator this is
    ``p`` itself but no symmetry is assumed.
    """
    h = constant(h)
    pm = p.matrix if hasattr(p, "matrix") else p
    if pm.shape[1] != h.rows:
        raise DimensionError(f"propagate: operator {pm.shape} and input {h.shape} are not aligned")
    out = np.asarray(pm @ h.value)
    pt = pm.T.tocsr() if sp.issparse(pm) else np.asarray(pm).T

    def backward_fn(g):
        _accumulate(h, np.asarray(pt @ g))
    return _node(out, "propagate", (h,), backward_fn)


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape(a, b, "add")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, g)
    return _node(a.value + b.value, "add", (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape(a, b, "sub")

    def backward_fn(g):
        _accumulate(a, g)
        _accumulate(b, -g)
    return _node(a.value - b.value, "sub", (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _same_shape(a, b, "mul")

    def backward_fn(g):
        if a.requires_grad:
            _accumulate(a, g * b.value)
        if b.requires_grad:
            _accumulate(b, g * a.value)
    return _node(a.value * b.value, "mul", (a, b), backward_fn)


def add_row(a, row) -> Tensor:
    """Broadcast-add a 1 x C row to every row of an R x C tensor."""
    a, row = constant(a), constant(row)
    if row.rows != 1 or row.cols != a.cols:
        raise DimensionError(f"add_row: row {row.shape} does not broadcast onto {a.shape}")

    def backward_fn(g):
        _accumulate(a, g)
        if row.requires_grad:
            _accumulate(row, g.sum(axis=0, keepdims=True))
    return _node(a.value + row.value, "add_row", (a, row), backward_fn)


# -- constant-operand ops -----------------------------------------------------

def scale(a, c: float) -> Tensor:
    a = constant(a)
    c = float(c)
    return _node(a.value * c, "scale", (a,), lambda g: _accumulate(a, g * c))


def add_scalar(a, c: float) -> Tensor:
    a = constant(a)
    return _node(a.value + float(c), "add_scalar", (a,), lambda g: _accumulate(a, g))


# -- elementwise ---------------------------------------------------------------

def square(a) -> Tensor:
    a = constant(a)
    return _node(a.value ** 2, "square", (a,), lambda g: _accumulate(a, 2.0 * a.value * g))


def abs_(a) -> Tensor:
    """Absolute value; the subgradient at 0 is taken as 0."""
    a = constant(a)
    return _node(np.abs(a.value), "abs", (a,), lambda g: _accumulate(a, np.sign(a.value) * g))


def exp(a) -> Tensor:
    a = constant(a)
    out = np.exp(a.value)
    return _node(out, "exp", (a,), lambda g: _accumulate(a, out * g))


def log(a) -> Tensor:
    a = constant(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.value)
    return _node(out, "log", (a,), lambda g: _accumulate(a, g / a.value))


def relu(a) -> Tensor:
    a = constant(a)
    pos = a.value > 0
    return _node(np.where(pos, a.value, 0.0), "relu", (a,), lambda g: _accumulate(a, g * pos))


def sigmoid(a) -> Tensor:
    a = constant(a)
    x = a.value
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _node(out, "sigmoid", (a,), lambda g: _accumulate(a, g * out * (1.0 - out)))


def identity(a) -> Tensor:
    return constant(a)


def dropout(a, mask, p: float) -> Tensor:
    """Inverted dropout with a caller-supplied 0/1 ``mask``.

    ``mask=None`` (inference) or ``p == 0`` returns the input unchanged.
    """
    a = constant(a)
    if mask is None or p == 0:
        return a
    if not 0 <= p < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.shape:
        raise DimensionError(f"dropout: mask {m.shape} does not match input {a.shape}")
    factor = m / (1.0 - p)
    return _node(a.value * factor, "dropout", (a,), lambda g: _accumulate(a, g * factor))


def dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray | None:
    if p == 0:
        return None
    return (rng.random(shape) >= p).astype(np.float64)


# -- reductions / selection ------------------------------------------------------

def sum_(a) -> Tensor:
    a = constant(a)
    shape = a.shape
    return _node(np.array([[a.value.sum()]]), "sum", (a,),
                 lambda g: _accumulate(a, np.full(shape, g[0, 0])))


def mean(a) -> Tensor:
    a = constant(a)
    shape = a.shape
    n = a.value.size
    return _node(np.array([[a.value.mean()]]), "mean", (a,),
                 lambda g: _accumulate(a, np.full(shape, g[0, 0] / n)))


def masked_select(a, mask) -> Tensor:
    """Row vector (1 x K) of the entries where ``mask`` is true, row-major."""
    a = constant(a)
    m = np.asarray(mask, dtype=bool)
    if m.shape != a.shape:
        raise DimensionError(f"masked_select: mask {m.shape} does not match input {a.shape}")
    shape = a.shape

    def backward_fn(g):
        full = np.zeros(shape)
        full[m] = g.ravel()
        _accumulate(a, full)
    return _node(a.value[m].reshape(1, -1), "masked_select", (a,), backward_fn)


# -- backward pass ----------------------------------------------------------------

def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def backward(loss: Tensor):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    Gradients accumulate into existing leaf ``.grad`` arrays; call
    ``zero_grad`` on the parameters between steps. Interior adjoints are
    released once propagated.
    """
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar (1x1) loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    _accumulate(loss, np.ones((1, 1)))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        node.grad = None


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    ``f`` must rebuild the graph from the current parameter values and be
    deterministic (freeze any random masks/noise outside it). The error per
    coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    for p in params:
        p.zero_grad()
    loss = f()
    if not np.isfinite(loss.value).all():
        raise NonFiniteError("objective is not finite at the check point")
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, ga in zip(params, analytic):
        it = np.nditer(p.value, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = p.value[idx]
            p.value[idx] = orig + eps
            up = f().item()
            p.value[idx] = orig - eps
            down = f().item()
            p.value[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError(f"objective not finite near coordinate {idx}")
            num = (up - down) / (2 * eps)
            worst = max(worst, abs(ga[idx] - num) / max(1.0, abs(num)))
    for p in params:
        p.zero_grad()
    return worst
