"""Minimal reverse-mode autodiff over dense float64 tensors.

Covers exactly the primitive set the distillation losses compose from:
matmul, transpose, elementwise arithmetic, exp, eps-floored log, reductions,
row softmax, row L2 normalization, diagonal selection and row concatenation.
Single-threaded per graph; value arrays are immutable once created.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LOG_EPS = 1e-12


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class DomainError(AutodiffError):
    pass


class ContractError(AutodiffError):
    pass


class NumericError(AutodiffError):
    pass


class Tensor:
    """Dense float64 array with an optional grad slot and graph node identity."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp", "_op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None, _op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        arr.setflags(write=False)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(_parents)
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = _vjp
        self._op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """Constant copy: cuts the graph (stop-gradient)."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self._op}, shape={self.shape})"

    # -- graph construction helpers ------------------------------------

    @staticmethod
    def _make(data, parents, vjp, op):
        rg = any(p.requires_grad for p in parents)
        return Tensor(data, requires_grad=rg, _parents=parents if rg else (), _vjp=vjp if rg else None, _op=op)

    # -- primitives -----------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.data.ndim != 2 or other.data.ndim != 2 or self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul: {self.shape} @ {other.shape}")
        a, b = self.data, other.data
        return Tensor._make(a @ b, (self, other),
                            lambda g: (g @ b.T, a.T @ g), "matmul")

    def transpose(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"transpose: rank-{self.data.ndim} input {self.shape}")
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,), "transpose")

    def _binary(self, other: "Tensor", op: str):
        # same shape, or one side scalar
        if self.shape != other.shape and self.data.size != 1 and other.data.size != 1:
            raise ShapeError(f"{op}: {self.shape} vs {other.shape}")

    @staticmethod
    def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        if g.shape == shape:
            return g
        return np.sum(g).reshape(shape)

    def add(self, other: "Tensor") -> "Tensor":
        self._binary(other, "add")
        return Tensor._make(self.data + other.data, (self, other),
                            lambda g: (self._unbroadcast(g, self.shape),
                                       self._unbroadcast(g, other.shape)), "add")

    def sub(self, other: "Tensor") -> "Tensor":
        self._binary(other, "sub")
        return Tensor._make(self.data - other.data, (self, other),
                            lambda g: (self._unbroadcast(g, self.shape),
                                       self._unbroadcast(-g, other.shape)), "sub")

    def mul(self, other: "Tensor") -> "Tensor":
        self._binary(other, "mul")
        a, b = self.data, other.data
        return Tensor._make(a * b, (self, other),
                            lambda g: (self._unbroadcast(g * b, self.shape),
                                       self._unbroadcast(g * a, other.shape)), "mul")

    def add_rowvec(self, vec: "Tensor") -> "Tensor":
        """Add a length-n vector to every row of a (m, n) matrix."""
        if self.data.ndim != 2 or vec.data.ndim != 1 or self.shape[1] != vec.shape[0]:
            raise ShapeError(f"add_rowvec: {self.shape} + {vec.shape}")
        return Tensor._make(self.data + vec.data, (self, vec),
                            lambda g: (g, np.sum(g, axis=0)), "add_rowvec")

    def scale(self, c: float) -> "Tensor":
        c = float(c)
        return Tensor._make(self.data * c, (self,), lambda g: (g * c,), "scale")

    def negate(self) -> "Tensor":
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "negate")

    def square(self) -> "Tensor":
        a = self.data
        return Tensor._make(a * a, (self,), lambda g: (2.0 * a * g,), "square")

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        """Natural log with an epsilon floor at LOG_EPS.

        Negative inputs are a caller bug, not underflow, and raise DomainError.
        The floored region contributes zero gradient.
        """
        a = self.data
        if np.any(a < 0.0):
            raise DomainError("log: negative input after epsilon floor")
        floored = np.maximum(a, LOG_EPS)
        return Tensor._make(np.log(floored), (self,),
                            lambda g: (np.where(a > LOG_EPS, g / floored, 0.0),), "log")

    def sum(self) -> "Tensor":
        shp = self.shape
        return Tensor._make(np.sum(self.data), (self,),
                            lambda g: (np.broadcast_to(g, shp).copy(),), "sum")

    def mean(self) -> "Tensor":
        n = self.data.size
        if n == 0:
            raise ShapeError("mean: empty tensor")
        shp = self.shape
        return Tensor._make(np.mean(self.data), (self,),
                            lambda g: (np.broadcast_to(g / n, shp).copy(),), "mean")

    def row_softmax(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"row_softmax: rank-{self.data.ndim} input {self.shape}")
        z = self.data - np.max(self.data, axis=1, keepdims=True)
        e = np.exp(z)
        p = e / np.sum(e, axis=1, keepdims=True)

        def vjp(g):
            return (p * (g - np.sum(g * p, axis=1, keepdims=True)),)

        return Tensor._make(p, (self,), vjp, "row_softmax")

    def l2_normalize_rows(self) -> "Tensor":
        if self.data.ndim != 2:
            raise ShapeError(f"l2_normalize_rows: rank-{self.data.ndim} input {self.shape}")
        norms = np.linalg.norm(self.data, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise DomainError("l2_normalize_rows: row with near-zero norm")
        y = self.data / norms

        def vjp(g):
            return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

        return Tensor._make(y, (self,), vjp, "l2_normalize_rows")

    def select_diag(self) -> "Tensor":
        if self.data.ndim != 2 or self.shape[0] != self.shape[1]:
            raise ShapeError(f"select_diag: non-square input {self.shape}")
        n = self.shape[0]

        def vjp(g):
            out = np.zeros((n, n))
            np.fill_diagonal(out, g)
            return (out,)

        return Tensor._make(np.diagonal(self.data).copy(), (self,), vjp, "select_diag")

    def clip_max(self, cap: float) -> "Tensor":
        """Clamp above at cap; gradient passes only where unclamped."""
        a = self.data
        mask = a < cap
        return Tensor._make(np.minimum(a, cap), (self,),
                            lambda g: (np.where(mask, g, 0.0),), "clip_max")

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),), "tanh")

    # operator sugar
    __add__ = add
    __sub__ = sub
    __mul__ = mul
    __matmul__ = matmul

    @property
    def T(self) -> "Tensor":
        return self.transpose()


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors along rows."""
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat_rows: empty input list")
    cols = {t.shape[1] for t in tensors if t.data.ndim == 2}
    if any(t.data.ndim != 2 for t in tensors) or len(cols) != 1:
        raise ShapeError(f"concat_rows: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[0] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(tensors)))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=0), tensors, vjp, "concat_rows")


_OPS = {
    "matmul": lambda a, b: a.matmul(b),
    "transpose": lambda a: a.transpose(),
    "add": lambda a, b: a.add(b),
    "sub": lambda a, b: a.sub(b),
    "mul": lambda a, b: a.mul(b),
    "scale": lambda a, c: a.scale(c),
    "exp": lambda a: a.exp(),
    "log": lambda a: a.log(),
    "sum": lambda a: a.sum(),
    "mean": lambda a: a.mean(),
    "row_softmax": lambda a: a.row_softmax(),
    "l2_normalize_rows": lambda a: a.l2_normalize_rows(),
    "square": lambda a: a.square(),
    "negate": lambda a: a.negate(),
    "select_diag": lambda a: a.select_diag(),
    "concat_rows": lambda *ts: concat_rows(ts),
}


def apply(op_kind: str, *inputs):
    """Name-dispatched primitive application."""
    if op_kind not in _OPS:
        raise ContractError(f"unknown op kind {op_kind!r}")
    return _OPS[op_kind](*inputs)


@dataclass
class Parameter:
    """Named trainable tensor."""

    tensor: Tensor
    name: str
    trainable: bool = True

    def __post_init__(self):
        self.tensor.requires_grad = self.trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def set_data(self, values: np.ndarray) -> None:
        if values.shape != self.tensor.data.shape:
            raise ShapeError(f"set_data on {self.name}: {values.shape} vs {self.tensor.data.shape}")
        arr = np.asarray(values, dtype=np.float64).copy()
        arr.setflags(write=False)
        self.tensor.data = arr


def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate .grad for every requires-grad tensor reachable from loss.

    The graph is freed after the pass (single-use, first-order only).
    """
    if loss.shape != ():
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones(())}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._vjp is not None:
            for parent, pg in zip(node._parents, node._vjp(g)):
                if not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg.copy() if isinstance(pg, np.ndarray) else np.asarray(pg, dtype=np.float64)
        elif node.requires_grad:
            acc = np.asarray(g, dtype=np.float64).reshape(node.shape)
            node.grad = acc if node.grad is None else node.grad + acc
    # free the graph
    for node in order:
        if node is not loss and node._vjp is not None:
            node._parents = ()
            node._vjp = None


def zero_grads(params: Sequence[Parameter]) -> None:
    for p in params:
        p.tensor.grad = None


def collect_grads(params: Sequence[Parameter]) -> dict[str, np.ndarray]:
    """Gradients by name; unreached trainable parameters get zeros."""
    out = {}
    for p in params:
        g = p.tensor.grad
        out[p.name] = np.zeros_like(p.data) if g is None else g
    return out


def grad_check(f: Callable[[Sequence[Parameter]], Tensor],
               params: Sequence[Parameter],
               h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    Error per coordinate is |analytic - fd| / max(|analytic|, |fd|, 1e-8).
    """
    zero_grads(params)
    loss = f(params)
    backward(loss)
    analytic = collect_grads([p for p in params if p.trainable])

    worst = 0.0
    for p in params:
        if not p.trainable:
            continue
        base = p.data.copy()
        flat = base.ravel()
        ag = analytic[p.name].ravel()
        for i in range(flat.size):
            for sign in (+1.0, -1.0):
                bumped = flat.copy()
                bumped[i] += sign * h
                p.set_data(bumped.reshape(base.shape))
                val = f(params).item()
                if not np.isfinite(val):
                    p.set_data(base)
                    raise NumericError(f"non-finite value perturbing {p.name}[{i}]")
                if sign > 0:
                    plus = val
                else:
                    minus = val
            fd = (plus - minus) / (2.0 * h)
            err = abs(ag[i] - fd) / max(abs(ag[i]), abs(fd), 1e-8)
            worst = max(worst, err)
        p.set_data(base)
    return worst
