"""Dense float64 tensors with reverse-mode automatic differentiation.

Every model in the package is built from the small operator set defined
here. A :class:`Tensor` wraps a NumPy array; when any operand requires a
gradient, the result records its parents and a backward rule so that
:func:`backward` can walk the graph in reverse topological order.

Broadcasting is deliberately limited to a rank-0 operand combined with a
tensor of any shape. Row-wise bias addition goes through :func:`linear`
or :func:`broadcast_rows`, whose backward rules are explicit.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Optional, Sequence

import numpy as np

from .errors import NumericDomainError, ShapeError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_GRAD_ENABLED = [True]


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording graph nodes (evaluation and sampling)."""
    prev = _GRAD_ENABLED[0]
    _GRAD_ENABLED[0] = False
    try:
        yield
    finally:
        _GRAD_ENABLED[0] = prev


class Tensor:
    """A float64 array plus an optional handle into the computation graph."""

    __slots__ = ("data", "requires_grad", "name", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}", arr.shape)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: BackwardFn) -> "Tensor":
        """Build an op result. ``backward_fn`` maps the output gradient to one
        gradient (or None) per parent."""
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.name = None
        out.requires_grad = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}", self.shape)
        return float(self.data.item())

    def detach(self) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.name = self.name
        out._parents = ()
        out._backward = None
        return out

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    __array_priority__ = 100

    def __add__(self, other):
        return elementwise("add", self, other)

    def __radd__(self, other):
        return elementwise("add", other, self)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __rsub__(self, other):
        return elementwise("sub", other, self)

    def __mul__(self, other):
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return elementwise("mul", other, self)

    def __truediv__(self, other):
        return elementwise("div", self, other)

    def __rtruediv__(self, other):
        return elementwise("div", other, self)

    def __neg__(self):
        return elementwise("negate", self)

    def __matmul__(self, other):
        return matmul(self, other)


GradientMap = Dict[Tensor, np.ndarray]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _fold(g: np.ndarray, shape: tuple) -> np.ndarray:
    # undo the rank-0 broadcast
    if shape == g.shape:
        return g
    return np.asarray(g.sum())


def _check_binary(a: Tensor, b: Tensor, kind: str) -> None:
    if a.shape != b.shape and a.ndim and b.ndim:
        raise ShapeError(
            f"{kind}: shapes {a.shape} and {b.shape} are incompatible "
            "(only equal shapes or a rank-0 operand are allowed)",
            a.shape,
            b.shape,
        )


_UNARY = {"exp", "log", "square", "negate", "tanh", "relu", "softplus"}
_BINARY = {"add", "sub", "mul", "div"}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    if op_kind in _BINARY:
        if b is None:
            raise ShapeError(f"{op_kind} needs two operands")
        a, b = as_tensor(a), as_tensor(b)
        _check_binary(a, b, op_kind)
        return _BINARY_IMPL[op_kind](a, b)
    if op_kind in _UNARY:
        if b is not None:
            raise ShapeError(f"{op_kind} takes a single operand")
        return _UNARY_IMPL[op_kind](as_tensor(a))
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def _add(a, b):
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (_fold(g, sa), _fold(g, sb)))


def _sub(a, b):
    sa, sb = a.shape, b.shape
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (_fold(g, sa), _fold(-g, sb)))


def _mul(a, b):
    ad, bd = a.data, b.data
    return Tensor.from_op(
        ad * bd, (a, b), lambda g: (_fold(g * bd, ad.shape), _fold(g * ad, bd.shape))
    )


def _div(a, b):
    ad, bd = a.data, b.data
    if np.any(bd == 0.0):
        raise NumericDomainError("div: zero denominator")
    out = ad / bd
    return Tensor.from_op(
        out, (a, b), lambda g: (_fold(g / bd, ad.shape), _fold(-g * out / bd, bd.shape))
    )


def _exp(a):
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def _log(a):
    x = a.data
    if np.any(x <= 0.0):
        raise NumericDomainError("log: argument must be strictly positive")
    return Tensor.from_op(np.log(x), (a,), lambda g: (g / x,))


def _square(a):
    x = a.data
    return Tensor.from_op(x * x, (a,), lambda g: (2.0 * x * g,))


def _negate(a):
    return Tensor.from_op(-a.data, (a,), lambda g: (-g,))


def _tanh(a):
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def _relu(a):
    # subgradient 0 at exactly 0
    pos = a.data > 0.0
    return Tensor.from_op(np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(a):
    x = a.data
    return Tensor.from_op(np.logaddexp(0.0, x), (a,), lambda g: (g * sigmoid_array(x),))


_BINARY_IMPL = {"add": _add, "sub": _sub, "mul": _mul, "div": _div}
_UNARY_IMPL = {
    "exp": _exp,
    "log": _log,
    "square": _square,
    "negate": _negate,
    "tanh": _tanh,
    "relu": _relu,
    "softplus": _softplus,
}


def exp(a):
    return _exp(as_tensor(a))


def log(a):
    return _log(as_tensor(a))


def square(a):
    return _square(as_tensor(a))


def tanh(a):
    return _tanh(as_tensor(a))


def relu(a):
    return _relu(as_tensor(a))


def softplus(a):
    return _softplus(as_tensor(a))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; the gradient is zero wherever the clamp is active."""
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return Tensor.from_op(np.clip(x, lo, hi), (a,), lambda g: (g * inside,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {a.shape} and {b.shape}", a.shape, b.shape)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ in {a.shape} x {b.shape}", a.shape, b.shape)
    ad, bd = a.data, b.data
    return Tensor.from_op(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose needs a rank-2 tensor, got {a.shape}", a.shape)
    return Tensor.from_op(a.data.T, (a,), lambda g: (g.T,))


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, mask: Optional[np.ndarray] = None) -> Tensor:
    """``x @ (weight * mask).T + bias`` for ``x`` [batch, in] and ``weight`` [out, in]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"linear: input {x.shape} does not match weight {weight.shape}", x.shape, weight.shape
        )
    w = weight.data if mask is None else weight.data * mask
    xd = x.data
    out = xd @ w.T
    parents = [x, weight]
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}", bias.shape)
        out = out + bias.data
        parents.append(bias)

    def _bw(g):
        gw = g.T @ xd
        if mask is not None:
            gw = gw * mask
        grads = [g @ w, gw]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor.from_op(out, parents, _bw)


def reduce(op_kind: str, a: Tensor, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    if op_kind not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {op_kind!r}")
    if axis is not None and not (0 <= axis < a.ndim):
        raise ShapeError(f"reduce: axis {axis} is invalid for shape {a.shape}", a.shape)
    shape = a.shape
    n = a.data.size if axis is None else shape[axis]
    scale = 1.0 / n if op_kind == "mean" else 1.0
    out = a.data.sum(axis=axis) * scale if axis is not None else np.asarray(a.data.sum() * scale)

    def _bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, shape).copy(),)

    return Tensor.from_op(out, (a,), _bw)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    return reduce("sum", a, axis)


def mean(a: Tensor, axis: Optional[int] = None) -> Tensor:
    return reduce("mean", a, axis)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat: {t.shape} does not align with {ref} on axis {axis}", t.shape, ref)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: np.split(g, splits, axis=axis),
    )


def take(a: Tensor, index, axis: int = 1) -> Tensor:
    """Gather along ``axis`` with an integer index array or a slice."""
    if isinstance(index, slice):
        sl = [slice(None)] * a.ndim
        sl[axis] = index
        sl = tuple(sl)
        shape = a.shape

        def _bw_slice(g):
            full = np.zeros(shape)
            full[sl] = g
            return (full,)

        return Tensor.from_op(a.data[sl], (a,), _bw_slice)

    idx = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def _bw(g):
        full = np.zeros(shape)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor.from_op(np.take(a.data, idx, axis=axis), (a,), _bw)


def broadcast_rows(v: Tensor, n: int) -> Tensor:
    """Repeat a rank-1 tensor [d] into [n, d]."""
    if v.ndim != 1:
        raise ShapeError(f"broadcast_rows needs a rank-1 tensor, got {v.shape}", v.shape)
    return Tensor.from_op(np.broadcast_to(v.data, (n, v.shape[0])).copy(), (v,), lambda g: (g.sum(axis=0),))


def _toposort(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(output: Tensor) -> GradientMap:
    """Gradients of a rank-0 ``output`` with respect to every reachable leaf
    that requires them. The graph is left intact, so repeated calls agree."""
    if output.ndim != 0:
        raise ShapeError(f"backward needs a rank-0 output, got shape {output.shape}", output.shape)
    if not output.requires_grad:
        return {}
    grads: Dict[int, np.ndarray] = {id(output): np.ones(())}
    result: GradientMap = {}
    for node in reversed(_toposort(output)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            result[node] = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.asarray(pg, dtype=np.float64)
    return result


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Tensor],
    step: float = 1e-3,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``f`` is re-evaluated from scratch for every perturbation, so it must be
    deterministic (fix any noise it draws). The error for a parameter is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    """
    params = list(params)
    out = f()
    if not np.isfinite(out.data).all():
        raise NumericDomainError("grad_check: objective is not finite at the base point")
    analytic = backward(out)
    report = GradCheckReport(step=step, tolerance=tolerance)
    for i, p in enumerate(params):
        a = analytic.get(p, np.zeros_like(p.data))
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            fp = f().item()
            flat[j] = orig - step
            fm = f().item()
            flat[j] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NumericDomainError(f"grad_check: objective is not finite near {p.name or i}")
            num.reshape(-1)[j] = (fp - fm) / (2.0 * step)
        scale = max(np.abs(a).max(), np.abs(num).max())
        err = 0.0 if scale == 0.0 else float(np.abs(a - num).max() / scale)
        report.errors[p.name or f"param{i}"] = err
    return report
