"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation is a :class:`Function` subclass. Its ``vjp``
method maps the output cotangent to input cotangents and is written with
tensor operations, so running it with graph recording switched on yields a
differentiable gradient (double backprop). Fused operations whose ``vjp``
works on raw arrays set ``higher_order = False`` and refuse to take part in
a ``create_graph=True`` pass.

Broadcasting is deliberately narrow: elementwise binary ops accept equal
shapes or a single-element operand. Anything else goes through an explicit
:func:`broadcast_to`.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, ShapeError, UnsupportedOpError

_state = threading.local()
_seq = itertools.count()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def _grad_mode(enabled: bool):
    prev = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = prev


def no_grad():
    """Context manager that disables graph recording on this thread."""
    return _grad_mode(False)


def enable_grad():
    return _grad_mode(True)


class Tensor:
    """An n-dimensional float64 array that may sit in a differentiation graph."""

    __slots__ = ("data", "requires_grad", "grad", "_fn", "_seq", "name", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._fn: Function | None = None
        self._seq = -1
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=6, threshold=20)}{flag})"

    def __len__(self):
        return len(self.data)

    # -- operators -----------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    # -- method sugar --------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def permute(self, *axes):
        return permute(self, axes)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def backward(self):
        return backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One recorded operation: forward on arrays, vjp on tensors."""

    name = "function"
    higher_order = True

    def __init__(self, **params):
        self.params = params
        self.inputs: tuple[Tensor, ...] = ()

    def forward(self, *arrays: np.ndarray) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    def vjp(self, g: Tensor) -> Sequence[Tensor | None]:  # pragma: no cover - abstract
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **params) -> Tensor:
        fn = cls(**params)
        tensors = tuple(as_tensor(t) for t in inputs)
        out = Tensor(fn.forward(*(t.data for t in tensors)))
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            fn.inputs = tensors
            out.requires_grad = True
            out._fn = fn
            out._seq = next(_seq)
        return out


# ---------------------------------------------------------------------------
# broadcasting helpers
# ---------------------------------------------------------------------------

def _check_elementwise(name: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} are not broadcast-compatible "
                         "(equal shapes or a single-element operand required)")


def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == shape:
        return g
    return sum_to(g, shape)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

class Add(Function):
    name = "add"

    def forward(self, a, b):
        _check_elementwise(self.name, a, b)
        return a + b

    def vjp(self, g):
        a, b = self.inputs
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _check_elementwise(self.name, a, b)
        return a - b

    def vjp(self, g):
        a, b = self.inputs
        return _unbroadcast(g, a.shape), _unbroadcast(neg(g), b.shape)


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _check_elementwise(self.name, a, b)
        return a * b

    def vjp(self, g):
        a, b = self.inputs
        ga = _unbroadcast(mul(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(mul(g, a), b.shape) if b.requires_grad else None
        return ga, gb


class Div(Function):
    name = "div"

    def forward(self, a, b):
        _check_elementwise(self.name, a, b)
        return a / b

    def vjp(self, g):
        a, b = self.inputs
        ga = _unbroadcast(div(g, b), a.shape) if a.requires_grad else None
        gb = _unbroadcast(neg(div(mul(g, a), mul(b, b))), b.shape) if b.requires_grad else None
        return ga, gb


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def vjp(self, g):
        return (neg(g),)


class Power(Function):
    """x ** p for a constant real exponent p."""

    name = "pow"

    def forward(self, a):
        p = self.params["p"]
        if p != int(p) and np.any(a < 0):
            raise DomainError(f"pow: negative base with non-integer exponent {p}")
        return a ** p

    def vjp(self, g):
        (a,) = self.inputs
        p = self.params["p"]
        if p == 1:
            return (g,)
        return (mul(g, mul(p, power(a, p - 1))),)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        return np.exp(a)

    def vjp(self, g):
        (a,) = self.inputs
        return (mul(g, exp(a)),)


class Log(Function):
    name = "log"

    def forward(self, a):
        if np.any(a < 0):
            raise DomainError("log: negative input")
        with np.errstate(divide="ignore"):
            return np.log(a)

    def vjp(self, g):
        (a,) = self.inputs
        return (div(g, a),)


class Sqrt(Function):
    name = "sqrt"

    def forward(self, a):
        if np.any(a < 0):
            raise DomainError("sqrt: negative input")
        return np.sqrt(a)

    def vjp(self, g):
        (a,) = self.inputs
        return (mul(g, mul(0.5, power(a, -0.5))),)


class LeakyReLU(Function):
    name = "leaky_relu"

    def forward(self, a):
        alpha = self.params["alpha"]
        return np.where(a > 0, a, alpha * a)

    def vjp(self, g):
        # piecewise linear: the slope mask is a constant, so the second derivative is zero
        (a,) = self.inputs
        slope = np.where(a.data > 0, 1.0, self.params["alpha"])
        return (mul(g, Tensor(slope)),)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        return np.tanh(a)

    def vjp(self, g):
        (a,) = self.inputs
        t = tanh(a)
        return (mul(g, sub(1.0, mul(t, t))),)


class Clamp(Function):
    name = "clamp"

    def forward(self, a):
        return np.clip(a, self.params["lo"], self.params["hi"])

    def vjp(self, g):
        (a,) = self.inputs
        inside = (a.data >= self.params["lo"]) & (a.data <= self.params["hi"])
        return (mul(g, Tensor(inside.astype(np.float64))),)


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------

class Reshape(Function):
    name = "reshape"

    def forward(self, a):
        return a.reshape(self.params["shape"])

    def vjp(self, g):
        return (reshape(g, self.inputs[0].shape),)


class Permute(Function):
    name = "permute"

    def forward(self, a):
        return np.transpose(a, self.params["axes"])

    def vjp(self, g):
        inv = tuple(np.argsort(self.params["axes"]))
        return (permute(g, inv),)


class BroadcastTo(Function):
    name = "broadcast_to"

    def forward(self, a):
        try:
            return np.broadcast_to(a, self.params["shape"])
        except ValueError as exc:
            raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {self.params['shape']}") from exc

    def vjp(self, g):
        return (sum_to(g, self.inputs[0].shape),)


class SumTo(Function):
    """Sum a broadcast result back down to ``shape`` (inverse of broadcast_to)."""

    name = "sum_to"

    def forward(self, a):
        shape = tuple(self.params["shape"])
        lead = a.ndim - len(shape)
        out = a.sum(axis=tuple(range(lead))) if lead > 0 else a
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and out.shape[i] != 1)
        if axes:
            out = out.sum(axis=axes, keepdims=True)
        return out.reshape(shape)

    def vjp(self, g):
        return (broadcast_to(g, self.inputs[0].shape),)


class GetItem(Function):
    name = "getitem"

    def forward(self, a):
        return np.array(a[self.params["index"]], dtype=np.float64)

    def vjp(self, g):
        return (scatter(g, self.params["index"], self.inputs[0].shape),)


class Scatter(Function):
    """Place ``a`` into a zero array of ``shape`` at ``index`` (adjoint of getitem)."""

    name = "scatter"

    def forward(self, a):
        out = np.zeros(self.params["shape"])
        index = self.params["index"]
        parts = index if isinstance(index, tuple) else (index,)
        if all(isinstance(p, (slice, int)) for p in parts):
            out[index] = a
        else:
            np.add.at(out, index, a)
        return out

    def vjp(self, g):
        return (getitem(g, self.params["index"]),)


class Concat(Function):
    name = "concat"

    def forward(self, *arrays):
        return np.concatenate(arrays, axis=self.params["axis"])

    def vjp(self, g):
        axis = self.params["axis"] % g.ndim
        grads, start = [], 0
        for t in self.inputs:
            n = t.shape[axis]
            index = tuple([slice(None)] * axis + [slice(start, start + n)])
            grads.append(getitem(g, index))
            start += n
        return grads


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------

class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul: inner dimensions differ for shapes {a.shape} and {b.shape}")
        if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
            raise ShapeError(f"matmul: batch dimensions differ for shapes {a.shape} and {b.shape}")
        if b.ndim == 2 and a.ndim > 2:
            # one BLAS call instead of a loop over the batch
            return (a.reshape(-1, a.shape[-1]) @ b).reshape(a.shape[:-1] + (b.shape[1],))
        return a @ b

    def vjp(self, g):
        a, b = self.inputs
        ga = matmul(g, swap_last(b)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                k, n = b.shape
                gb = matmul(swap_last(reshape(a, (-1, k))), reshape(g, (-1, n)))
            else:
                gb = matmul(swap_last(a), g)
        if ga is not None and a.ndim == 2 and b.ndim > 2:
            ga = sum_to(ga, a.shape)
        return ga, gb


class Sum(Function):
    name = "sum"

    def forward(self, a):
        if a.size == 0:
            raise DomainError("sum: empty tensor")
        return np.asarray(a.sum(axis=self.params["axis"], keepdims=self.params["keepdims"]))

    def vjp(self, g):
        (a,) = self.inputs
        axis = self.params["axis"]
        if not self.params["keepdims"]:
            if axis is None:
                kshape = (1,) * a.ndim
            else:
                axes = (axis,) if isinstance(axis, int) else axis
                axes = {ax % a.ndim for ax in axes}
                kshape = tuple(1 if i in axes else n for i, n in enumerate(a.shape))
            g = reshape(g, kshape)
        return (broadcast_to(g, a.shape),)


class L2Norm(Function):
    """sqrt(sum(v**2)) along ``axis``; the gradient at v = 0 is taken as 0."""

    name = "l2_norm"

    def forward(self, a):
        if a.size == 0:
            raise DomainError("l2_norm: empty tensor")
        return np.sqrt(np.sum(a * a, axis=self.params["axis"], keepdims=self.params["keepdims"]))

    def vjp(self, g):
        (a,) = self.inputs
        axis, keepdims = self.params["axis"], self.params["keepdims"]
        norm = l2_norm(a, axis=axis, keepdims=True)
        safe = add(norm, Tensor((norm.data == 0).astype(np.float64)))
        if not keepdims:
            g = reshape(g, norm.shape)
        return (mul(broadcast_to(div(g, safe), a.shape), a),)


class Softmax(Function):
    name = "softmax"
    higher_order = False

    def forward(self, a):
        axis = self.params["axis"]
        shifted = a - a.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def vjp(self, g):
        y = self.out
        axis = self.params["axis"]
        gd = g.data
        return (Tensor(y * (gd - (gd * y).sum(axis=axis, keepdims=True))),)


class LogSoftmax(Function):
    name = "log_softmax"
    higher_order = False

    def forward(self, a):
        axis = self.params["axis"]
        shifted = a - a.max(axis=axis, keepdims=True)
        self.out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        return self.out

    def vjp(self, g):
        axis = self.params["axis"]
        gd = g.data
        return (Tensor(gd - np.exp(self.out) * gd.sum(axis=axis, keepdims=True)),)


# ---------------------------------------------------------------------------
# functional API
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Neg.apply(a)


def power(a, p: float) -> Tensor:
    return Power.apply(a, p=float(p))


def exp(a) -> Tensor:
    return Exp.apply(a)


def log(a) -> Tensor:
    return Log.apply(a)


def sqrt(a) -> Tensor:
    return Sqrt.apply(a)


def leaky_relu(a, alpha: float = 0.2) -> Tensor:
    return LeakyReLU.apply(a, alpha=float(alpha))


def relu(a) -> Tensor:
    return LeakyReLU.apply(a, alpha=0.0)


def tanh(a) -> Tensor:
    return Tanh.apply(a)


def clamp(a, lo: float, hi: float) -> Tensor:
    return Clamp.apply(a, lo=lo, hi=hi)


def reshape(a, shape) -> Tensor:
    return Reshape.apply(a, shape=tuple(shape))


def permute(a, axes) -> Tensor:
    return Permute.apply(a, axes=tuple(axes))


def swap_last(a) -> Tensor:
    axes = list(range(as_tensor(a).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return BroadcastTo.apply(a, shape=tuple(shape))


def sum_to(a, shape) -> Tensor:
    a = as_tensor(a)
    if a.shape == tuple(shape):
        return a
    return SumTo.apply(a, shape=tuple(shape))


def getitem(a, index) -> Tensor:
    return GetItem.apply(a, index=index)


def scatter(a, index, shape) -> Tensor:
    return Scatter.apply(a, index=index, shape=tuple(shape))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    return Sum.apply(a, axis=axis, keepdims=keepdims)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise DomainError("mean: empty tensor")
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def l2_norm(a, axis=None, keepdims: bool = False) -> Tensor:
    return L2Norm.apply(a, axis=axis, keepdims=keepdims)


def softmax(a, axis: int = -1) -> Tensor:
    return Softmax.apply(a, axis=axis)


def log_softmax(a, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(a, axis=axis)


def reduce(op: str, t, axis=None) -> Tensor:
    """Dispatch ``sum``, ``mean`` or ``l2_norm`` by name."""
    t = as_tensor(t)
    if axis is not None and not -t.ndim <= axis < t.ndim:
        raise ShapeError(f"reduce: axis {axis} out of range for rank {t.ndim}")
    ops = {"sum": tsum, "mean": mean, "l2_norm": l2_norm}
    if op not in ops:
        raise ValueError(f"unknown reduction {op!r}")
    return ops[op](t, axis)


_ELEMENTWISE = {
    "add": add, "sub": sub, "mul": mul, "exp": exp, "log": log,
    "sqrt": sqrt, "neg": neg, "tanh": tanh,
}


def elementwise(op: str, *args, alpha: float = 0.2) -> Tensor:
    """Dispatch an elementwise op by name; ``leaky_relu`` takes ``alpha``."""
    if op == "leaky_relu":
        return leaky_relu(args[0], alpha)
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    return _ELEMENTWISE[op](*args)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def _graph(root: Tensor) -> list[Tensor]:
    """Interior tensors reachable from ``root`` in reverse creation order."""
    seen, stack, nodes = set(), [root], []
    while stack:
        t = stack.pop()
        if t._fn is None or id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._fn.inputs)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def _leaves(root: Tensor) -> list[Tensor]:
    seen, stack, leaves = set(), [root], []
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        if t._fn is None:
            if t.requires_grad:
                leaves.append(t)
        else:
            stack.extend(t._fn.inputs)
    return leaves


def grad(output: Tensor, inputs: Sequence[Tensor], grad_output=None,
         create_graph: bool = False) -> list[Tensor]:
    """Gradients of ``output`` with respect to each of ``inputs``.

    With ``create_graph=True`` the returned tensors are themselves attached
    to the graph and can be differentiated again.
    """
    if grad_output is None:
        if output.size != 1:
            raise ContractError(f"grad: output must be scalar, got shape {output.shape}")
        grad_output = Tensor(np.ones_like(output.data))
    if not output.requires_grad:
        raise ContractError("grad: output is not attached to a graph")
    grads: dict[int, Tensor] = {id(output): as_tensor(grad_output)}
    owned: set[int] = set()  # first-order buffers allocated here, safe to add into in place
    with _grad_mode(create_graph):
        for t in _graph(output):
            g = grads.get(id(t))
            if g is None:
                continue
            fn = t._fn
            if create_graph and not fn.higher_order:
                raise UnsupportedOpError(f"op '{fn.name}' has no second-order rule")
            for inp, gi in zip(fn.inputs, fn.vjp(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key not in grads:
                    grads[key] = gi
                elif create_graph:
                    grads[key] = add(grads[key], gi)
                elif key in owned:
                    grads[key].data += gi.data
                else:
                    grads[key] = Tensor(grads[key].data + gi.data)
                    owned.add(key)
    out = []
    for t in inputs:
        g = grads.get(id(t))
        out.append(g if g is not None else Tensor(np.zeros_like(t.data)))
    return out


def backward(loss: Tensor) -> dict:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the per-call gradient map ``{leaf: ndarray}``.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward: loss is not attached to a graph")
    leaves = _leaves(loss)
    gmap = {}
    for leaf, g in zip(leaves, grad(loss, leaves)):
        leaf.grad = g.data.copy() if leaf.grad is None else leaf.grad + g.data
        gmap[leaf] = g.data
    return gmap


def grad_of_grad(inner: Tensor, wrt_input: Tensor) -> Tensor:
    """Graph-attached gradient of scalar ``inner`` w.r.t. ``wrt_input``."""
    return grad(inner, [wrt_input], create_graph=True)[0]


def numerical_grad(fn, params: Iterable[Tensor], step: float = 1e-4) -> list[np.ndarray]:
    """Central finite differences of scalar ``fn()`` w.r.t. each param's entries."""
    out = []
    for p in params:
        num = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = fn().item()
            flat[i] = orig - step
            fm = fn().item()
            flat[i] = orig
            num.reshape(-1)[i] = (fp - fm) / (2 * step)
        out.append(num)
    return out
