"""Reverse-mode automatic differentiation over numpy arrays.

Implements exactly the primitive set the window models need: matrix
products, broadcasting elementwise arithmetic, exp/log/tanh/sigmoid/
relu/abs, clipping, basic slicing, reshape/concat and full-array sums.
Training runs in float64 throughout; every Tensor coerces to float64.

The free functions (matmul, exp, ...) dispatch on their arguments:
given Tensors they record onto the graph, given plain ndarrays they
fall through to numpy. Model code written against them therefore runs
unchanged in differentiable and plain modes, and any plain-ndarray
operand acts as a constant (no gradient flows into it), which is how
detached values are expressed.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .errors import NonFiniteError

# Re-run mode: when set, every op validates its output (and backward
# every gradient) so the op that produced a non-finite value can be
# named. Off by default; value_and_grad flips it only to localize a
# failure it already observed, so the fast path pays nothing.
_CHECK = False


class Tensor:
    """Node in the computation graph; wraps a float64 ndarray."""

    # Keep numpy from consuming Tensor operands elementwise in mixed
    # expressions; reflected operators must reach Tensor.__radd__ etc.
    __array_ufunc__ = None
    __slots__ = ("data", "grad", "_op", "_parents", "_backward")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._op = "leaf"
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(op={self._op!r}, shape={self.data.shape})"

    # -- operator sugar -------------------------------------------------
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
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive here")
        return mul(self, 1.0 / float(other))

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self):
        return sum_all(self)

    def reshape(self, shape):
        return reshape(self, shape)


def _raw(x) -> np.ndarray:
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _make(data, op, parents, backward) -> Tensor:
    if _CHECK and not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    out._parents = parents
    out._backward = backward
    return out


def _acc(t: Tensor, g: np.ndarray):
    # Copy on first write: g may alias the child's grad buffer.
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum g down to `shape`, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- binary primitives ---------------------------------------------------


def add(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.add(a, b)
    ad, bd = _raw(a), _raw(b)
    out = ad + bd

    def backward(g):
        if ta:
            _acc(a, _unbroadcast(g, ad.shape))
        if tb:
            _acc(b, _unbroadcast(g, bd.shape))

    return _make(out, "add", (a, b), backward)


def sub(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.subtract(a, b)
    ad, bd = _raw(a), _raw(b)
    out = ad - bd

    def backward(g):
        if ta:
            _acc(a, _unbroadcast(g, ad.shape))
        if tb:
            _acc(b, _unbroadcast(-g, bd.shape))

    return _make(out, "sub", (a, b), backward)


def mul(a, b):
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.multiply(a, b)
    ad, bd = _raw(a), _raw(b)
    out = ad * bd

    def backward(g):
        if ta:
            _acc(a, _unbroadcast(g * bd, ad.shape))
        if tb:
            _acc(b, _unbroadcast(g * ad, bd.shape))

    return _make(out, "mul", (a, b), backward)


def matmul(a, b):
    """Matrix product for the shapes the model uses:
    (m,)@(m,n), (B,m)@(m,n), and (m,n)@(n,)."""
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    if not (ta or tb):
        return np.matmul(a, b)
    ad, bd = _raw(a), _raw(b)
    if ad.ndim == 2 and bd.ndim == 1:
        out = ad @ bd

        def backward(g):
            if ta:
                _acc(a, np.outer(g, bd))
            if tb:
                _acc(b, ad.T @ g)

        return _make(out, "matmul", (a, b), backward)
    if bd.ndim != 2 or ad.ndim not in (1, 2):
        raise ValueError(f"unsupported matmul shapes {ad.shape} @ {bd.shape}")
    out = ad @ bd

    def backward(g):
        if ad.ndim == 1:
            if ta:
                _acc(a, bd @ g)
            if tb:
                _acc(b, np.outer(ad, g))
        else:
            if ta:
                _acc(a, g @ bd.T)
            if tb:
                _acc(b, ad.T @ g)

    return _make(out, "matmul", (a, b), backward)


# -- unary primitives ----------------------------------------------------


def neg(x):
    if not isinstance(x, Tensor):
        return np.negative(x)

    def backward(g):
        _acc(x, -g)

    return _make(-x.data, "neg", (x,), backward)


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    out = np.exp(x.data)

    def backward(g):
        _acc(x, g * out)

    return _make(out, "exp", (x,), backward)


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    out = np.log(x.data)

    def backward(g):
        _acc(x, g / x.data)

    return _make(out, "log", (x,), backward)


def power(x, p: float):
    if not isinstance(x, Tensor):
        return np.power(x, p)
    out = np.power(x.data, p)

    def backward(g):
        _acc(x, g * p * np.power(x.data, p - 1.0))

    return _make(out, "pow", (x,), backward)


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    out = np.tanh(x.data)

    def backward(g):
        _acc(x, g * (1.0 - out * out))

    return _make(out, "tanh", (x,), backward)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # Two-branch form: never exponentiates a positive argument.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x):
    if not isinstance(x, Tensor):
        return _sigmoid_stable(np.asarray(x, dtype=np.float64))
    out = _sigmoid_stable(x.data)

    def backward(g):
        _acc(x, g * out * (1.0 - out))

    return _make(out, "sigmoid", (x,), backward)


def relu(x):
    if not isinstance(x, Tensor):
        return np.maximum(x, 0.0)
    out = np.maximum(x.data, 0.0)

    def backward(g):
        _acc(x, g * (x.data > 0.0))

    return _make(out, "relu", (x,), backward)


def absolute(x):
    # Subgradient at 0 is taken as 0 (np.sign(0) == 0).
    if not isinstance(x, Tensor):
        return np.abs(x)
    out = np.abs(x.data)

    def backward(g):
        _acc(x, g * np.sign(x.data))

    return _make(out, "abs", (x,), backward)


def clip(x, lo: float, hi: float):
    if not isinstance(x, Tensor):
        return np.clip(x, lo, hi)
    out = np.clip(x.data, lo, hi)

    def backward(g):
        _acc(x, g * ((x.data >= lo) & (x.data <= hi)))

    return _make(out, "clip", (x,), backward)


def sum_all(x):
    if not isinstance(x, Tensor):
        return np.sum(x)
    out = np.sum(x.data)

    def backward(g):
        _acc(x, np.full(x.data.shape, float(g)))

    return _make(np.asarray(out), "sum", (x,), backward)


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(x, shape)
    old = x.data.shape
    out = x.data.reshape(shape)

    def backward(g):
        _acc(x, g.reshape(old))

    return _make(out, "reshape", (x,), backward)


def concat(parts, axis: int = -1):
    tensors = [p for p in parts if isinstance(p, Tensor)]
    datas = [_raw(p) for p in parts]
    if not tensors:
        return np.concatenate(datas, axis=axis)
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]

    def backward(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for p, piece in zip(parts, pieces):
            if isinstance(p, Tensor):
                _acc(p, piece)

    return _make(out, "concat", tuple(parts), backward)


def getitem(x: Tensor, idx):
    """Basic slicing only; slices must not select any index twice."""
    out = x.data[idx]

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.data)
        x.grad[idx] += g

    return _make(out, "getitem", (x,), backward)


# -- backward driver -----------------------------------------------------


def _topo(root: Tensor) -> list[Tensor]:
    """Parents-before-children order over the graph reaching root."""
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
            if isinstance(p, Tensor) and id(p) not in seen:
                stack.append((p, False))
    return order


def _run_backward(root: Tensor, check: bool = False):
    root.grad = np.ones_like(root.data)
    order = _topo(root)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        node._backward(node.grad)
        if check:
            for p in node._parents:
                if (
                    isinstance(p, Tensor)
                    and p.grad is not None
                    and not np.all(np.isfinite(p.grad))
                ):
                    raise NonFiniteError(node._op, "backward")


def _wrap_leaves(params: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.items()}


def _locate_nonfinite(fn, params, has_aux):
    """Re-run fn with per-op checking to name the offending op."""
    global _CHECK
    _CHECK = True
    try:
        out = fn(_wrap_leaves(params))
        if has_aux:
            out = out[0]
        _run_backward(out, check=True)
    finally:
        _CHECK = False


def value_and_grad(fn: Callable, params: Mapping[str, np.ndarray], has_aux: bool = False):
    """Evaluate a scalar loss and its gradients w.r.t. a parameter map.

    fn receives a dict mapping the same names to leaf Tensors and must
    return a scalar Tensor (or, with has_aux, a (scalar Tensor, aux)
    pair; aux passes through untouched). Returns (value, grads) or
    ((value, aux), grads); grads maps every parameter name to a float64
    array of the parameter's shape, with zeros for unused parameters.

    A non-finite loss or gradient triggers a checked re-run that raises
    NonFiniteError naming the op that produced the first bad value.
    """
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"parameter '{name}'")
    leaves = _wrap_leaves(params)
    out = fn(leaves)
    aux = None
    if has_aux:
        out, aux = out
    if not isinstance(out, Tensor):
        raise TypeError("loss function must return a Tensor")
    if out.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {out.data.shape}")
    value = out.data.item()
    _run_backward(out)
    grads = {
        k: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for k, t in leaves.items()
    }
    bad = not np.isfinite(value) or any(
        not np.all(np.isfinite(g)) for g in grads.values()
    )
    if bad:
        _locate_nonfinite(fn, params, has_aux)
        raise NonFiniteError("unlocated non-determinism")
    if has_aux:
        return (value, aux), grads
    return value, grads


def eval_scalar(fn: Callable, params: Mapping[str, np.ndarray]) -> float:
    """Forward-only evaluation of a loss function (no gradients kept)."""
    out = fn(_wrap_leaves(params))
    if isinstance(out, tuple):
        out = out[0]
    return out.data.item()


def finite_diff_check(
    fn: Callable,
    params: Mapping[str, np.ndarray],
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference grads.

    Error per coordinate is |analytic - central| / max(|analytic|,
    |central|, 1e-12); the maximum over every coordinate of every
    parameter is returned.
    """
    _, grads = value_and_grad(fn, params)
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    worst = 0.0
    for name in params:
        flat = work[name].ravel()
        gflat = grads[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = eval_scalar(fn, work)
            flat[i] = orig - step
            down = eval_scalar(fn, work)
            flat[i] = orig
            central = (up - down) / (2.0 * step)
            denom = max(abs(gflat[i]), abs(central), 1e-12)
            err = abs(gflat[i] - central) / denom
            if err > worst:
                worst = err
    return worst
