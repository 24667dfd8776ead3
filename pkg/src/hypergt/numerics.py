"""Dense float64 kernels with a minimal reverse-mode tape.

Every kernel takes ``Tensor`` (or array-like) inputs and returns a ``Tensor``
that remembers how to push its gradient back to its parents. Calling
``backward()`` on a scalar output fills ``.grad`` on every ``Parameter``
reachable from it.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_CLAMP = 1e-12
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def backward(self) -> None:
        if self.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        order = _topological(self)
        for t in order:
            if isinstance(t, Parameter):
                t.zero_grad()
            else:
                t.grad = None
        self.grad = np.ones_like(self.value)
        for t in reversed(order):
            if t.backward_fn is None or t.grad is None:
                continue
            grads = t.backward_fn(t.grad)
            for parent, g in zip(t.parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        # drop intermediates so the graph can be collected
        for t in order:
            if not isinstance(t, Parameter):
                t.grad = None

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.value.shape})"


class Parameter(Tensor):
    """A learnable leaf with a name and a gradient of matching shape."""

    __slots__ = ("name",)

    def __init__(self, value, name: str):
        super().__init__(np.array(value, dtype=np.float64, order="C"))
        self.name = name
        self.requires_grad = True
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)


def _topological(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {name}")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_in, fan_out))


# --------------------------------------------------------------------------
# kernels


def matmul(a, b) -> Tensor:
    """Matrix product; 3-D operands are treated as stacks of matrices."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim not in (2, 3) or bv.ndim not in (2, 3) or av.shape[-1] != bv.shape[-2]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        ga = _unbroadcast(g @ _swap(bv), av.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(av) @ g, bv.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(av @ bv, (a, b), backward)


def _swap(x: np.ndarray) -> np.ndarray:
    # strided operands send stacked matmul down a slow path
    return np.ascontiguousarray(np.swapaxes(x, -1, -2))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may be a row vector broadcast over rows."""
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product (used for dropout masks)."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value

    def backward(g):
        ga = _unbroadcast(g * bv, av.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, bv.shape) if b.requires_grad else None
        return ga, gb

    return Tensor(av * bv, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value * c, (a,), lambda g: (g * c,))


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return Tensor(_swap(a.value), (a,), lambda g: (_swap(g),))


def split_heads(a, heads: int) -> Tensor:
    """(N, heads*dk) -> (heads, N, dk)."""
    a = as_tensor(a)
    n, width = a.shape
    dk = width // heads
    out = np.ascontiguousarray(a.value.reshape(n, heads, dk).transpose(1, 0, 2))
    return Tensor(out, (a,), lambda g: (g.transpose(1, 0, 2).reshape(n, width),))


def merge_heads(a) -> Tensor:
    """(heads, N, dk) -> (N, heads*dk); inverse of ``split_heads``."""
    a = as_tensor(a)
    h, n, dk = a.shape
    out = a.value.transpose(1, 0, 2).reshape(n, h * dk)
    return Tensor(out, (a,), lambda g: (g.reshape(n, h, dk).transpose(1, 0, 2),))


def mean_axis0(a) -> Tensor:
    a = as_tensor(a)
    k = a.shape[0]
    return Tensor(a.value.mean(axis=0), (a,), lambda g: (np.broadcast_to(g / k, a.shape),))


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)


def gelu(a) -> Tensor:
    """Tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.value
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * dinner),)

    return Tensor(out, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return Tensor(a.value * mask, (a,), lambda g: (g * mask,))


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """Per-row normalisation followed by a learnable affine map."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    xv = x.value
    mu = xv.mean(axis=1, keepdims=True)
    xc = xv - mu
    var = (xc**2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    gv = gain.value
    out = xhat * gv + bias.value

    def backward(g):
        dxhat = g * gv
        d = xv.shape[1]
        dx = inv_std / d * (
            d * dxhat
            - dxhat.sum(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
        )
        dgain = _unbroadcast(g * xhat, gv.shape)
        dbias = _unbroadcast(g, bias.shape)
        return dx, dgain, dbias

    return Tensor(out, (x, gain, bias), backward)


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    e = x - x.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def row_softmax(a) -> Tensor:
    """Softmax along each row (last axis) with max subtraction for stability."""
    a = as_tensor(a)
    s = softmax_rows(a.value)

    def backward(g):
        gs = g * s
        gs -= s * gs.sum(axis=-1, keepdims=True)
        return (gs,)

    return Tensor(s, (a,), backward)


def clamped_log(a, floor: float = LOG_CLAMP) -> Tensor:
    """``log(max(a, floor))``; no gradient flows through clamped entries."""
    a = as_tensor(a)
    av = a.value
    clipped = np.maximum(av, floor)
    live = av > floor
    return Tensor(np.log(clipped), (a,), lambda g: (np.where(live, g / clipped, 0.0),))


def concat_rows(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[0] for p in parts]
    widths = {p.shape[1] for p in parts}
    if len(widths) != 1:
        raise ValueError(f"concat_rows width mismatch: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    return Tensor(np.vstack([p.value for p in parts]), parts, backward)


def concat_cols(parts: Sequence) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(g[:, bounds[k] : bounds[k + 1]] for k in range(len(parts)))

    return Tensor(np.hstack([p.value for p in parts]), parts, backward)


def slice_rows(a, index) -> Tensor:
    """Select rows by a slice or an integer index array."""
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return Tensor(a.value[index], (a,), backward)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return Tensor(a.value[:, start:stop], (a,), backward)


def gather(a, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Vector of entries ``a[rows[k], cols[k]]``."""
    a = as_tensor(a)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, (rows, cols), g)
        return (out,)

    return Tensor(a.value[rows, cols], (a,), backward)


def weighted_sum(a, weights) -> Tensor:
    """``sum(weights * a)`` for a constant weight array."""
    a = as_tensor(a)
    w = np.asarray(weights, dtype=np.float64)
    return Tensor(np.sum(a.value * w), (a,), lambda g: (g * w,))


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size
    return Tensor(a.value.mean(), (a,), lambda g: (np.full(a.shape, g / n),))


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.value.sum(), (a,), lambda g: (np.full(a.shape, g),))


def cross_entropy_rows(pred, targets) -> Tensor:
    """Mean of ``-log pred[i, target_i]`` with the log clamped at 1e-12.

    ``targets`` is either a one-hot matrix or a vector of class ids.
    """
    pred = as_tensor(pred)
    t = np.asarray(targets)
    if t.ndim == 2:
        t = t.argmax(axis=1)
    rows = np.arange(len(t))
    picked = gather(pred, rows, t)
    return scale(sum_all(clamped_log(picked)), -1.0 / len(t))


# --------------------------------------------------------------------------
# gradient checking


def finite_diff_gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    report: dict | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn`` must rebuild the loss from the current parameter values on
    each call. When ``report`` is given it is filled with the worst relative
    error per parameter name.
    """
    params = list(params)
    zero_grads(params)
    loss = loss_fn()
    loss.backward()
    analytic = {id(p): p.grad.copy() for p in params}
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        num = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + eps
            up = loss_fn().item()
            flat[k] = orig - eps
            down = loss_fn().item()
            flat[k] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                raise FloatingPointError(f"non-finite loss while perturbing {p.name}[{k}]")
            num[k] = (up - down) / (2 * eps)
        a = analytic[id(p)].reshape(-1)
        rel = np.abs(a - num) / np.maximum(1e-8, np.abs(a) + np.abs(num))
        p_worst = float(rel.max()) if rel.size else 0.0
        if report is not None:
            report[p.name] = p_worst
        worst = max(worst, p_worst)
    return worst
