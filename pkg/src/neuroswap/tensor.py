"""Dense tensors with a small reverse-mode autodiff tape.

Every op takes and returns :class:`Tensor`. The graph is recorded only when
at least one input requires a gradient and grad mode is enabled. ``backward``
walks the recorded nodes in reverse topological order, visiting each node
once and summing gradients over fan-out.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, DomainError, NonFiniteError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    # one reduction is cheaper than isfinite().all(); an overflowing sum only
    # triggers the exact check
    if arr.size and not np.isfinite(np.add.reduce(arr, axis=None)):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{op}: produced NaN/Inf")
    return arr


class Tensor:
    """N-dimensional array node.

    ``data`` is a numpy array (float32 for training, float64 for gradient
    checks). ``grad`` is populated on leaves with ``requires_grad`` after
    :meth:`backward`.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._op = "leaf"
        self._consumed = False
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    # -- autodiff ---------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every leaf's ``grad``.

        The root must be a scalar unless an explicit seed ``grad`` is given.
        A graph can be differentiated once; a second call raises.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward needs a scalar root, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if self._consumed:
            raise ContractError("backward already called on this graph; rebuild it first")
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._consumed = True


def _topo_order(root: Tensor) -> list[Tensor]:
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None and isinstance(x, (int, float)):
        dtype = np.float64
    return Tensor(x, dtype=dtype)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    if np.any(b.data == 0):
        raise DomainError("div: zero denominator")

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), back, "div")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(x.data * x.dtype.type(c), (x,), lambda g: (g * c,), "scale")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1 - y * y),), "tanh")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError("log: input must be strictly positive")
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2 * g * x.data,), "square")


def elementwise(x: Tensor, f: str, other=None) -> Tensor:
    """Dispatch a named pointwise function (relu, tanh, exp, log, add, mul, scale)."""
    unary = {"relu": relu, "tanh": tanh, "exp": exp, "log": log}
    if f in unary:
        return unary[f](x)
    if f == "add":
        return add(x, other)
    if f == "mul":
        return mul(x, other)
    if f == "scale":
        return scale(x, other)
    raise ValueError(f"unknown elementwise function {f!r}")


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity forward; multiplies incoming gradients by ``-lam``."""
    lam = float(lam)
    return _make(x.data.copy(), (x,), lambda g: (-lam * g,), "grad_reverse")


# ---------------------------------------------------------------------------
# reductions and shape ops


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = np.sum(x.data, axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return _make(np.asarray(y, dtype=x.dtype), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return scale(tsum(x, axis, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(x: Tensor, idx) -> Tensor:
    def back(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(np.asarray(x.data[idx]), (x,), back, "getitem")


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with numpy broadcasting over leading dims."""
    a, b = _coerce_pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` of shape [in, out]."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ---------------------------------------------------------------------------
# softmax family


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _make(y, (x,), back, "softmax")


def log_softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax along ``axis``.

    With a boolean ``mask`` the normaliser sums only over entries where the
    mask is true. Masked-out outputs are set to 0 and receive no gradient.
    """
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        if not mask.any(axis=axis).all():
            raise DimensionError("log_softmax: a slice has an empty mask")
        data = np.where(mask, data, -np.inf)
    m = data.max(axis=axis, keepdims=True)
    with np.errstate(invalid="ignore"):
        e = np.exp(data - m)
    lse = np.log(e.sum(axis=axis, keepdims=True)) + m
    y = data - lse
    p = np.exp(y)
    if mask is not None:
        y = np.where(mask, y, 0).astype(x.dtype)
        p = np.where(mask, p, 0).astype(x.dtype)

    def back(g):
        if mask is not None:
            g = np.where(mask, g, 0)
        return ((g - p * g.sum(axis=axis, keepdims=True)).astype(x.dtype),)

    return _make(y.astype(x.dtype), (x,), back, "log_softmax")


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """Divide by the L2 norm along ``axis``, norms floored at ``eps``."""
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    floored = norm <= eps
    denom = np.where(floored, eps, norm).astype(x.dtype)
    y = x.data / denom

    def back(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        gx = np.where(floored, g / denom, (g - y * proj) / denom)
        return (gx.astype(x.dtype),)

    return _make(y, (x,), back, "l2_normalize")


def cosine_similarity_matrix(a: Tensor, b: Tensor, eps: float = 1e-8) -> Tensor:
    """Pairwise cosine similarities: ``M[i, k] = cos(a_i, b_k)``."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_similarity_matrix: incompatible {a.shape} and {b.shape}")
    return matmul(l2_normalize(a, 1, eps), transpose(l2_normalize(b, 1, eps)))


# ---------------------------------------------------------------------------
# convolution and pooling


def _pad_spatial(x: np.ndarray, pad: tuple[int, ...], value: float = 0.0) -> np.ndarray:
    if not any(pad):
        return x
    widths = [(0, 0), (0, 0)] + [(p, p) for p in pad]
    return np.pad(x, widths, constant_values=value)


def _tuple(v, n: int) -> tuple[int, ...]:
    if isinstance(v, (tuple, list)):
        if len(v) != n:
            raise DimensionError(f"expected {n} values, got {v}")
        return tuple(int(i) for i in v)
    return (int(v),) * n


def _out_extent(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _windows(xp: np.ndarray, ksize: tuple[int, ...], stride: tuple[int, ...]) -> np.ndarray:
    nd = len(ksize)
    axes = tuple(range(2, 2 + nd))
    w = sliding_window_view(xp, ksize, axis=axes)
    sl = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return w[sl]  # [N, C, *out, *k]


def conv(x: Tensor, kernels: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation over 1 or 2 spatial dims.

    ``x`` is [N, C, *S], ``kernels`` is [O, C, *K]. Output extent per axis is
    ``floor((S + 2*pad - K) / stride) + 1``.
    """
    nd = kernels.ndim - 2
    if nd not in (1, 2) or x.ndim != nd + 2:
        raise DimensionError(f"conv: input {x.shape} incompatible with kernels {kernels.shape}")
    if x.shape[1] != kernels.shape[1]:
        raise DimensionError(f"conv: {x.shape[1]} input channels but kernels expect {kernels.shape[1]}")
    ksize = kernels.shape[2:]
    stride = _tuple(stride, nd)
    pad = _tuple(padding, nd)
    spatial = x.shape[2:]
    for n, k, p in zip(spatial, ksize, pad):
        if k > n + 2 * p:
            raise DimensionError(f"conv: kernel {ksize} larger than padded input {spatial}")
    out_sp = tuple(_out_extent(n, k, s, p) for n, k, s, p in zip(spatial, ksize, stride, pad))
    xp = _pad_spatial(x.data, pad)
    win = _windows(xp, ksize, stride)
    win_axes = [1] + list(range(2 + nd, 2 + 2 * nd))
    y = np.tensordot(win, kernels.data, axes=(win_axes, [1] + list(range(2, 2 + nd))))
    y = np.moveaxis(y, -1, 1)  # [N, O, *out]
    if bias is not None:
        y = y + bias.data.reshape((1, -1) + (1,) * nd)
    y = np.ascontiguousarray(y)

    def back(g):
        gk = None
        gx = None
        if kernels.requires_grad:
            gk = np.tensordot(g, win, axes=([0] + list(range(2, 2 + nd)), [0] + list(range(2, 2 + nd))))
        if x.requires_grad:
            cols = np.tensordot(g, kernels.data, axes=([1], [0]))  # [N, *out, C, *K]
            gxp = np.zeros_like(xp)
            for offs in np.ndindex(*ksize):
                sl = (slice(None), slice(None)) + tuple(
                    slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_sp))
                piece = cols[(Ellipsis,) + offs]  # [N, *out, C]
                gxp[sl] += np.moveaxis(piece, -1, 1)
            crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad, spatial))
            gx = gxp[crop]
        gb = None
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0,) + tuple(range(2, 2 + nd)))
        return (gx, gk, gb) if bias is not None else (gx, gk)

    parents = (x, kernels, bias) if bias is not None else (x, kernels)
    return _make(y, parents, back, f"conv{nd}d")


def pool_max(x: Tensor, window, stride=None, padding=0) -> Tensor:
    """Max pooling over the trailing 1 or 2 dims of [N, C, *S].

    Gradients route to the arg-max of each window; ties go to the first
    element in row-major window order.
    """
    nd = x.ndim - 2
    if nd not in (1, 2):
        raise DimensionError(f"pool_max: expected [N, C, *S] with 1-2 spatial dims, got {x.shape}")
    ksize = _tuple(window, nd)
    if any(k <= 0 for k in ksize):
        raise DimensionError("pool_max: window must be positive")
    stride = ksize if stride is None else _tuple(stride, nd)
    pad = _tuple(padding, nd)
    spatial = x.shape[2:]
    for n, k, p in zip(spatial, ksize, pad):
        if k > n + 2 * p:
            raise DimensionError(f"pool_max: window {ksize} larger than padded input {spatial}")
    out_sp = tuple(_out_extent(n, k, s, p) for n, k, s, p in zip(spatial, ksize, stride, pad))
    xp = _pad_spatial(x.data, pad, value=-np.inf)
    offsets = list(np.ndindex(*ksize))

    def window_slice(offs):
        return (slice(None), slice(None)) + tuple(
            slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_sp))

    # strict '>' keeps the earliest offset on ties
    y = xp[window_slice(offsets[0])].copy()
    arg = np.zeros(y.shape, dtype=np.int16)
    for k_idx, offs in enumerate(offsets[1:], start=1):
        cand = xp[window_slice(offs)]
        upd = cand > y
        np.copyto(y, cand, where=upd)
        arg[upd] = k_idx

    def back(g):
        gxp = np.zeros_like(xp)
        for k_idx, offs in enumerate(offsets):
            gxp[window_slice(offs)] += np.where(arg == k_idx, g, 0)
        crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad, spatial))
        return (gxp[crop],)

    return _make(y, (x,), back, f"maxpool{nd}d")


def pool_avg(x: Tensor, factor: int) -> Tensor:
    """Non-overlapping average pooling by an integer factor on trailing 2 dims."""
    n, c, h, w = x.shape
    if factor == 1:
        return x
    if h % factor or w % factor:
        raise DimensionError(f"pool_avg: {h}x{w} not divisible by {factor}")
    ho, wo = h // factor, w // factor
    y = x.data.reshape(n, c, ho, factor, wo, factor).mean(axis=(3, 5))

    def back(g):
        gx = np.repeat(np.repeat(g, factor, axis=2), factor, axis=3) / (factor * factor)
        return (gx.astype(x.dtype),)

    return _make(y, (x,), back, "avgpool2d")


# ---------------------------------------------------------------------------
# batch normalisation


class BatchNormState:
    """Learnable affine parameters plus running statistics for one BN layer."""

    def __init__(self, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps


def batch_norm(x: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Normalise channel axis 1 of ``x`` over every other axis."""
    from .errors import ConfigurationError

    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    gamma = state.gamma.data.reshape(bshape)
    beta = state.beta.data.reshape(bshape)
    if mode == "train":
        count = x.size // x.shape[1]
        if x.shape[0] < 2:
            raise ConfigurationError("batch_norm: train mode needs batch size >= 2")
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        xhat = xc * inv
        m = state.momentum
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        state.running_mean[:] = (1 - m) * state.running_mean + m * mu.reshape(-1)
        state.running_var[:] = (1 - m) * state.running_var + m * unbiased
    elif mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var.reshape(bshape) + state.eps)
        xhat = (x.data - state.running_mean.reshape(bshape)) * inv
        count = None
    else:
        raise ValueError(f"batch_norm mode must be 'train' or 'eval', got {mode!r}")
    y = (gamma * xhat + beta).astype(x.dtype)

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma
        if mode == "train":
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv
        return gx.astype(x.dtype), gg.astype(x.dtype), gb.astype(x.dtype)

    return _make(y, (x, state.gamma, state.beta), back, "batch_norm")


def parameters_of(objs: Iterable) -> list[Tensor]:
    """Flatten nested lists of tensors, keeping only those that need grads."""
    out: list[Tensor] = []
    for o in objs:
        if isinstance(o, Tensor):
            if o.requires_grad:
                out.append(o)
        else:
            out.extend(parameters_of(o))
    return out
