"""Dense n-d arrays with reverse-mode automatic differentiation.

Everything the network computes goes through the `Tensor` class below: each
operation records its inputs and a closure that maps the output gradient to
input gradients.  `backward` replays those closures in reverse topological
order, accumulating gradients across fan-out.  numpy supplies the raw array
arithmetic; there is no third-party tensor backend.
"""

from __future__ import annotations

import contextlib
import math
import threading

import numpy as np

DEFAULT_DTYPE = np.float32

# graph recording is per-thread so forward-only evaluation in a worker pool
# cannot switch gradients off under a concurrently training thread
_GRAD_STATE = threading.local()
_FINITE_CHECKS = False


def grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


def set_finite_checks(enabled: bool) -> None:
    """Globally toggle NaN/Inf assertions on every op output (debug aid)."""
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Context manager that disables graph recording (forward-only eval)."""
    prev = grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _coerce(x, like: Tensor) -> Tensor:
    """Wrap python scalars / arrays as constant tensors of a matching dtype."""
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _check_dtypes(op: str, *ts: Tensor) -> None:
    dts = {t.dtype for t in ts}
    if len(dts) > 1:
        raise ValueError(f"{op}: mixed dtypes {sorted(str(d) for d in dts)}")


def _make(data: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    if _FINITE_CHECKS and not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite values produced by op '{op}'")
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# -- graph traversal ---------------------------------------------------------


def _toposort(root: Tensor) -> list:
    """Iterative post-order DFS (graphs can be thousands of nodes deep)."""
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(leaf) into every reachable leaf's `.grad`.

    The recorded graph is walked exactly once in reverse topological order;
    fan-out contributions accumulate by addition.  Leaf gradients accumulate
    across repeated calls (callers reset with `zero_grad`).
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if g.shape != node.data.shape:
            raise AssertionError(
                f"gradient shape {g.shape} does not match value shape {node.data.shape}"
            )
        if node._backward is not None:
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g


def collect_leaves(root: Tensor) -> list:
    """All grad-requiring leaf tensors reachable from `root` (test helper)."""
    return [t for t in _toposort(root) if t._backward is None and t.requires_grad]


# -- elementwise and shape ops -------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _coerce(b, a)
    _check_dtypes("add", a, b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bw, "add")


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    b = _coerce(b, a)
    _check_dtypes("mul", a, b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g * bd, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw, "mul")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")
    _check_dtypes("matmul", a, b)
    data = a.data @ b.data
    ad, bd = a.data, b.data

    def bw(g):
        ga = _unbroadcast(g @ bd.swapaxes(-1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(ad.swapaxes(-1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(data, (a, b), bw, "matmul")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (g.transpose(inv),)

    return _make(data, (a,), bw, "transpose")


def swap_last(a: Tensor) -> Tensor:
    """Transpose the last two axes (batch dims untouched)."""
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.shape
    data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(old),)

    return _make(data, (a,), bw, "reshape")


def flip_last(a: Tensor) -> Tensor:
    data = a.data[..., ::-1].copy()

    def bw(g):
        return (g[..., ::-1].copy(),)

    return _make(data, (a,), bw, "flip_last")


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]
    if np.isscalar(data) or data.ndim == 0:
        data = np.asarray(data)

    def bw(g):
        out = np.zeros_like(a.data)
        out[idx] = g
        return (out,)

    return _make(data.copy(), (a,), bw, "getitem")


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of an empty sequence")
    _check_dtypes("concat", *tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _make(data, tuple(tensors), bw, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("stack of an empty sequence")
    _check_dtypes("stack", *tensors)
    data = np.stack([t.data for t in tensors], axis=axis)

    def bw(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(moved[i].copy() for i in range(len(tensors)))

    return _make(data, tuple(tensors), bw, "stack")


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    in_shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, in_shape).astype(a.dtype, copy=True),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, in_shape).astype(a.dtype, copy=True),)

    return _make(np.asarray(data), (a,), bw, "sum")


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def bw(g):
        return (g * mask,)

    return _make(data, (a,), bw, "relu")


def prelu(a: Tensor, alpha: Tensor, channel_axis: int = -3) -> Tensor:
    """PReLU with one learnable slope per channel along `channel_axis`."""
    c = a.shape[channel_axis]
    if alpha.shape != (c,):
        raise ValueError(f"prelu slope shape {alpha.shape} does not match {c} channels")
    shape = [1] * a.ndim
    shape[channel_axis] = c
    al = alpha.data.reshape(shape)
    pos = a.data > 0
    data = np.where(pos, a.data, al * a.data)
    ad = a.data

    def bw(g):
        ga = g * np.where(pos, 1.0, al).astype(a.dtype) if a.requires_grad else None
        if alpha.requires_grad:
            contrib = np.where(pos, 0.0, g * ad)
            keep = channel_axis % a.ndim
            axes = tuple(ax for ax in range(a.ndim) if ax != keep)
            galpha = contrib.sum(axis=axes).astype(alpha.dtype)
        else:
            galpha = None
        return ga, galpha

    return _make(data, (a, alpha), bw, "prelu")


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split form never exponentiates a positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    data = _sigmoid_np(a.data)

    def bw(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - data * data),)

    return _make(data, (a,), bw, "tanh")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - dot),)

    return _make(data, (a,), bw, "softmax")


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift per coordinate."""
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError(
            f"layer_norm gain/bias shapes {gain.shape}/{bias.shape} do not match width {d}"
        )
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    data = xhat * gain.data + bias.data
    lead = tuple(range(a.ndim - 1))

    def bw(g):
        ggain = (g * xhat).sum(axis=lead).astype(gain.dtype) if gain.requires_grad else None
        gbias = g.sum(axis=lead).astype(bias.dtype) if bias.requires_grad else None
        if a.requires_grad:
            dxhat = g * gain.data
            ga = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            ga = ga.astype(a.dtype)
        else:
            ga = None
        return ga, ggain, gbias

    return _make(data, (a, gain, bias), bw, "layer_norm")


# -- structured ops ------------------------------------------------------------


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor | None = None) -> Tensor:
    """2-D correlation with 'same' zero padding.

    x: [C_in, T, F] or [B, C_in, T, F]; kernels: [C_out, C_in, kh, kw] with odd
    kh, kw.  T and F are preserved.
    """
    kd = kernels.data
    if kd.ndim != 4:
        raise ValueError(f"conv2d kernels must be 4-d, got {kernels.shape}")
    cout, cin, kh, kw = kd.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"conv2d requires odd kernel sides, got {kh}x{kw}")
    batched = x.ndim == 4
    if x.ndim not in (3, 4):
        raise ValueError(f"conv2d input must be [C,T,F] or [B,C,T,F], got {x.shape}")
    if x.shape[-3] != cin:
        raise ValueError(
            f"conv2d channel mismatch: input {x.shape} vs kernels {kernels.shape}"
        )
    _check_dtypes("conv2d", x, kernels, *([bias] if bias is not None else []))
    xd = x.data if batched else x.data[None]
    ph, pw = kh // 2, kw // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    data = np.einsum("bctfij,ocij->botf", win, kd, optimize=True).astype(x.dtype)
    if bias is not None:
        if bias.shape != (cout,):
            raise ValueError(f"conv2d bias shape {bias.shape} != ({cout},)")
        data = data + bias.data[None, :, None, None]
    parents = (x, kernels) if bias is None else (x, kernels, bias)

    def bw(g):
        g4 = g if batched else g[None] if g.ndim == 3 else g
        gk = (
            np.einsum("botf,bctfij->ocij", g4, win, optimize=True).astype(kernels.dtype)
            if kernels.requires_grad
            else None
        )
        if x.requires_grad:
            gp = np.pad(g4, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (kh, kw), axis=(2, 3))
            kflip = kd[:, :, ::-1, ::-1]
            gx = np.einsum("botfij,ocij->bctf", gwin, kflip, optimize=True).astype(x.dtype)
            if not batched:
                gx = gx[0]
        else:
            gx = None
        if bias is None:
            return gx, gk
        gb = g4.sum(axis=(0, 2, 3)).astype(bias.dtype) if bias.requires_grad else None
        return gx, gk, gb

    out = data if batched else data[0]
    return _make(out, parents, bw, "conv2d")


def rel_gather(a: Tensor) -> Tensor:
    """[..., n, 2n-1] -> [..., n, n]: out[..., p, c] = a[..., p, c - p + n - 1].

    Converts an offset-indexed table product into a (position, position) map;
    its adjoint is `rel_scatter`.  The per-row slices are contiguous block
    copies, which beats a fancy-index gather here.
    """
    n = a.shape[-2]
    if a.shape[-1] != 2 * n - 1:
        raise ValueError(f"rel_gather expects [..., n, 2n-1], got {a.shape}")
    data = np.empty(a.shape[:-1] + (n,), dtype=a.dtype)
    for p in range(n):
        data[..., p, :] = a.data[..., p, n - 1 - p : 2 * n - 1 - p]

    def bw(g):
        out = np.zeros_like(a.data)
        for p in range(n):
            out[..., p, n - 1 - p : 2 * n - 1 - p] = g[..., p, :]
        return (out,)

    return _make(data, (a,), bw, "rel_gather")


def rel_scatter(w: Tensor) -> Tensor:
    """[..., n, n] -> [..., n, 2n-1]: out[..., p, c - p + n - 1] = w[..., p, c]."""
    n = w.shape[-2]
    if w.shape[-1] != n:
        raise ValueError(f"rel_scatter expects [..., n, n], got {w.shape}")
    data = np.zeros(w.shape[:-1] + (2 * n - 1,), dtype=w.dtype)
    for p in range(n):
        data[..., p, n - 1 - p : 2 * n - 1 - p] = w.data[..., p, :]

    def bw(g):
        out = np.empty_like(w.data)
        for p in range(n):
            out[..., p, :] = g[..., p, n - 1 - p : 2 * n - 1 - p]
        return (out,)

    return _make(data, (w,), bw, "rel_scatter")


def gru_cell_steps(x: Tensor, h: Tensor, wz, uz, bz, wr, ur, br, wh, uh, bh) -> Tensor:
    """GRU step spelled out in composed ops; the reference route for the
    fused `gru_cell` below (same numbers, ~13 graph nodes instead of 1)."""
    z = sigmoid(add(add(matmul(x, wz), matmul(h, uz)), bz))
    r = sigmoid(add(add(matmul(x, wr), matmul(h, ur)), br))
    cand = tanh(add(add(matmul(x, wh), matmul(mul(r, h), uh)), bh))
    return add(mul(z, h), mul(add(mul(z, -1.0), 1.0), cand))


def gru_cell(x: Tensor, h: Tensor, wz, uz, bz, wr, ur, br, wh, uh, bh) -> Tensor:
    """One GRU step, fused into a single graph node.

    Gates come from (x, h); the candidate from reset-gated h; a saturated
    update gate (z -> 1) passes h through unchanged.  Shapes: x [..., d_in],
    h [..., d_h]; weight matrices [d_in|d_h, d_h].  The scan over time calls
    this once per frame, so keeping it one node (with a hand-derived
    backward) removes most of the graph overhead of the recurrence.
    """
    parents = (x, h, wz, uz, bz, wr, ur, br, wh, uh, bh)
    _check_dtypes("gru_cell", *parents)
    xd, hd = x.data, h.data
    z = _sigmoid_np((xd @ wz.data + hd @ uz.data) + bz.data)
    r = _sigmoid_np((xd @ wr.data + hd @ ur.data) + br.data)
    rh = r * hd
    c = np.tanh((xd @ wh.data + rh @ uh.data) + bh.data)
    data = (z * hd) + ((z * -1.0) + 1.0) * c

    def bw(g):
        daz = g * (hd - c) * z * (1.0 - z)
        dah = g * (1.0 - z) * (1.0 - c * c)
        drh = dah @ uh.data.T
        dar = drh * hd * r * (1.0 - r)

        dx = (daz @ wz.data.T + dar @ wr.data.T + dah @ wh.data.T
              if x.requires_grad else None)
        dh = (g * z + daz @ uz.data.T + dar @ ur.data.T + drh * r
              if h.requires_grad else None)

        d_in, d = xd.shape[-1], hd.shape[-1]
        x2 = xd.reshape(-1, d_in)
        h2 = hd.reshape(-1, d)
        rh2 = rh.reshape(-1, d)
        daz2 = daz.reshape(-1, d)
        dar2 = dar.reshape(-1, d)
        dah2 = dah.reshape(-1, d)

        def wgrad(a2, g2, p):
            return a2.T @ g2 if p.requires_grad else None

        def bgrad(g2, p):
            return g2.sum(axis=0) if p.requires_grad else None

        return (dx, dh,
                wgrad(x2, daz2, wz), wgrad(h2, daz2, uz), bgrad(daz2, bz),
                wgrad(x2, dar2, wr), wgrad(h2, dar2, ur), bgrad(dar2, br),
                wgrad(x2, dah2, wh), wgrad(rh2, dah2, uh), bgrad(dah2, bh))

    return _make(data, parents, bw, "gru_cell")


# -- parameter containers and the optimiser ------------------------------------


class Module:
    """Minimal parameter container with recursive, ordered name enumeration."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, (list, tuple)) and value and all(
            isinstance(v, Module) for v in value
        ):
            for i, v in enumerate(value):
                self._modules[f"{name}.{i}"] = v
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield (prefix + name, p)
        for name, mod in self._modules.items():
            yield from mod.named_parameters(prefix=f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_dict(self) -> dict:
        out = dict(self.named_parameters())
        if len(out) != sum(1 for _ in self.named_parameters()):
            raise ValueError("duplicate parameter names in module tree")
        return out

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype):
    """Normalized (Glorot) uniform init: U(+-sqrt(6 / (fan_in + fan_out)))."""
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients in place so their global norm is <= max_norm."""
    params = list(params)
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= np.asarray(scale, dtype=p.grad.dtype)
    return norm


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict, lr: float = 8e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.grad is None:
                raise ValueError(f"adam: parameter '{name}' has no gradient")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - b1) * (g - m)
            v += (1.0 - b2) * (g * g - v)
            p.data -= (self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {
            "t": self.t,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        self.t = int(state["t"])
        for k in self.params:
            self.m[k] = state["m"][k].copy()
            self.v[k] = state["v"][k].copy()
