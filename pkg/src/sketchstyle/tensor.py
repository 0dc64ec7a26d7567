"""Dense float32 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every op returns a new Tensor holding the
forward value plus a closure that routes the output gradient to the op's
inputs.  ``backward(loss)`` topologically sorts the graph and runs the
closures once per node.  Gradients accumulate (sum) into leaves until
``zero_grad``; intermediate nodes are reset on every backward call so
repeated backwards over the same graph still sum correctly into leaves.

Data layout is [N, C, H, W] for 4-D tensors throughout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, ShapeError

_SQRT_GUARD = 1e-12  # keeps d/dx sqrt(x) finite at x == 0

_GRAD_ENABLED = True

# When a track_kinks context is active, piecewise ops append their distance
# to the nearest non-differentiable point (a "kink": relu threshold, pooling
# argmax tie).  Finite-difference audits use this to reject probe points
# where central differences straddle a kink.
_KINK_MARGINS: list | None = None


class track_kinks:
    """Collects kink margins of piecewise-linear ops run inside the context."""

    def __enter__(self):
        global _KINK_MARGINS
        self._prev = _KINK_MARGINS
        _KINK_MARGINS = []
        return _KINK_MARGINS

    def __exit__(self, *exc):
        global _KINK_MARGINS
        _KINK_MARGINS = self._prev
        return False


def _note_kink(margin: float):
    if _KINK_MARGINS is not None:
        _KINK_MARGINS.append(float(margin))


class no_grad:
    """Context manager suppressing graph construction (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    """A node in the autodiff graph wrapping a float32 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __neg__(self):
        return mul(self, _wrap(-1.0))

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self):
        return tsum(self)

    def mean(self, axes=None, keepdims=False):
        return tmean(self, axes=axes, keepdims=keepdims)


class Parameter(Tensor):
    """A trainable leaf.  ``grad`` is allocated eagerly and zeroed by
    ``zero_grad`` so accumulation semantics are explicit."""

    __slots__ = ("trainable",)

    def __init__(self, data, trainable: bool = True):
        super().__init__(data, requires_grad=True)
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    @property
    def value(self):
        return self.data


def _wrap(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _node(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _accum(t: Tensor, g):
    """Accumulate ``g`` into ``t.grad``, reducing over broadcast axes."""
    if not t.requires_grad:
        return
    shape = t.data.shape
    if g.shape != shape:
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
    if t.grad is None:
        t.grad = np.zeros(shape, dtype=np.float32)
    t.grad += g.astype(np.float32, copy=False)


def backward(loss: Tensor):
    """Populate gradients of every reachable requires_grad leaf of ``loss``."""
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    # reset interior grads so a repeated backward over the same graph
    # re-derives them instead of double counting
    for node in topo:
        if node._parents:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / broadcasting ops
# ---------------------------------------------------------------------------

def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast")


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "div")
    inv = 1.0 / b.data

    def bwd(g):
        _accum(a, g * inv)
        _accum(b, -g * a.data * inv * inv)

    return _node(a.data * inv, (a, b), bwd)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    if _KINK_MARGINS is not None:
        _note_kink(np.abs(x.data).min())

    def bwd(g):
        _accum(x, g * mask)

    return _node(np.where(mask, x.data, 0.0), (x,), bwd)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    mask = x.data > 0
    if _KINK_MARGINS is not None:
        _note_kink(np.abs(x.data).min())

    def bwd(g):
        _accum(x, g * np.where(mask, 1.0, slope).astype(np.float32))

    return _node(np.where(mask, x.data, slope * x.data), (x,), bwd)


def sigmoid(x: Tensor) -> Tensor:
    # split by sign for stability at large |x|
    s = np.empty_like(x.data)
    pos = x.data >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    s[~pos] = e / (1.0 + e)

    def bwd(g):
        _accum(x, g * s * (1.0 - s))

    return _node(s, (x,), bwd)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def bwd(g):
        _accum(x, g * (1.0 - t * t))

    return _node(t, (x,), bwd)


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)

    def bwd(g):
        _accum(x, g * (0.5 / (r + _SQRT_GUARD)))

    return _node(r, (x,), bwd)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def bwd(g):
        _accum(x, g * e)

    return _node(e, (x,), bwd)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = x.data.shape

    def bwd(g):
        _accum(x, g.reshape(old))

    return _node(x.data.reshape(shape), (x,), bwd)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    if not tensors:
        raise ContractError("concat of an empty list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)

    def bwd(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        _accum(x, full)

    return _node(x.data[sl], (x,), bwd)


def tsum(x: Tensor) -> Tensor:
    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    return _node(x.data.sum(dtype=np.float32), (x,), bwd)


def tmean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    if axes is None:
        axes = tuple(range(x.data.ndim))
    elif isinstance(axes, int):
        axes = (axes,)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims, dtype=np.float32)

    def bwd(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes)
        _accum(x, np.broadcast_to(gg, x.data.shape) / count)

    return _node(out, (x,), bwd)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x: [N, in], w: [out, in], b: [out] -> [N, out]."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.data.shape[1] != w.data.shape[1]:
        raise ShapeError(
            f"linear: input features {x.data.shape} vs weight {w.data.shape}")
    if b.data.shape != (w.data.shape[0],):
        raise ShapeError(f"linear: bias shape {b.data.shape} != ({w.data.shape[0]},)")

    def bwd(g):
        _accum(x, g @ w.data)
        _accum(w, g.T @ x.data)
        _accum(b, g.sum(axis=0))

    return _node(x.data @ w.data.T + b.data, (x, w, b), bwd)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------

def conv2d(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d: input must be 4-D, got ndim {x.data.ndim}")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be 4-D, got ndim {weight.data.ndim}")
    n, c, h, w = x.data.shape
    cout, cin, kh, kw = weight.data.shape
    if cin != c:
        raise ShapeError(f"conv2d: input channels {c} != weight in-channels {cin}")
    if bias.data.shape != (cout,):
        raise ShapeError(f"conv2d: bias shape {bias.data.shape} != ({cout},)")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(
            f"conv2d: kernel {kh}x{kw} exceeds padded input {h + 2 * padding}x{w + 2 * padding}")
    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # cols: [N*Ho*Wo, C*kh*kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    w2 = weight.data.reshape(cout, c * kh * kw)
    out = (cols @ w2.T).reshape(n, ho, wo, cout).transpose(0, 3, 1, 2) + bias.data.reshape(1, cout, 1, 1)

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, cout)
        _accum(bias, g.sum(axis=(0, 2, 3)))
        _accum(weight, (g2.T @ cols).reshape(weight.data.shape))
        if x.requires_grad:
            dcols = (g2 @ w2).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros_like(xp)
            for ki in range(kh):
                for kj in range(kw):
                    dxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                        dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            if padding:
                dxp = dxp[:, :, padding:padding + h, padding:padding + w]
            _accum(x, dxp)

    return _node(out.astype(np.float32, copy=False), (x, weight, bias), bwd)


def _pool_prep(x: Tensor, kernel: int, stride: int, opname: str):
    if x.data.ndim != 4:
        raise ShapeError(f"{opname}: input must be 4-D, got ndim {x.data.ndim}")
    n, c, h, w = x.data.shape
    if kernel > h or kernel > w:
        raise ShapeError(f"{opname}: kernel {kernel} larger than input {h}x{w}")
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    return n, c, ho, wo, win


def max_pool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    n, c, ho, wo, win = _pool_prep(x, kernel, stride, "max_pool2d")
    flat = win.reshape(n, c, ho, wo, kernel * kernel)
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    if _KINK_MARGINS is not None:
        top2 = np.sort(flat, axis=-1)[..., -2:]
        _note_kink((top2[..., 1] - top2[..., 0]).min())

    def bwd(g):
        gx = np.zeros_like(x.data)
        ni, ci, ii, ji = np.indices((n, c, ho, wo))
        hi = ii * stride + idx // kernel
        wi = ji * stride + idx % kernel
        np.add.at(gx, (ni, ci, hi, wi), g)
        _accum(x, gx)

    return _node(out, (x,), bwd)


def avg_pool2d(x: Tensor, kernel: int, stride: int) -> Tensor:
    n, c, ho, wo, win = _pool_prep(x, kernel, stride, "avg_pool2d")
    # accumulate in float64 so constant windows pool to the exact constant
    out = win.mean(axis=(4, 5), dtype=np.float64).astype(np.float32)
    scale = 1.0 / (kernel * kernel)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gs = g * scale
        for ki in range(kernel):
            for kj in range(kernel):
                gx[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += gs
        _accum(x, gx)

    return _node(out, (x,), bwd)


def _adaptive_bounds(size: int, out: int):
    return [(size * i // out, size * (i + 1) // out) for i in range(out)]


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"adaptive_avg_pool2d: input must be 4-D, got ndim {x.data.ndim}")
    n, c, h, w = x.data.shape
    if out_h > h or out_w > w:
        raise ShapeError(f"adaptive_avg_pool2d: target {out_h}x{out_w} exceeds input {h}x{w}")
    hb = _adaptive_bounds(h, out_h)
    wb = _adaptive_bounds(w, out_w)
    out = np.empty((n, c, out_h, out_w), dtype=np.float32)
    for i, (h0, h1) in enumerate(hb):
        for j, (w0, w1) in enumerate(wb):
            out[:, :, i, j] = x.data[:, :, h0:h1, w0:w1].mean(axis=(2, 3), dtype=np.float64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        for i, (h0, h1) in enumerate(hb):
            for j, (w0, w1) in enumerate(wb):
                gx[:, :, h0:h1, w0:w1] += (g[:, :, i, j] / ((h1 - h0) * (w1 - w0)))[:, :, None, None]
        _accum(x, gx)

    return _node(out, (x,), bwd)


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"upsample_nearest: input must be 4-D, got ndim {x.data.ndim}")
    n, c, h, w = x.data.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def bwd(g):
        _accum(x, g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)))

    return _node(out, (x,), bwd)


def downsample_avg(x: Tensor, factor: int) -> Tensor:
    return avg_pool2d(x, factor, factor)


# ---------------------------------------------------------------------------
# statistics and losses
# ---------------------------------------------------------------------------

def instance_stats(x: Tensor):
    """Per-(sample, channel) spatial mean and population std of a 4-D tensor.

    Returns (mu, sigma), both [N, C, 1, 1].  sigma carries no epsilon;
    normalization call sites add their own.
    """
    if x.data.ndim != 4:
        raise ShapeError(f"instance_stats: input must be 4-D, got ndim {x.data.ndim}")
    mu = tmean(x, axes=(2, 3), keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axes=(2, 3), keepdims=True)
    sigma = sqrt(var)
    return mu, sigma


def mse(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mse: shapes {a.data.shape} != {b.data.shape}")
    d = sub(a, b)
    return tmean(mul(d, d))


def bce_with_logits(logit: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy on logits, stable for |logit| up to ~80.

    Gradient flows to the logits only; targets are treated as constants.
    """
    logit, target = _wrap(logit), _wrap(target)
    try:
        np.broadcast_shapes(logit.data.shape, target.data.shape)
    except ValueError:
        raise ShapeError(
            f"bce_with_logits: shapes {logit.data.shape} and {target.data.shape} do not broadcast")
    x = logit.data
    t = np.broadcast_to(target.data, x.shape)
    val = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def bwd(g):
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        e = np.exp(x[~pos])
        s[~pos] = e / (1.0 + e)
        _accum(logit, g * (s - t) / n)

    return _node(val.mean(dtype=np.float32), (logit,), bwd)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of [N, K] logits against integer class labels."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeError(
            f"softmax_cross_entropy: logits {x.shape} vs labels {labels.shape}")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    nll = lse - shifted[np.arange(len(labels)), labels]
    n = len(labels)

    def bwd(g):
        p = np.exp(shifted)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), labels] -= 1.0
        _accum(logits, g * p / n)

    return _node(np.float32(nll.mean()), (logits,), bwd)
