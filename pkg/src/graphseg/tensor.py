"""Dense tensors with reverse-mode automatic differentiation.

Every value in the library (feature maps, adjacencies, losses, parameters) is a
``Tensor`` wrapping a numpy array. Operations record an ``OpNode`` on their
output; ``Tensor.backward()`` walks the recorded graph in reverse topological
order and accumulates gradients into every reachable tensor that requires them.

Float32 is the working precision; gradient-check suites switch to float64 via
``set_default_dtype`` / ``default_dtype``.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import DimensionError, NumericError

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True

_FLOAT_DTYPES = (np.float32, np.float64)


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors (float32 or float64)."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in _FLOAT_DTYPES:
        raise ValueError(f"default dtype must be float32 or float64, got {dtype}")
    _DEFAULT_DTYPE = dtype


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily switch the default tensor dtype (used by gradient checks)."""
    prev = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


class no_grad(contextlib.ContextDecorator):
    """Disable graph recording inside the context (inference paths)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class OpNode:
    """One recorded operation: kind tag, input tensors, and its backward rule.

    ``apply(grad_out)`` returns one gradient array (or None) per input; saved
    intermediates live in the closure.
    """

    __slots__ = ("kind", "inputs", "apply")

    def __init__(self, kind, inputs, apply):
        self.kind = kind
        self.inputs = tuple(inputs)
        self.apply = apply


def _coerce(data, dtype):
    if dtype is not None:
        return np.asarray(data, dtype=dtype)
    if isinstance(data, np.ndarray) and data.dtype.type in _FLOAT_DTYPES:
        return data
    return np.asarray(data, dtype=_DEFAULT_DTYPE)


class Tensor:
    """N-dimensional array with an optional gradient slot.

    ``data`` is a numpy array, ``grad`` is filled (same shape) by a backward
    pass when ``requires_grad`` is set. Tensors are immutable after creation
    except for gradient accumulation and explicit in-place parameter updates
    performed by the optimizer between steps.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _coerce(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad) and _GRAD_ENABLED
        self.node = None

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _from_op(data, kind, inputs, apply):
        out = Tensor(data, dtype=data.dtype)
        if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
            out.requires_grad = True
            out.node = OpNode(kind, inputs, apply)
        return out

    @staticmethod
    def zeros(shape, requires_grad=False, dtype=None):
        return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad)

    @staticmethod
    def ones(shape, requires_grad=False, dtype=None):
        return Tensor(np.ones(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad)

    # -- basic introspection --------------------------------------------------

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

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- backward pass --------------------------------------------------------

    def backward(self) -> None:
        """Accumulate gradients of this scalar into all reachable tensors."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward() requires a scalar output, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                topo.append(t)
                continue
            if id(t) in visited:
                continue
            visited.add(id(t))
            stack.append((t, True))
            if t.node is not None:
                for parent in t.node.inputs:
                    if id(parent) not in visited:
                        stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for t in reversed(topo):
            if t.node is None or t.grad is None:
                continue
            grads = t.node.apply(t.grad)
            for parent, g in zip(t.node.inputs, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    # -- elementwise arithmetic ----------------------------------------------

    def _ensure(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._ensure(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._from_op(a.data + b.data, "add", (a, b), backward)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._ensure(other)
        a, b = self, other

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._from_op(a.data - b.data, "sub", (a, b), backward)

    def __rsub__(self, other):
        return self._ensure(other).__sub__(self)

    def __mul__(self, other):
        other = self._ensure(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            )

        return Tensor._from_op(a.data * b.data, "mul", (a, b), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._ensure(other)
        a, b = self, other

        def backward(g):
            return (
                _unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
            )

        return Tensor._from_op(a.data / b.data, "div", (a, b), backward)

    def __rtruediv__(self, other):
        return self._ensure(other).__truediv__(self)

    def __neg__(self):
        a = self
        return Tensor._from_op(-a.data, "neg", (a,), lambda g: (-g,))

    def __pow__(self, p):
        if not np.isscalar(p):
            raise TypeError("only scalar exponents are supported")
        a = self

        def backward(g):
            return (g * p * a.data ** (p - 1),)

        return Tensor._from_op(a.data**p, "pow", (a,), backward)

    # -- elementwise functions -------------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0
        return Tensor._from_op(
            np.where(mask, a.data, 0), "relu", (a,), lambda g: (g * mask,)
        )

    def exp(self):
        a = self
        out_data = np.exp(a.data)
        return Tensor._from_op(out_data, "exp", (a,), lambda g: (g * out_data,))

    def log(self):
        a = self
        if np.any(a.data <= 0):
            raise NumericError(
                "log of non-positive value; add a positive epsilon before taking log"
            )
        return Tensor._from_op(np.log(a.data), "log", (a,), lambda g: (g / a.data,))

    def sqrt(self):
        return self**0.5

    def clamp(self, min_value=None, max_value=None):
        """Clip to [min_value, max_value]; gradient flows only inside the range."""
        a = self
        lo = -np.inf if min_value is None else min_value
        hi = np.inf if max_value is None else max_value
        mask = (a.data >= lo) & (a.data <= hi)
        return Tensor._from_op(
            np.clip(a.data, lo, hi), "clamp", (a,), lambda g: (g * mask,)
        )

    def softmax(self, axis: int = -1):
        """Numerically stable softmax along ``axis`` (rows by default)."""
        a = self
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        p = e / e.sum(axis=axis, keepdims=True)

        def backward(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            return (p * (g - dot),)

        return Tensor._from_op(p, "softmax", (a,), backward)

    # -- reductions -------------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            return (_spread_reduction(g, a.shape, axis, keepdims),)

        return Tensor._from_op(np.asarray(out_data), "sum", (a,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        out_data = a.data.mean(axis=axis, keepdims=keepdims)
        count = a.data.size // max(np.asarray(out_data).size, 1)

        def backward(g):
            return (_spread_reduction(g, a.shape, axis, keepdims) / count,)

        return Tensor._from_op(np.asarray(out_data), "mean", (a,), backward)

    # -- shape manipulation ------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        in_shape = a.data.shape
        return Tensor._from_op(
            a.data.reshape(shape), "reshape", (a,), lambda g: (g.reshape(in_shape),)
        )

    def flatten(self):
        return self.reshape(self.data.size)

    def permute(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(
            a.data.transpose(axes), "permute", (a,), lambda g: (g.transpose(inverse),)
        )

    def transpose(self):
        """Swap the last two axes (matrix transpose, batched)."""
        axes = tuple(range(self.data.ndim - 2)) + (self.data.ndim - 1, self.data.ndim - 2)
        return self.permute(axes)

    def diagonal(self):
        """Extract the main diagonal of the last two (square) axes."""
        a = self
        n, m = a.data.shape[-2:]
        if n != m:
            raise DimensionError(f"diagonal requires square matrix, got ({n}, {m})")

        def backward(g):
            out = np.zeros_like(a.data)
            idx = np.arange(n)
            out[..., idx, idx] = g
            return (out,)

        return Tensor._from_op(
            np.ascontiguousarray(np.diagonal(a.data, axis1=-2, axis2=-1)),
            "diagonal",
            (a,),
            backward,
        )

    def diag_embed(self):
        """Embed the last axis as the diagonal of a new square matrix."""
        a = self
        n = a.data.shape[-1]
        out_data = np.zeros(a.data.shape + (n,), dtype=a.data.dtype)
        idx = np.arange(n)
        out_data[..., idx, idx] = a.data

        def backward(g):
            return (np.ascontiguousarray(g[..., idx, idx]),)

        return Tensor._from_op(out_data, "diag_embed", (a,), backward)

    # -- matrix product ------------------------------------------------------------

    def __matmul__(self, other):
        other = self._ensure(other)
        a, b = self, other
        if a.data.ndim < 2 or b.data.ndim < 2:
            raise DimensionError(
                f"matmul requires >=2-D operands, got {a.shape} @ {b.shape}"
            )
        if a.data.shape[-1] != b.data.shape[-2]:
            raise DimensionError(
                f"matmul inner dimensions disagree: {a.shape} @ {b.shape}"
            )

        def backward(g):
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
            return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

        return Tensor._from_op(a.data @ b.data, "matmul", (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a @ b


# -- broadcasting helpers -------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _spread_reduction(grad, in_shape, axis, keepdims):
    """Broadcast a reduction gradient back over the reduced axes."""
    if axis is None:
        axes = tuple(range(len(in_shape)))
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        axes = tuple(a % len(in_shape) for a in axes)
    if not keepdims:
        shape = tuple(1 if i in axes else s for i, s in enumerate(in_shape))
        grad = np.asarray(grad).reshape(shape)
    return np.broadcast_to(grad, in_shape).copy()


# -- spatial operations ------------------------------------------------------------


def _pad_indices(extent: int, pad: int, mode: str) -> np.ndarray:
    return np.pad(np.arange(extent), pad, mode=mode)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    pad_mode: str = "zeros",
) -> Tensor:
    """2-D cross-correlation with bias over (B, C, H, W) or (C, H, W) input.

    ``pad_mode`` is one of ``zeros`` / ``edge`` / ``reflect``; kernel must be
    square with odd extent.
    """
    squeeze = x.data.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d expects 3-D or 4-D input, got shape {x.shape}")
    wd = weight.data
    if wd.ndim != 4 or wd.shape[-1] != wd.shape[-2]:
        raise DimensionError(f"conv2d kernel must be (C_out, C_in, k, k), got {weight.shape}")
    k = wd.shape[-1]
    if k % 2 == 0:
        raise DimensionError(f"conv2d kernel extent must be odd, got {k}")
    if wd.shape[1] != xd.shape[1]:
        raise DimensionError(
            f"conv2d channel mismatch: input {xd.shape[1]} vs kernel {wd.shape[1]}"
        )
    batch, c_in, h, w = xd.shape
    c_out = wd.shape[0]
    out_h = (h + 2 * padding - k) // stride + 1
    out_w = (w + 2 * padding - k) // stride + 1
    if out_h < 1 or out_w < 1:
        raise DimensionError(
            f"conv2d output extent would be non-positive for input {x.shape}, "
            f"kernel {k}, stride {stride}, padding {padding}"
        )

    if padding > 0:
        if pad_mode == "zeros":
            xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
            row_idx = col_idx = None
        elif pad_mode in ("edge", "reflect"):
            row_idx = _pad_indices(h, padding, pad_mode)
            col_idx = _pad_indices(w, padding, pad_mode)
            xp = xd[:, :, row_idx][:, :, :, col_idx]
        else:
            raise ValueError(f"unknown pad_mode {pad_mode!r}")
    else:
        xp = xd
        row_idx = col_idx = None

    def im2col(arr):
        win = np.lib.stride_tricks.sliding_window_view(arr, (k, k), axis=(2, 3))
        win = win[:, :, ::stride, ::stride]  # (B, C, out_h, out_w, k, k)
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, c_in * k * k)
        return cols

    cols = im2col(xp)
    w2 = wd.reshape(c_out, -1)
    out = cols @ w2.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(batch, out_h, out_w, c_out).transpose(0, 3, 1, 2)
    if squeeze:
        out = out[0]

    inputs = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gd = g[None] if squeeze else g
        g2 = gd.transpose(0, 2, 3, 1).reshape(batch * out_h * out_w, c_out)
        grad_w = grad_b = grad_x = None
        if weight.requires_grad:
            grad_w = (g2.T @ im2col(xp)).reshape(wd.shape)
        if bias is not None and bias.requires_grad:
            grad_b = g2.sum(axis=0)
        if x.requires_grad:
            gcols = (g2 @ w2).reshape(batch, out_h, out_w, c_in, k, k)
            gp = np.zeros_like(xp)
            for ki in range(k):
                for kj in range(k):
                    gp[:, :, ki : ki + stride * out_h : stride, kj : kj + stride * out_w : stride] += (
                        gcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
                    )
            if padding > 0:
                if pad_mode == "zeros":
                    grad_x = gp[:, :, padding:-padding, padding:-padding]
                else:
                    # fold replicated/reflected border gradients back row- then column-wise
                    acc_r = np.zeros((h, batch, c_in, w + 2 * padding), dtype=gp.dtype)
                    np.add.at(acc_r, row_idx, gp.transpose(2, 0, 1, 3))
                    gq = acc_r.transpose(1, 2, 0, 3)
                    acc_c = np.zeros((w, batch, c_in, h), dtype=gp.dtype)
                    np.add.at(acc_c, col_idx, gq.transpose(3, 0, 1, 2))
                    grad_x = acc_c.transpose(1, 2, 3, 0)
            else:
                grad_x = gp
            if squeeze:
                grad_x = grad_x[0]
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(grad_b)
        return tuple(grads)

    return Tensor._from_op(out, "conv2d", inputs, backward)


def _pool_bounds(extent: int, out: int):
    starts = (np.arange(out) * extent) // out
    ends = -(-(np.arange(1, out + 1) * extent) // out)  # ceil division
    return starts, ends


def adaptive_avg_pool2d(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Mean-pool (…, H, W) onto an (out_h, out_w) grid of contiguous windows."""
    h, w = x.data.shape[-2:]
    if out_h > h or out_w > w or out_h < 1 or out_w < 1:
        raise DimensionError(
            f"adaptive pool output ({out_h}, {out_w}) must be within input ({h}, {w})"
        )
    if out_h == h and out_w == w:
        # identity windows; keep the graph shallow
        return x.reshape(x.shape)
    rs, re = _pool_bounds(h, out_h)
    cs, ce = _pool_bounds(w, out_w)
    a = x
    out_shape = x.data.shape[:-2] + (out_h, out_w)
    out = np.empty(out_shape, dtype=x.data.dtype)
    for i in range(out_h):
        for j in range(out_w):
            out[..., i, j] = x.data[..., rs[i] : re[i], cs[j] : ce[j]].mean(axis=(-2, -1))

    def backward(g):
        gx = np.zeros_like(a.data)
        for i in range(out_h):
            for j in range(out_w):
                count = (re[i] - rs[i]) * (ce[j] - cs[j])
                gx[..., rs[i] : re[i], cs[j] : ce[j]] += g[..., i, j, None, None] / count
        return (gx,)

    return Tensor._from_op(out, "adaptive_avg_pool2d", (a,), backward)


def _interp_matrix(n_in: int, n_out: int, dtype) -> np.ndarray:
    """Dense (n_out, n_in) bilinear interpolation matrix, corner-aligned."""
    m = np.zeros((n_out, n_in), dtype=dtype)
    if n_out == 1:
        m[0, 0] = 1.0
        return m
    scale = (n_in - 1) / (n_out - 1)
    src = np.arange(n_out, dtype=np.float64) * scale
    i0 = np.floor(src).astype(int)
    i0 = np.minimum(i0, n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), (1.0 - frac).astype(dtype))
    np.add.at(m, (rows, i1), frac.astype(dtype))
    return m


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear upsampling of (…, H, W) to (out_h, out_w); corners map exactly."""
    h, w = x.data.shape[-2:]
    if out_h < h or out_w < w:
        raise DimensionError(
            f"bilinear upsample target ({out_h}, {out_w}) smaller than input ({h}, {w})"
        )
    wy = _interp_matrix(h, out_h, x.data.dtype)
    wx = _interp_matrix(w, out_w, x.data.dtype)
    a = x

    def apply(arr, my, mx):
        # (…, H, W) -> (…, out_h, out_w) as my @ arr @ mx.T, batched over leads
        tmp = np.tensordot(arr, my.T, axes=([arr.ndim - 2], [0]))  # (…, W, out_h)
        tmp = np.tensordot(tmp, mx.T, axes=([arr.ndim - 2], [0]))  # (…, out_h, out_w)
        return tmp

    out = apply(x.data, wy, wx)

    def backward(g):
        return (apply(g, wy.T, wx.T),)

    return Tensor._from_op(out, "upsample_bilinear", (a,), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    channel_axis: int = -1,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize per channel over all remaining axes.

    Train mode uses (biased) batch statistics and updates the running arrays
    in place; eval mode normalizes with the running statistics.
    """
    ndim = x.data.ndim
    ch = channel_axis % ndim
    axes = tuple(i for i in range(ndim) if i != ch)
    bshape = tuple(x.data.shape[ch] if i == ch else 1 for i in range(ndim))
    g = gamma.reshape(bshape)
    b = beta.reshape(bshape)
    if training:
        mu = x.mean(axis=axes, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=axes, keepdims=True)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.data.reshape(-1)
        xhat = (x - mu) / ((var + eps) ** 0.5)
    else:
        mu = Tensor(running_mean.reshape(bshape).astype(x.data.dtype))
        var = Tensor(running_var.reshape(bshape).astype(x.data.dtype))
        xhat = (x - mu) / ((var + eps) ** 0.5)
    return g * xhat + b
