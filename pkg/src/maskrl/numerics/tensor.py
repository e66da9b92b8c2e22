"""Reverse-mode automatic differentiation over dense numpy arrays.

Every differentiable operation computes its result eagerly and, when a
Tape is active, appends a backward rule to it. Calling ``backward`` on a
scalar loss walks the tape in reverse, accumulating gradients additively
into each tensor's ``grad`` array.

Float32 is the intended training precision; passing float64 arrays
switches the whole graph to 64-bit (used by the gradient-check tests).
"""

from __future__ import annotations

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Raised when operand shapes do not satisfy an operation's contract."""


class NumericError(RuntimeError):
    """Raised when a non-finite value is produced and checks are enabled."""


_DEBUG_CHECKS = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle per-op finiteness checks (slows training, on for tests)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


def debug_checks_enabled() -> bool:
    return _DEBUG_CHECKS


_TAPE_STACK: list["Tape"] = []
_NO_GRAD_DEPTH = 0


class no_grad:
    """Context manager suppressing tape recording (target-network paths)."""

    def __enter__(self):
        global _NO_GRAD_DEPTH
        _NO_GRAD_DEPTH += 1
        return self

    def __exit__(self, *exc):
        global _NO_GRAD_DEPTH
        _NO_GRAD_DEPTH -= 1
        return False


def _grad_enabled() -> bool:
    return _NO_GRAD_DEPTH == 0 and bool(_TAPE_STACK)


class Tensor:
    """A dense array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None and arr.dtype != dtype:
            arr = arr.astype(dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return add_scalar(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return add_scalar(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


class Tape:
    """Ordered record of operations for one forward pass.

    Operations append themselves in execution order, so reverse iteration
    is already a valid topological order and visits each node once.
    """

    def __init__(self):
        self.entries: list[tuple[int, str, Tensor, object]] = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, name: str, out: Tensor, backward_fn) -> None:
        self.entries.append((len(self.entries), name, out, backward_fn))

    def backward(self, loss: Tensor, free: bool = True) -> None:
        backward(loss, self, free=free)


def backward(loss: Tensor, tape: Tape, free: bool = True) -> None:
    """Populate ``grad`` for every tensor the scalar ``loss`` depends on.

    ``free=True`` drops the tape entries afterwards so cached forward
    buffers (im2col columns etc.) can be reclaimed.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward requires a scalar loss, got shape {loss.shape}")
    _DONATED.clear()
    loss.grad = np.ones((), dtype=loss.data.dtype) if loss.data.ndim == 0 else np.ones_like(loss.data)
    for op_id, name, out, fn in reversed(tape.entries):
        if out.grad is None:
            continue
        fn(out.grad)
        if _DEBUG_CHECKS:
            _check_entry_grads(op_id, name, out, fn)
        if out is not loss:
            out.grad = None
    if free:
        tape.entries.clear()


def _check_entry_grads(op_id, name, out, fn):
    # inputs are reachable through the closure; checking the output's own
    # grad before it is dropped catches the producing op directly
    inputs = getattr(fn, "_check_tensors", ())
    for t in inputs:
        if t.grad is not None and not np.all(np.isfinite(t.grad)):
            raise NumericError(f"non-finite gradient produced by op #{op_id} '{name}'")


def _record(name: str, out: Tensor, backward_fn, check_tensors=()) -> None:
    if _DEBUG_CHECKS and not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite output from op '{name}'")
    if out.requires_grad and _grad_enabled():
        backward_fn._check_tensors = check_tensors
        _TAPE_STACK[-1].record(name, out, backward_fn)


# Arrays already adopted as some tensor's grad buffer this backward pass.
# A backward rule may hand the same array to several inputs (add does), and
# later rules accumulate in place, so each buffer may be adopted only once.
_DONATED: set[int] = set()


def _accum(t: Tensor, g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        if (isinstance(g, np.ndarray) and g.shape == t.data.shape
                and g.flags.writeable and g.base is None and id(g) not in _DONATED):
            t.grad = g
        else:
            t.grad = np.array(np.broadcast_to(g, t.data.shape))
        _DONATED.add(id(t.grad))
    else:
        t.grad += g


def _out_for(name, data, *inputs) -> Tensor:
    req = any(t.requires_grad for t in inputs) and _grad_enabled()
    return Tensor(data, requires_grad=req)


def _same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise DimensionError(f"mixed dtypes {dt} vs {t.data.dtype}")
    return dt


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shapes {a.shape} vs {b.shape}")
    out = _out_for("add", a.data + b.data, a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    _record("add", out, bwd, (a, b))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes {a.shape} vs {b.shape}")
    out = _out_for("sub", a.data - b.data, a, b)

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    _record("sub", out, bwd, (a, b))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes {a.shape} vs {b.shape}")
    out = _out_for("mul", a.data * b.data, a, b)

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _record("mul", out, bwd, (a, b))
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = _out_for("scale", a.data * a.data.dtype.type(s), a)

    def bwd(g):
        _accum(a, g * a.data.dtype.type(s))

    _record("scale", out, bwd, (a,))
    return out


def add_scalar(a: Tensor, s: float) -> Tensor:
    out = _out_for("add_scalar", a.data + a.data.dtype.type(s), a)

    def bwd(g):
        _accum(a, g)

    _record("add_scalar", out, bwd, (a,))
    return out


def affine(a: Tensor, m: float, c: float) -> Tensor:
    """m*a + c, fused."""
    dt = a.data.dtype.type
    out = _out_for("affine", a.data * dt(m) + dt(c), a)

    def bwd(g):
        _accum(a, g * dt(m))

    _record("affine", out, bwd, (a,))
    return out


def relu(x: Tensor) -> Tensor:
    out = _out_for("relu", np.maximum(x.data, 0), x)

    def bwd(g):
        _accum(x, g * (x.data > 0))

    _record("relu", out, bwd, (x,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = 1.0 / (1.0 + np.exp(-x.data))
    out = _out_for("sigmoid", data.astype(x.data.dtype, copy=False), x)

    def bwd(g):
        _accum(x, g * out.data * (1.0 - out.data))

    _record("sigmoid", out, bwd, (x,))
    return out


def tanh(x: Tensor) -> Tensor:
    out = _out_for("tanh", np.tanh(x.data), x)

    def bwd(g):
        _accum(x, g * (1.0 - out.data * out.data))

    _record("tanh", out, bwd, (x,))
    return out


def exp(x: Tensor) -> Tensor:
    out = _out_for("exp", np.exp(x.data), x)

    def bwd(g):
        _accum(x, g * out.data)

    _record("exp", out, bwd, (x,))
    return out


def elementwise(name: str, x: Tensor) -> Tensor:
    """Dispatch an activation by name: relu, sigmoid or tanh."""
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[name]
    except KeyError:
        raise ValueError(f"unknown elementwise op '{name}'") from None
    return fn(x)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"minimum shapes {a.shape} vs {b.shape}")
    out = _out_for("minimum", np.minimum(a.data, b.data), a, b)

    def bwd(g):
        take_a = a.data <= b.data
        _accum(a, g * take_a)
        _accum(b, g * ~take_a)

    _record("minimum", out, bwd, (a, b))
    return out


def clamp_passthrough(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values but let gradients pass unchanged (straight-through)."""
    out = _out_for("clamp_passthrough", np.clip(x.data, lo, hi), x)

    def bwd(g):
        _accum(x, g)

    _record("clamp_passthrough", out, bwd, (x,))
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _out_for("sum_all", x.data.sum(), x)

    def bwd(g):
        _accum(x, np.broadcast_to(g, x.data.shape))

    _record("sum_all", out, bwd, (x,))
    return out


def mean_all(x: Tensor) -> Tensor:
    out = _out_for("mean_all", x.data.mean(), x)
    inv_n = 1.0 / x.data.size

    def bwd(g):
        _accum(x, np.broadcast_to(g * x.data.dtype.type(inv_n), x.data.shape))

    _record("mean_all", out, bwd, (x,))
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    req = any(t.requires_grad for t in tensors) and _grad_enabled()
    out = Tensor(out_data, requires_grad=req)
    sizes = [d.shape[axis] for d in datas]

    def bwd(g):
        start = 0
        for t, n in zip(tensors, sizes):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, start + n)
            _accum(t, g[tuple(sl)])
            start += n

    _record("concat", out, bwd, tuple(tensors))
    return out


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = _out_for("narrow", np.ascontiguousarray(x.data[sl]), x)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[sl] = g
        _accum(x, gx)

    _record("narrow", out, bwd, (x,))
    return out


def reshape(x: Tensor, shape) -> Tensor:
    out = _out_for("reshape", x.data.reshape(shape), x)

    def bwd(g):
        _accum(x, g.reshape(x.data.shape))

    _record("reshape", out, bwd, (x,))
    return out


# ---------------------------------------------------------------------------
# dense layers
# ---------------------------------------------------------------------------

def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """w @ x + b for a single vector, or row-wise for a (B, N) batch."""
    _same_dtype(x, w, b)
    squeeze = x.data.ndim == 1
    xd = x.data[None, :] if squeeze else x.data
    if xd.ndim != 2 or w.data.ndim != 2 or xd.shape[1] != w.data.shape[1] or b.data.shape != (w.data.shape[0],):
        raise DimensionError(
            f"linear shapes: input {x.shape}, weight {w.shape}, bias {b.shape}")
    out_data = xd @ w.data.T + b.data
    out = _out_for("linear", out_data[0] if squeeze else out_data, x, w, b)

    def bwd(g):
        g2 = g[None, :] if squeeze else g
        _accum(x, (g2 @ w.data)[0] if squeeze else g2 @ w.data)
        _accum(w, g2.T @ xd)
        _accum(b, g2.sum(axis=0))

    _record("linear", out, bwd, (x, w, b))
    return out


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    _same_dtype(x, gamma, beta)
    n = x.data.shape[-1]
    if gamma.data.shape != (n,) or beta.data.shape != (n,):
        raise DimensionError(f"layer_norm params {gamma.shape}/{beta.shape} for width {n}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + x.data.dtype.type(eps))
    xhat = xc * inv_std
    out = _out_for("layer_norm", xhat * gamma.data + beta.data, x, gamma, beta)

    def bwd(g):
        axes = tuple(range(g.ndim - 1))
        _accum(beta, g.sum(axis=axes))
        _accum(gamma, (g * xhat).sum(axis=axes))
        gh = g * gamma.data
        m1 = gh.mean(axis=-1, keepdims=True)
        m2 = (gh * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv_std * (gh - m1 - xhat * m2))

    _record("layer_norm", out, bwd, (x, gamma, beta))
    return out


# ---------------------------------------------------------------------------
# convolutions and pooling (NCHW in, NCHW out; NHWC + im2col internally)
# ---------------------------------------------------------------------------

def _ensure4d(x: Tensor):
    if x.data.ndim == 3:
        return x.data[None], True
    if x.data.ndim == 4:
        return x.data, False
    raise DimensionError(f"expected 3- or 4-D image tensor, got shape {x.shape}")


def _to_nhwc(arr):
    B, C, H, W = arr.shape
    out = np.empty((B, H, W, C), arr.dtype)
    kernels.nchw_to_nhwc(np.ascontiguousarray(arr), out)
    return out


def _to_nchw(arr):
    B, H, W, C = arr.shape
    out = np.empty((B, C, H, W), arr.dtype)
    kernels.nhwc_to_nchw(np.ascontiguousarray(arr), out)
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    x: (C_in, H, W) or (B, C_in, H, W); w: (C_out, C_in, k, k); b: (C_out,).
    Output spatial size is floor((H - k) / stride) + 1.
    """
    _same_dtype(x, w, b)
    xd, squeeze = _ensure4d(x)
    B, C, H, W = xd.shape
    Co, Ci, k, k2 = w.data.shape
    if k != k2:
        raise DimensionError(f"square kernels only, got {w.shape}")
    if Ci != C:
        raise DimensionError(f"conv2d channels: input {C}, weight expects {Ci}")
    if k > H or k > W:
        raise DimensionError(f"kernel {k} exceeds input {H}x{W}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if b.data.shape != (Co,):
        raise DimensionError(f"bias shape {b.shape} for {Co} output channels")
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    xh = _to_nhwc(xd)
    col = np.empty((B * Ho * Wo, k * k * C), xd.dtype)
    kernels.im2col(xh, k, stride, col)
    wm = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0).reshape(k * k * C, Co))
    out_mat = col @ wm
    out_mat += b.data
    out_nchw = _to_nchw(out_mat.reshape(B, Ho, Wo, Co))
    out = _out_for("conv2d", out_nchw[0] if squeeze else out_nchw, x, w, b)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gmat = _to_nhwc(g4).reshape(B * Ho * Wo, Co)
        _accum(b, gmat.sum(axis=0))
        gwm = col.T @ gmat
        _accum(w, gwm.reshape(k, k, C, Co).transpose(3, 2, 0, 1))
        if x.requires_grad:
            gcol = gmat @ wm.T
            gxh = np.zeros((B, H, W, C), xd.dtype)
            kernels.col2im_add(gcol, k, stride, gxh)
            gx = _to_nchw(gxh)
            _accum(x, gx[0] if squeeze else gx)

    _record("conv2d", out, bwd, (x, w, b))
    return out


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of conv2d (fractionally-strided convolution).

    x: (C_in, H, W) or (B, C_in, H, W); w: (C_in, C_out, k, k); b: (C_out,).
    Output spatial size is (H - 1) * stride + k + output_padding; the
    trailing padded rows/columns receive only the bias.
    """
    _same_dtype(x, w, b)
    xd, squeeze = _ensure4d(x)
    B, C, H, W = xd.shape
    Ci, Co, k, k2 = w.data.shape
    if k != k2:
        raise DimensionError(f"square kernels only, got {w.shape}")
    if Ci != C:
        raise DimensionError(f"conv_transpose2d channels: input {C}, weight expects {Ci}")
    if stride < 1:
        raise DimensionError(f"stride must be >= 1, got {stride}")
    if not 0 <= output_padding < stride:
        raise DimensionError(f"output_padding {output_padding} must be in [0, stride)")
    if b.data.shape != (Co,):
        raise DimensionError(f"bias shape {b.shape} for {Co} output channels")
    Ho = (H - 1) * stride + k + output_padding
    Wo = (W - 1) * stride + k + output_padding
    xh = _to_nhwc(xd)
    xmat = xh.reshape(B * H * W, C)
    wm = np.ascontiguousarray(w.data.transpose(2, 3, 1, 0).reshape(k * k * Co, C))
    col = xmat @ wm.T
    outh = np.zeros((B, Ho, Wo, Co), xd.dtype)
    kernels.col2im_add(col, k, stride, outh)
    outh += b.data
    out_nchw = _to_nchw(outh)
    out = _out_for("conv_transpose2d", out_nchw[0] if squeeze else out_nchw, x, w, b)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gh = _to_nhwc(g4)
        _accum(b, gh.sum(axis=(0, 1, 2)))
        gcol = np.empty((B * H * W, k * k * Co), xd.dtype)
        kernels.im2col(gh, k, stride, gcol)
        _accum(w, (gcol.T @ xmat).reshape(k, k, Co, C).transpose(3, 2, 0, 1))
        if x.requires_grad:
            gxh = (gcol @ wm).reshape(B, H, W, C)
            gx = _to_nchw(gxh)
            _accum(x, gx[0] if squeeze else gx)

    _record("conv_transpose2d", out, bwd, (x, w, b))
    return out


def avg_pool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Mean over k*k windows; trailing rows not covered by a window are dropped."""
    xd, squeeze = _ensure4d(x)
    B, C, H, W = xd.shape
    if k > H or k > W:
        raise DimensionError(f"pool kernel {k} exceeds input {H}x{W}")
    Ho = (H - k) // stride + 1
    Wo = (W - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(xd, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out_data = win.mean(axis=(-2, -1)).astype(xd.dtype, copy=False)
    out = _out_for("avg_pool2d", out_data[0] if squeeze else out_data, x)
    inv = 1.0 / (k * k)

    def bwd(g):
        g4 = g[None] if squeeze else g
        gx = np.zeros_like(xd)
        gs = g4 * xd.dtype.type(inv)
        for di in range(k):
            for dj in range(k):
                gx[:, :, di:di + Ho * stride:stride, dj:dj + Wo * stride:stride] += gs
        _accum(x, gx[0] if squeeze else gx)

    _record("avg_pool2d", out, bwd, (x,))
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_loss(pred: Tensor, target, eps: float = 1e-6) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to [eps, 1-eps]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, pred.data.dtype)
    if t.shape != pred.data.shape:
        raise DimensionError(f"bce shapes {pred.shape} vs {t.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    loss_val = -(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean()
    out = _out_for("bce_loss", np.asarray(loss_val, pred.data.dtype), pred)
    inv_n = 1.0 / pred.data.size

    def bwd(g):
        _accum(pred, g * ((p - t) / (p * (1.0 - p))) * pred.data.dtype.type(inv_n))

    _record("bce_loss", out, bwd, (pred,))
    return out


def mse_loss(pred: Tensor, target) -> Tensor:
    """Mean squared error against a constant (or detached) target."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target, pred.data.dtype)
    if t.shape != pred.data.shape:
        raise DimensionError(f"mse shapes {pred.shape} vs {t.shape}")
    diff = pred.data - t
    out = _out_for("mse_loss", np.asarray((diff * diff).mean(), pred.data.dtype), pred)
    scale_ = 2.0 / pred.data.size

    def bwd(g):
        _accum(pred, g * diff * pred.data.dtype.type(scale_))

    _record("mse_loss", out, bwd, (pred,))
    return out
