"""Minimal reverse-mode autodiff over numpy arrays.

Everything the training stack differentiates goes through here. A Tensor is a
plain numpy array plus a gradient slot; a GradTape records executed ops so the
backward pass can replay them in exact reverse execution order. There is no
broadcasting cleverness and no graph optimization: shapes are what the
segmentation pipeline needs, rasters are channel-major (C, H, W).

Gradients accumulate additively. Use one tape per training step; forward-only
code (evaluation, pseudo-labeling) just runs ops with no tape active.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "constant",
    "custom_op",
    "accumulate_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "absolute",
    "add_channel_bias",
    "crop",
    "masked_mean",
    "conv2d",
    "bilinear_resize",
    "softmax",
    "gumbel_softmax",
    "spatial_gradient_norm",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """A dense array with an additively-accumulated gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        elif not arr.flags["C_CONTIGUOUS"]:
            # note: np.ascontiguousarray would promote 0-d scalars to (1,)
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


# Active-tape stack. Commands are single-process and a tape belongs to one
# training step, so a module-level stack is enough.
_TAPE_STACK: list["GradTape"] = []


class GradTape:
    """Execution-ordered record of differentiable ops for one backward pass.

    Ops run while the tape is active append (output, backward) pairs in
    execution order. backward() seeds d(loss)/d(loss) = 1 and visits the
    records in exact reverse order, which is a valid reverse topological
    order because outputs are fresh tensors.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self, "GradTape exited out of order"
        return False

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor):
        if loss.data.shape != ():
            raise ValueError(
                f"backward() needs a scalar loss, got shape {loss.data.shape}"
            )
        loss.grad = np.ones((), dtype=loss.data.dtype)
        for out, backward in reversed(self._records):
            if out.grad is None:
                # Dead branch: nothing downstream consumed this output.
                continue
            backward(out.grad)


def _check_finite(arr: np.ndarray, op: str):
    # NaN/Inf anywhere is an error state, not something to propagate.
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in output of {op}")


def accumulate_grad(t: Tensor, g: np.ndarray):
    """Add a gradient contribution to t (no-op for non-differentiable leaves)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def custom_op(out_data: np.ndarray, backward, *inputs: Tensor) -> Tensor:
    """Register a hand-fused op.

    backward(g) must accumulate into the inputs via accumulate_grad. The op is
    recorded on the active tape only when some input participates in
    differentiation.
    """
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs and _TAPE_STACK:
        _TAPE_STACK[-1]._records.append((out, backward))
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data + b.data
    _check_finite(out, "add")

    def backward(g):
        accumulate_grad(a, g)
        accumulate_grad(b, g)

    return custom_op(out, backward, a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data - b.data
    _check_finite(out, "sub")

    def backward(g):
        accumulate_grad(a, g)
        accumulate_grad(b, -g)

    return custom_op(out, backward, a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul: shape mismatch {a.data.shape} vs {b.data.shape}")
    out = a.data * b.data
    _check_finite(out, "mul")

    def backward(g):
        accumulate_grad(a, g * b.data)
        accumulate_grad(b, g * a.data)

    return custom_op(out, backward, a, b)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)  # keep python-scalar semantics so float32 stays float32
    out = a.data * s
    _check_finite(out, "scale")

    def backward(g):
        accumulate_grad(a, g * s)

    return custom_op(out, backward, a)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g):
        accumulate_grad(x, g * (x.data > 0.0))

    return custom_op(out, backward, x)


def absolute(x: Tensor) -> Tensor:
    out = np.abs(x.data)

    def backward(g):
        # zero subgradient at 0
        accumulate_grad(x, g * np.sign(x.data))

    return custom_op(out, backward, x)


def add_channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """x: (C, H, W), b: (C,) broadcast over the spatial axes."""
    if x.data.ndim != 3 or b.data.shape != (x.data.shape[0],):
        raise ValueError(
            f"add_channel_bias: got x {x.data.shape}, b {b.data.shape}"
        )
    out = x.data + b.data[:, None, None]
    _check_finite(out, "add_channel_bias")

    def backward(g):
        accumulate_grad(x, g)
        accumulate_grad(b, g.sum(axis=(1, 2)))

    return custom_op(out, backward, x, b)


def crop(x: Tensor, top: int, left: int, height: int, width: int) -> Tensor:
    """Spatial crop of the trailing two axes; backward zero-pads."""
    h, w = x.data.shape[-2:]
    if top < 0 or left < 0 or top + height > h or left + width > w:
        raise ValueError(f"crop window out of bounds for {x.data.shape}")
    out = np.ascontiguousarray(x.data[..., top : top + height, left : left + width])

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., top : top + height, left : left + width] = g
        accumulate_grad(x, gx)

    return custom_op(out, backward, x)


def masked_mean(x: Tensor, mask: np.ndarray) -> Tensor:
    """Mean of x over mask==True positions. Empty mask is an error."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.data.shape:
        raise ValueError(f"masked_mean: mask {mask.shape} vs x {x.data.shape}")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("masked_mean: empty mask")
    out = (x.data * mask).sum() / n
    _check_finite(out, "masked_mean")

    def backward(g):
        accumulate_grad(x, (g / n) * mask.astype(x.data.dtype))

    return custom_op(out, backward, x)


# ---------------------------------------------------------------------------
# conv2d


def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    cin = xp.shape[0]
    cols = np.empty((cin, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(cin * k * k, ho * wo)


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int | None = None) -> Tensor:
    """2-D cross-correlation: x (Cin, H, W) with kernels w (Cout, Cin, k, k).

    Zero padding; pad defaults to (k - 1) // 2 ("same" for stride 1). Output
    height is floor((H + 2 pad - k) / stride) + 1.
    """
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise ValueError(f"conv2d: got x {x.data.shape}, w {w.data.shape}")
    co, cin_w, k, k2 = w.data.shape
    cin, h, wide = x.data.shape
    if k != k2:
        raise ValueError(f"conv2d: kernel must be square, got {k}x{k2}")
    if k % 2 == 0:
        raise ValueError(f"conv2d: kernel size must be odd, got {k}")
    if cin != cin_w:
        raise ValueError(f"conv2d: {cin} input channels vs kernel {cin_w}")
    if stride < 1:
        raise ValueError(f"conv2d: stride must be >= 1, got {stride}")
    if pad is None:
        pad = (k - 1) // 2
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wide + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"conv2d: input {h}x{wide} smaller than kernel {k} (pad {pad})")

    if pad:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad)))
    else:
        xp = x.data
    cols = _im2col(xp, k, stride, ho, wo)
    out = (w.data.reshape(co, -1) @ cols).reshape(co, ho, wo)
    _check_finite(out, "conv2d")

    def backward(g):
        gm = g.reshape(co, -1)
        if w.requires_grad:
            accumulate_grad(w, (gm @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            gcols = (w.data.reshape(co, -1).T @ gm).reshape(cin, k, k, ho, wo)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, i, j]
            if pad:
                gxp = gxp[:, pad : pad + h, pad : pad + wide]
            accumulate_grad(x, gxp)

    return custom_op(out, backward, x, w)


# ---------------------------------------------------------------------------
# bilinear resize


def _axis_map(n_in: int, n_out: int):
    # Half-pixel source centers, clamped (the align_corners=False convention).
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    np.clip(pos, 0.0, float(n_in - 1), out=pos)
    i0 = np.floor(pos).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = pos - i0
    w0 = 1.0 - w1
    return i0, i1, w0, w1


def _interp_axis(arr: np.ndarray, axis: int, i0, i1, w0, w1) -> np.ndarray:
    w0 = w0.astype(arr.dtype)
    w1 = w1.astype(arr.dtype)
    shape = [1] * arr.ndim
    shape[axis] = len(w0)
    return np.take(arr, i0, axis=axis) * w0.reshape(shape) + np.take(
        arr, i1, axis=axis
    ) * w1.reshape(shape)


def _interp_axis_adjoint(g: np.ndarray, axis: int, i0, i1, w0, w1, n_in: int) -> np.ndarray:
    gm = np.moveaxis(g, axis, 0)
    out = np.zeros((n_in,) + gm.shape[1:], dtype=g.dtype)
    wshape = (-1,) + (1,) * (gm.ndim - 1)
    np.add.at(out, i0, gm * w0.astype(g.dtype).reshape(wshape))
    np.add.at(out, i1, gm * w1.astype(g.dtype).reshape(wshape))
    return np.moveaxis(out, 0, axis)


def bilinear_resize(x: Tensor, scale: float, out_hw: tuple[int, int] | None = None) -> Tensor:
    """Separable bilinear resize of the trailing two axes of (C, H, W).

    Output size is round(H * scale) x round(W * scale) unless out_hw pins it
    explicitly (needed to invert a resize of an odd-sized input exactly).
    Scale 1.0 is the identity, bit for bit.
    """
    if x.data.ndim != 3:
        raise ValueError(f"bilinear_resize: expected (C, H, W), got {x.data.shape}")
    if scale <= 0:
        raise ValueError(f"bilinear_resize: scale must be positive, got {scale}")
    c, h, w = x.data.shape
    if out_hw is None:
        out_hw = (int(h * scale + 0.5), int(w * scale + 0.5))
    ho, wo = out_hw
    if ho < 1 or wo < 1:
        raise ValueError(f"bilinear_resize: empty output {ho}x{wo}")

    if (ho, wo) == (h, w):
        out = x.data.copy()

        def backward_id(g):
            accumulate_grad(x, g)

        return custom_op(out, backward_id, x)

    ri0, ri1, rw0, rw1 = _axis_map(h, ho)
    ci0, ci1, cw0, cw1 = _axis_map(w, wo)
    out = _interp_axis(_interp_axis(x.data, 1, ri0, ri1, rw0, rw1), 2, ci0, ci1, cw0, cw1)
    _check_finite(out, "bilinear_resize")

    def backward(g):
        gr = _interp_axis_adjoint(g, 2, ci0, ci1, cw0, cw1, w)
        accumulate_grad(x, _interp_axis_adjoint(gr, 1, ri0, ri1, rw0, rw1, h))

    return custom_op(out, backward, x)


# ---------------------------------------------------------------------------
# softmax family


def _stable_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = 0) -> Tensor:
    """Max-subtracted softmax along one axis."""
    p = _stable_softmax(x.data, axis)
    _check_finite(p, "softmax")

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        accumulate_grad(x, p * (g - dot))

    return custom_op(p, backward, x)


def gumbel_softmax(logits: Tensor, temperature: float, noise) -> Tensor:
    """softmax((logits + noise) / temperature) along axis 0.

    The caller draws the Gumbel noise (seeded); it is a constant here, so
    gradients flow only to the logits.
    """
    if temperature <= 0:
        raise ValueError(f"gumbel_softmax: temperature must be > 0, got {temperature}")
    noise = noise.data if isinstance(noise, Tensor) else np.asarray(noise)
    if noise.shape != logits.data.shape:
        raise ValueError(
            f"gumbel_softmax: noise {noise.shape} vs logits {logits.data.shape}"
        )
    inv_t = 1.0 / float(temperature)
    z = (logits.data + noise.astype(logits.data.dtype)) * inv_t
    p = _stable_softmax(z, axis=0)
    _check_finite(p, "gumbel_softmax")

    def backward(g):
        dot = (g * p).sum(axis=0, keepdims=True)
        accumulate_grad(logits, p * (g - dot) * inv_t)

    return custom_op(p, backward, logits)


# ---------------------------------------------------------------------------
# spatial gradient magnitude


def spatial_gradient_norm(x: Tensor) -> Tensor:
    """Per-pixel L2 magnitude of central differences of a (C, H, W) tensor.

    Differences use replicate padding at the borders; the norm runs over
    channels and both spatial directions, giving an (H, W) map. A constant
    input yields exactly zero.
    """
    if x.data.ndim != 3:
        raise ValueError(f"spatial_gradient_norm: expected (C, H, W), got {x.data.shape}")
    d = x.data
    # neighbor views with clamped (replicate) indexing
    xl = np.concatenate([d[:, :, :1], d[:, :, :-1]], axis=2)
    xr = np.concatenate([d[:, :, 1:], d[:, :, -1:]], axis=2)
    xu = np.concatenate([d[:, :1, :], d[:, :-1, :]], axis=1)
    xd = np.concatenate([d[:, 1:, :], d[:, -1:, :]], axis=1)
    dx = (xr - xl) * 0.5
    dy = (xd - xu) * 0.5
    sq = (dx * dx).sum(axis=0) + (dy * dy).sum(axis=0)
    out = np.sqrt(sq)
    _check_finite(out, "spatial_gradient_norm")

    def backward(g):
        # d||v||/dv = v/||v||, zero subgradient where the norm vanishes
        r = np.zeros_like(out)
        np.divide(g, out, out=r, where=out > 0)
        gdx = dx * r
        gdy = dy * r
        gx = np.zeros_like(d)
        # adjoint of the clamped +1 shift minus adjoint of the clamped -1 shift
        gx[:, :, 1:] += gdx[:, :, :-1]
        gx[:, :, -1] += gdx[:, :, -1]
        gx[:, :, :-1] -= gdx[:, :, 1:]
        gx[:, :, 0] -= gdx[:, :, 0]
        gx[:, 1:, :] += gdy[:, :-1, :]
        gx[:, -1, :] += gdy[:, -1, :]
        gx[:, :-1, :] -= gdy[:, 1:, :]
        gx[:, 0, :] -= gdy[:, 0, :]
        accumulate_grad(x, gx * 0.5)

    return custom_op(out, backward, x)
