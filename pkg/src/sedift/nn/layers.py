"""Network layer primitives with explicit forward/backward pairs.

Every forward returns (output, cache); the matching backward consumes the
cache plus the upstream gradient and returns the input gradient followed by
any parameter gradients. Tensors are batched channels-last float64 arrays,
shape (N, H, W, C). Convolutions use TensorFlow-style 'same' zero padding so
spatial sizes follow ceil(size / stride).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractViolation, require

LAYER_KINDS = ("conv3", "maxpool2", "transposed-conv2", "leaky-relu", "tanh",
               "dropout", "skip-concat", "fusion")


def _check4d(x, who: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ContractViolation(f"{who}: expected (N, H, W, C) tensor, got shape {x.shape}")
    return x


def _same_axis(size: int, kernel: int, stride: int):
    out = -(-size // stride)
    pad = max((out - 1) * stride + kernel - size, 0)
    return out, pad // 2, pad - pad // 2


def conv_forward(x, w, b, stride: int = 1):
    """2D convolution, 'same' padding, arbitrary kernel and stride.

    Computed as a sum of kernel-offset GEMMs: for each tap (i, j) the strided
    input window multiplies w[i, j], which keeps memory flat and lets BLAS do
    all the arithmetic.
    """
    x = _check4d(x, "conv")
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, h, wd, cin = x.shape
    kh, kw, cin_w, cout = w.shape
    if cin != cin_w:
        raise ContractViolation(f"conv: input has {cin} channels, kernel expects {cin_w}"
                                f" (input {x.shape}, kernel {w.shape})")
    ho, pt, pb = _same_axis(h, kh, stride)
    wo, pl, pr = _same_axis(wd, kw, stride)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    y = np.zeros((n * ho * wo, cout))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, i:i + stride * (ho - 1) + 1:stride,
                       j:j + stride * (wo - 1) + 1:stride, :]
            y += np.ascontiguousarray(patch).reshape(-1, cin) @ w[i, j]
    y += b
    y = y.reshape(n, ho, wo, cout)
    cache = (xp, w, x.shape, stride, (pt, pl), (ho, wo))
    return y, cache


def conv_backward(dy, cache):
    xp, w, x_shape, stride, (pt, pl), (ho, wo) = cache
    dy = _check4d(dy, "conv backward")
    n, h, wd, cin = x_shape
    kh, kw, _, cout = w.shape
    dy_flat = dy.reshape(-1, cout)
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(i, i + stride * (ho - 1) + 1, stride),
                  slice(j, j + stride * (wo - 1) + 1, stride), slice(None))
            patch = np.ascontiguousarray(xp[sl]).reshape(-1, cin)
            dw[i, j] = patch.T @ dy_flat
            dxp[sl] += (dy_flat @ w[i, j].T).reshape(n, ho, wo, cin)
    db = dy_flat.sum(axis=0)
    dx = dxp[:, pt:pt + h, pl:pl + wd, :]
    return dx, dw, db


def maxpool2_forward(x):
    """2x2 max pooling, stride 2; H and W must be even."""
    x = _check4d(x, "maxpool2")
    n, h, w, c = x.shape
    require(h % 2 == 0 and w % 2 == 0, f"maxpool2 needs even H, W, got {x.shape}")
    win = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    flat = win.reshape(n, h // 2, w // 2, c, 4)
    idx = flat.argmax(axis=-1)  # first occurrence wins ties
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, x_shape = cache
    n, h, w, c = x_shape
    dy = _check4d(dy, "maxpool2 backward")
    dflat = np.zeros((n, h // 2, w // 2, c, 4))
    np.put_along_axis(dflat, idx[..., None], dy[..., None], axis=-1)
    dwin = dflat.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return dwin.reshape(n, h, w, c)


def tconv2_forward(x, w, b):
    """Transposed convolution, 2x2 kernel, stride 2: exact 2x upsampling.

    Output strides do not overlap, so each output pixel is a single affine
    map of one input pixel (no checkerboard artifacts).
    """
    x = _check4d(x, "tconv2")
    w = np.asarray(w, dtype=np.float64)
    n, h, wd, cin = x.shape
    kh, kw, cin_w, cout = w.shape
    require(kh == 2 and kw == 2, "transposed conv kernel must be 2x2")
    if cin != cin_w:
        raise ContractViolation(f"tconv2: input has {cin} channels, kernel expects {cin_w}")
    xf = x.reshape(-1, cin)
    y = np.empty((n, 2 * h, 2 * wd, cout))
    for i in range(2):
        for j in range(2):
            y[:, i::2, j::2, :] = (xf @ w[i, j]).reshape(n, h, wd, cout)
    y += b
    return y, (x, w)


def tconv2_backward(dy, cache):
    x, w = cache
    dy = _check4d(dy, "tconv2 backward")
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    xf = x.reshape(-1, cin)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    for i in range(2):
        for j in range(2):
            dsub = np.ascontiguousarray(dy[:, i::2, j::2, :]).reshape(-1, cout)
            dw[i, j] = xf.T @ dsub
            dx += (dsub @ w[i, j].T).reshape(x.shape)
    db = dy.reshape(-1, cout).sum(axis=0)
    return dx, dw, db


def leaky_relu_forward(x, slope: float = 0.2):
    x = _check4d(x, "leaky-relu") if np.ndim(x) == 4 else np.asarray(x, dtype=np.float64)
    y = np.where(x >= 0.0, x, slope * x)
    return y, (x >= 0.0, slope)


def leaky_relu_backward(dy, cache):
    nonneg, slope = cache
    return np.where(nonneg, dy, slope * dy)


def tanh_forward(x):
    y = np.tanh(np.asarray(x, dtype=np.float64))
    return y, y


def tanh_backward(dy, cache):
    y = cache
    return dy * (1.0 - y * y)


def sigmoid_forward(x):
    x = np.asarray(x, dtype=np.float64)
    y = np.empty_like(x)
    pos = x >= 0.0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y, y


def sigmoid_backward(dy, cache):
    y = cache
    return dy * y * (1.0 - y)


def dropout_forward(x, rate: float, mode: str, rng=None):
    """Inverted dropout: train-mode output has the same expectation as eval."""
    require(0.0 <= rate < 1.0, f"dropout rate must be in [0, 1), got {rate}")
    x = np.asarray(x, dtype=np.float64)
    if mode == "eval" or rate == 0.0:
        return x, None
    require(mode == "train", f"mode must be train or eval, got {mode!r}")
    require(rng is not None, "train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * scale, (keep, scale)


def dropout_backward(dy, cache):
    if cache is None:
        return np.asarray(dy, dtype=np.float64)
    keep, scale = cache
    return dy * keep * scale


def concat_forward(parts, axis: int = -1):
    parts = [np.asarray(p, dtype=np.float64) for p in parts]
    y = np.concatenate(parts, axis=axis)
    return y, ([p.shape[axis] for p in parts], axis)


def concat_backward(dy, cache):
    sizes, axis = cache
    return np.split(dy, np.cumsum(sizes)[:-1], axis=axis)


def fuse_concat_forward(coding, g):
    """Tile the per-sample global vector across space and append as channels."""
    coding = _check4d(coding, "fusion")
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n, h, w, c = coding.shape
    if g.shape[0] != n:
        raise ContractViolation(f"fusion: batch mismatch, coding {n} vs global {g.shape[0]}")
    tiled = np.broadcast_to(g[:, None, None, :], (n, h, w, g.shape[1]))
    y = np.concatenate([coding, tiled], axis=-1)
    return y, (c, g.shape)


def fuse_concat_backward(dy, cache):
    c, g_shape = cache
    dcoding = dy[..., :c]
    dg = dy[..., c:].sum(axis=(1, 2))
    return dcoding, dg.reshape(g_shape)


def fuse_learned_forward(coding, g, w, b, slope: float = 0.2):
    """Per-location affine map of [coding; g] back to the coding depth.

    Equivalent to a 1x1 convolution over the broadcast concatenation,
    followed by a leaky ReLU.
    """
    z, ccache = fuse_concat_forward(coding, g)
    n, h, wd, cz = z.shape
    w = np.asarray(w, dtype=np.float64)
    if w.shape[0] != cz:
        raise ContractViolation(f"fusion weights expect {w.shape[0]} channels, got {cz}")
    pre = z.reshape(-1, cz) @ w + b
    pre = pre.reshape(n, h, wd, w.shape[1])
    y, acache = leaky_relu_forward(pre, slope)
    return y, (z, w, ccache, acache)


def fuse_learned_backward(dy, cache):
    z, w, ccache, acache = cache
    dpre = leaky_relu_backward(dy, acache)
    cz = z.shape[-1]
    dpre_flat = dpre.reshape(-1, dpre.shape[-1])
    z_flat = z.reshape(-1, cz)
    dw = z_flat.T @ dpre_flat
    db = dpre_flat.sum(axis=0)
    dz = (dpre_flat @ w.T).reshape(z.shape)
    dcoding, dg = fuse_concat_backward(dz, ccache)
    return dcoding, dg, dw, db


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one generator layer.

    conv3 is fixed at kernel 3, stride 1, same padding; maxpool2 and
    transposed-conv2 are fixed at 2x2 windows with stride 2.
    """

    kind: str
    out_channels: int = 0
    rate: float = 0.0      # dropout only
    slope: float = 0.2     # leaky-relu / learned fusion
    fusion_mode: str = "concat"

    def __post_init__(self):
        require(self.kind in LAYER_KINDS, f"unknown layer kind {self.kind!r}")
        if self.kind == "dropout":
            require(0.0 <= self.rate < 1.0, "dropout rate must be in [0, 1)")
        if self.kind == "fusion":
            require(self.fusion_mode in ("concat", "learned"),
                    f"unknown fusion mode {self.fusion_mode!r}")


def layer_forward(spec: LayerSpec, x, params=None, mode: str = "eval", rng=None):
    """Dispatch one layer forward; `x` is a tuple for skip-concat and fusion."""
    k = spec.kind
    if k == "conv3":
        return conv_forward(x, params["w"], params["b"], stride=1)
    if k == "maxpool2":
        return maxpool2_forward(x)
    if k == "transposed-conv2":
        return tconv2_forward(x, params["w"], params["b"])
    if k == "leaky-relu":
        return leaky_relu_forward(x, spec.slope)
    if k == "tanh":
        return tanh_forward(x)
    if k == "dropout":
        return dropout_forward(x, spec.rate, mode, rng)
    if k == "skip-concat":
        return concat_forward(list(x), axis=-1)
    if k == "fusion":
        coding, g = x
        if spec.fusion_mode == "concat":
            return fuse_concat_forward(coding, g)
        return fuse_learned_forward(coding, g, params["w"], params["b"], spec.slope)
    raise ContractViolation(f"unknown layer kind {k!r}")


def layer_backward(spec: LayerSpec, cache, dy):
    """Dispatch one layer backward; returns (input grad(s), {param grads})."""
    k = spec.kind
    if k == "conv3":
        dx, dw, db = conv_backward(dy, cache)
        return dx, {"w": dw, "b": db}
    if k == "maxpool2":
        return maxpool2_backward(dy, cache), {}
    if k == "transposed-conv2":
        dx, dw, db = tconv2_backward(dy, cache)
        return dx, {"w": dw, "b": db}
    if k == "leaky-relu":
        return leaky_relu_backward(dy, cache), {}
    if k == "tanh":
        return tanh_backward(dy, cache), {}
    if k == "dropout":
        return dropout_backward(dy, cache), {}
    if k == "skip-concat":
        return tuple(concat_backward(dy, cache)), {}
    if k == "fusion":
        if spec.fusion_mode == "concat":
            dcoding, dg = fuse_concat_backward(dy, cache)
            return (dcoding, dg), {}
        dcoding, dg, dw, db = fuse_learned_backward(dy, cache)
        return (dcoding, dg), {"w": dw, "b": db}
    raise ContractViolation(f"unknown layer kind {k!r}")
