"""Forward and backward passes for every layer kind in the network template.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Caches are plain tuples and are
only meaningful to their own backward function.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import pad2d

# Upper bound on the im2col scratch buffer; larger batches are processed in
# sample chunks so memory stays flat.
_COL_BYTES = 48 * 2**20


def conv_output_size(size, kernel, stride, pad):
    span = size + 2 * pad - kernel
    if span < 0 or span % stride:
        raise ConfigError(
            f"kernel {kernel}, stride {stride}, pad {pad} do not tile extent {size}")
    return 1 + span // stride


def _chunks(n, per_sample_bytes):
    step = max(1, _COL_BYTES // max(per_sample_bytes, 1))
    for start in range(0, n, step):
        yield start, min(n, start + step)


def _cols(xp, lo, hi, kh, kw, stride, ho, wo):
    """im2col for samples lo:hi as a [C*kh*kw, n*ho*wo] matrix.

    Built from kh*kw shifted slabs so every copy has a contiguous inner run.
    """
    src = xp[lo:hi]
    n, c = src.shape[:2]
    cols = np.empty((c, kh, kw, n, ho, wo), dtype=xp.dtype)
    for a in range(kh):
        for b in range(kw):
            patch = src[:, :, a:a + stride * ho:stride, b:b + stride * wo:stride]
            cols[:, a, b] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * kh * kw, n * ho * wo)


def conv_forward(x, w, b, stride=1, pad=0):
    """Cross-correlate ``x`` [N,C,H,W] with filters ``w`` [F,C,HH,WW].

    Implemented as im2col followed by one GEMM per chunk of samples.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv expects x [N,C,H,W] and w [F,C,HH,WW]")
    N, C, H, W = x.shape
    F, Cw, HH, WW = w.shape
    if C != Cw:
        raise ShapeError(f"input has {C} channels, filters expect {Cw}")
    if b.shape != (F,):
        raise ShapeError(f"bias shape {b.shape} does not match {F} filters")
    Ho = conv_output_size(H, HH, stride, pad)
    Wo = conv_output_size(W, WW, stride, pad)

    xp = pad2d(x, pad)
    wmat = w.reshape(F, -1)
    out = np.empty((N, F, Ho, Wo), dtype=np.result_type(x, w))
    per_sample = Ho * Wo * C * HH * WW * x.itemsize
    for lo, hi in _chunks(N, per_sample):
        res = wmat @ _cols(xp, lo, hi, HH, WW, stride, Ho, Wo)
        out[lo:hi] = res.reshape(F, hi - lo, Ho, Wo).transpose(1, 0, 2, 3)
    out += b.reshape(1, F, 1, 1)
    return out, (x, w, b, stride, pad)


def conv_backward(dout, cache):
    x, w, b, stride, pad = cache
    N, C, H, W = x.shape
    F, _, HH, WW = w.shape
    _, _, Ho, Wo = dout.shape

    xp = pad2d(x, pad)
    wmat = w.reshape(F, -1)
    dw = np.zeros_like(wmat, dtype=np.result_type(dout, w))
    per_sample = Ho * Wo * C * HH * WW * x.itemsize
    for lo, hi in _chunks(N, per_sample):
        d2 = dout[lo:hi].transpose(1, 0, 2, 3).reshape(F, -1)
        dw += d2 @ _cols(xp, lo, hi, HH, WW, stride, Ho, Wo).T
    db = dout.sum(axis=(0, 2, 3))

    if stride == 1 and HH == WW and pad <= HH - 1:
        # full correlation of dout with the 180-degree rotated, channel-swapped filters
        w_rot = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        dx, _ = conv_forward(dout, w_rot, np.zeros(C, dtype=dw.dtype), 1, HH - 1 - pad)
        return dx, dw.reshape(w.shape), db

    dxp = np.zeros_like(xp, dtype=dw.dtype)
    for lo, hi in _chunks(N, per_sample):
        d2 = dout[lo:hi].transpose(1, 0, 2, 3).reshape(F, -1)
        dcols = (wmat.T @ d2).reshape(C, HH, WW, hi - lo, Ho, Wo)
        for a in range(HH):
            rows = slice(a, a + stride * Ho, stride)
            for c in range(WW):
                dxp[lo:hi, :, rows, c:c + stride * Wo:stride] += \
                    dcols[:, a, c].transpose(1, 0, 2, 3)
    dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
    return np.ascontiguousarray(dx), dw.reshape(w.shape), db


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, cache):
    return np.where(cache > 0, dout, dout.dtype.type(0))


def _quadrants(x):
    # the four members of every 2x2 window, in row-major scan order
    return (x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2])


def maxpool_forward(x):
    """Non-overlapping 2x2 max pooling with stride 2."""
    if x.ndim != 4:
        raise ShapeError("maxpool expects [N,C,H,W]")
    N, C, H, W = x.shape
    if H % 2 or W % 2:
        raise ShapeError(f"2x2 pooling needs even extents, got {H}x{W}")
    q = _quadrants(x)
    out = np.maximum(np.maximum(q[0], q[1]), np.maximum(q[2], q[3]))
    # the first member equal to the max wins, so row-major scan order breaks ties
    idx = np.full(out.shape, 3, dtype=np.uint8)
    for k in (2, 1, 0):
        idx[q[k] == out] = k
    return out, (x.shape, idx)


def maxpool_backward(dout, cache):
    shape, idx = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    zero = dout.dtype.type(0)
    for k, view in enumerate(_quadrants(dx)):
        view[...] = np.where(idx == k, dout, zero)
    return dx


@dataclass
class BatchNormState:
    """Running statistics for one BN layer; gamma/beta live with the params."""

    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def fresh(cls, dim, dtype=np.float64, momentum=0.9, eps=1e-5):
        return cls(np.zeros(dim, dtype=dtype), np.ones(dim, dtype=dtype), momentum, eps)


def batchnorm_forward(x, gamma, beta, state, mode):
    if mode == "train":
        N = x.shape[0]
        if N < 2:
            raise ConfigError("batch normalization needs at least 2 samples in train mode")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1 - m) * mu
        state.running_var[...] = m * state.running_var + (1 - m) * var
    elif mode == "eval":
        mu, var = state.running_mean, state.running_var
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mu) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, gamma, inv_std, mode)


def batchnorm_backward(dout, cache):
    """Gradient through BN, including the batch-statistic dependence on x."""
    xhat, gamma, inv_std, mode = cache
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dxhat = dout * gamma
    if mode == "eval":
        return dxhat * inv_std, dgamma, dbeta
    N = dout.shape[0]
    dx = (inv_std / N) * (N * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


def spatial_batchnorm_forward(x, gamma, beta, state, mode):
    N, C, H, W = x.shape
    flat = x.transpose(0, 2, 3, 1).reshape(-1, C)
    out, cache = batchnorm_forward(flat, gamma, beta, state, mode)
    return out.reshape(N, H, W, C).transpose(0, 3, 1, 2), (x.shape, cache)


def spatial_batchnorm_backward(dout, cache):
    (N, C, H, W), inner = cache
    flat = dout.transpose(0, 2, 3, 1).reshape(-1, C)
    dx, dgamma, dbeta = batchnorm_backward(flat, inner)
    return dx.reshape(N, H, W, C).transpose(0, 3, 1, 2), dgamma, dbeta


def dropout_forward(x, p_keep, mode, rng):
    """Inverted dropout: survivors are scaled by 1/p_keep at train time."""
    if not 0.0 < p_keep <= 1.0:
        raise ConfigError(f"p_keep must lie in (0, 1], got {p_keep}")
    if mode == "eval" or p_keep == 1.0:
        return x, None
    draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
    mask = (rng.random(x.shape, dtype=draw_dtype) < p_keep).astype(x.dtype)
    mask *= x.dtype.type(1.0 / p_keep)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def affine_forward(x, w, b):
    N = x.shape[0]
    flat = x.reshape(N, -1)
    if flat.shape[1] != w.shape[0]:
        raise ShapeError(f"input width {flat.shape[1]} does not match weights {w.shape}")
    return flat @ w + b, (x.shape, flat, w)


def affine_backward(dout, cache):
    shape, flat, w = cache
    dx = (dout @ w.T).reshape(shape)
    return dx, flat.T @ dout, dout.sum(axis=0)


def softmax_loss(scores, labels):
    """Mean cross-entropy of softmax(scores) and its gradient w.r.t. scores."""
    labels = np.asarray(labels)
    N, K = scores.shape
    if labels.shape != (N,):
        raise ShapeError(f"expected {N} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"labels must lie in [0, {K})")
    shifted = scores - scores.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(N)
    loss = -log_probs[rows, labels].mean()
    dscores = np.exp(log_probs)
    dscores[rows, labels] -= 1
    dscores /= N
    # extended-precision losses stay numpy scalars for finite-difference probes
    return (loss if loss.dtype == np.longdouble else float(loss)), dscores
