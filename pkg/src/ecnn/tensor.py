"""Array primitives shared by the layers.

Tensors are plain C-contiguous numpy arrays. The helpers below add the shape
checks the rest of the package relies on; none of them broadcast.
"""

import numpy as np

from .errors import ShapeError


def create(shape, fill=0.0, dtype=np.float64):
    """Return a new row-major array of ``shape``.

    ``fill`` is either a scalar broadcast to every entry or a flat sequence
    with exactly ``prod(shape)`` values, copied in row-major order.
    """
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ShapeError(f"extents must be positive, got {shape}")
    if np.isscalar(fill):
        return np.full(shape, fill, dtype=dtype)
    flat = np.asarray(fill, dtype=dtype).ravel()
    if flat.size != int(np.prod(shape)):
        raise ShapeError(f"{flat.size} values cannot fill shape {shape}")
    return flat.reshape(shape).copy()


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects rank-2 operands")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def _check_rank4(x, name):
    if x.ndim != 4:
        raise ShapeError(f"{name} expects [N,C,H,W], got shape {x.shape}")


def pad2d(x, p):
    """Zero-pad the two spatial axes of an [N,C,H,W] array by ``p``."""
    _check_rank4(x, "pad2d")
    if p < 0:
        raise ShapeError("padding must be non-negative")
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), mode="constant")


def hflip(x):
    _check_rank4(x, "hflip")
    return np.ascontiguousarray(x[:, :, :, ::-1])


def concat_features(a, b):
    """Join conv features and HOG features row-wise, conv block first."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("concat_features expects rank-2 operands")
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    return np.concatenate([a, b.astype(a.dtype, copy=False)], axis=1)
