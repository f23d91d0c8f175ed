"""Histogram of Oriented Gradients for small grayscale images.

Defaults: 9 unsigned orientation bins over [0, 180), 8x8-pixel cells,
2x2-cell blocks with a one-cell stride, L2 block normalization. A 48x48
image yields 5*5 blocks of 36 values, 900 in total. Pixels are assigned to
their cell outright (no spatial interpolation); orientation votes are split
linearly between the two nearest bin centres.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


@dataclass(frozen=True)
class HogConfig:
    bins: int = 9
    cell: int = 8
    block: int = 2
    block_stride: int = 1
    norm_eps: float = 1e-6
    image_size: int = 48

    @property
    def cells_per_side(self):
        return self.image_size // self.cell

    @property
    def blocks_per_side(self):
        return (self.cells_per_side - self.block) // self.block_stride + 1

    @property
    def length(self):
        return self.blocks_per_side ** 2 * self.block ** 2 * self.bins


DEFAULT = HogConfig()


def _as_2d(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3:
        if img.shape[0] != 1:
            raise ShapeError(f"expected a single-channel image, got shape {img.shape}")
        img = img[0]
    if img.ndim != 2:
        raise ShapeError(f"expected [1,H,W] or [H,W], got shape {img.shape}")
    return img


def image_gradients(img):
    """Un-halved central differences with replicated borders.

    Returns ``(gx, gy)`` with the same leading shape as ``img``.
    """
    arr = np.asarray(img)
    im = _as_2d(arr)
    p = np.pad(im, 1, mode="edge")
    gx = p[1:-1, 2:] - p[1:-1, :-2]
    gy = p[2:, 1:-1] - p[:-2, 1:-1]
    if arr.ndim == 3:
        return gx[None], gy[None]
    return gx, gy


def cell_histograms(gx, gy, cfg=DEFAULT):
    gx, gy = _as_2d(gx), _as_2d(gy)
    mag = np.hypot(gx, gy)
    angle = np.mod(np.degrees(np.arctan2(gy, gx)), 180.0)
    width = 180.0 / cfg.bins
    pos = angle / width - 0.5
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % cfg.bins
    hi = (lo + 1) % cfg.bins

    H, W = mag.shape
    votes = np.zeros((H, W, cfg.bins))
    r, c = np.indices((H, W))
    # lo != hi for every pixel, so plain fancy assignment cannot collide
    votes[r, c, lo] = mag * (1.0 - frac)
    votes[r, c, hi] += mag * frac

    n = cfg.cells_per_side
    s = cfg.cell
    votes = votes[:n * s, :n * s].reshape(n, s, n, s, cfg.bins)
    return votes.sum(axis=(1, 3))


def block_normalize(cells, cfg=DEFAULT):
    nb, k = cfg.blocks_per_side, cfg.block
    out = np.empty((nb, nb, k * k * cfg.bins))
    for by in range(nb):
        for bx in range(nb):
            y, x = by * cfg.block_stride, bx * cfg.block_stride
            v = cells[y:y + k, x:x + k].ravel()
            out[by, bx] = v / np.sqrt(v @ v + cfg.norm_eps ** 2)
    return out.ravel()


def hog_extract(img, cfg=DEFAULT):
    im = _as_2d(img)
    if im.shape != (cfg.image_size, cfg.image_size):
        raise ShapeError(
            f"HOG configured for {cfg.image_size}x{cfg.image_size} images, got {im.shape}")
    if cfg.image_size % cfg.cell or cfg.blocks_per_side < 1:
        raise ShapeError("image extent must be a whole number of cells and hold a block")
    gx, gy = image_gradients(im)
    return block_normalize(cell_histograms(gx, gy, cfg), cfg)


def hog_batch(images, cfg=None):
    """HOG vectors for an [N,1,H,W] stack, one row per image."""
    images = np.asarray(images)
    if cfg is None:
        cfg = HogConfig(image_size=images.shape[-1])
    out = np.empty((images.shape[0], cfg.length))
    for i, im in enumerate(images):
        out[i] = hog_extract(im, cfg)
    return out


def write_hog_csv(path, vectors):
    np.savetxt(path, vectors, delimiter=",", fmt="%.9g")
