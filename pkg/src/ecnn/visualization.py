"""Activation maps, filter grids and DeepDream, exported as binary PGM."""

import numpy as np

from .errors import DataError, UsageError


def capture_activations(model, img):
    """Post-ReLU activations ``[(layer_index, array[C,H,W]), ...]`` for one image.

    Layer indices are 1-based, matching parameter names such as ``conv1.W``.
    """
    x = np.asarray(img, dtype=np.float64).reshape((1,) + model.conv_shapes[0])
    prev = model.mode
    model.eval()
    try:
        acts = model.conv_activations(x)
    finally:
        model.mode = prev
    return [(i, a[0]) for i, a in enumerate(acts, 1)]


def _normalize_tile(t):
    t = np.asarray(t, dtype=np.float64)
    lo, hi = t.min(), t.max()
    if hi == lo:
        return np.full(t.shape, 128, dtype=np.uint8)
    return np.rint((t - lo) * (255.0 / (hi - lo))).astype(np.uint8)


def render_grid(tiles, cols, gap=1):
    """Tile equally-sized 2D arrays row-major onto a black canvas.

    Each tile is min-max scaled to [0, 255] on its own; constant tiles
    render as mid-gray.
    """
    tiles = [np.asarray(t) for t in tiles]
    if not tiles:
        raise UsageError("render_grid needs at least one tile")
    if cols < 1:
        raise UsageError("cols must be at least 1")
    th, tw = tiles[0].shape
    if any(t.shape != (th, tw) for t in tiles):
        raise UsageError("all tiles must share one shape")
    cols = min(cols, len(tiles))
    rows = -(-len(tiles) // cols)
    canvas = np.zeros((rows * (th + gap) - gap, cols * (tw + gap) - gap), dtype=np.uint8)
    for k, t in enumerate(tiles):
        r, c = divmod(k, cols)
        y, x = r * (th + gap), c * (tw + gap)
        canvas[y:y + th, x:x + tw] = _normalize_tile(t)
    return canvas


def first_layer_filters(model):
    """First-layer filters as 2D tiles (channel 0 of each filter)."""
    return list(model.params["conv1.W"][:, 0])


def activation_grid(act, max_channels=None, cols=8, gap=1):
    chans = act if max_channels is None else act[:max_channels]
    return render_grid(list(chans), cols, gap)


def dream_objective(act):
    return 0.5 * float(np.sum(act * act))


def deepdream(model, img, layer, steps, step_size=1.0, mean_image=None, trace=None):
    """Gradient ascent on the input to amplify conv ``layer``'s activations.

    ``img`` holds raw pixels in [0, 255]. The network sees ``img - mean``;
    after each max-norm-scaled step the raw image is clipped back into
    [0, 255]. Runs in eval mode and leaves the model untouched. If ``trace``
    is a list, the objective before each step is appended to it.
    """
    n_layers = len(model.spec.conv_layers)
    if not 1 <= layer <= n_layers:
        raise UsageError(f"layer must be in 1..{n_layers}, got {layer}")
    raw = np.asarray(img, dtype=np.float64)
    if steps == 0:
        return raw.copy()
    shape = (1,) + model.conv_shapes[0]
    mean = np.zeros(shape) if mean_image is None else np.asarray(mean_image).reshape(shape)
    cur = raw.reshape(shape).copy()
    prev = model.mode
    model.eval()
    try:
        for _ in range(steps):
            act, grad = model.activation_and_input_grad(cur - mean, layer, lambda a: a)
            if trace is not None:
                trace.append(dream_objective(act))
            grad = grad.astype(np.float64)
            cur = np.clip(cur + step_size * grad / (np.abs(grad).max() + 1e-8), 0.0, 255.0)
    finally:
        model.mode = prev
    return cur.reshape(raw.shape)


def to_bytes(img):
    """Round and clip a raw-pixel image to uint8."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64)), 0, 255).astype(np.uint8)


def write_pgm(img, path):
    img = np.asarray(img)
    if img.ndim != 2:
        raise UsageError(f"PGM images are 2D, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.size and (img.min() < 0 or img.max() > 255):
            raise UsageError("PGM pixel values must lie in 0..255")
        img = img.astype(np.uint8)
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(img).tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror}") from None


def read_pgm(path):
    """Parse a binary (P5) 8-bit PGM; comments in the header are skipped."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            pos = buf.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        fields.append(buf[start:pos])
    if fields[0] != b"P5" or int(fields[3]) != 255:
        raise DataError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(fields[1]), int(fields[2])
    data = buf[pos + 1:pos + 1 + w * h]
    if len(data) != w * h:
        raise DataError(f"{path}: truncated pixel data")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w).copy()
