"""Binary model checkpoints.

Layout, all integers little-endian::

    b"ECNN1"
    u32 spec length, UTF-8 architecture string
    i64 seed
    repeated until EOF:
        u32 name length, UTF-8 name
        u32 rank, rank * u32 extents
        prod(extents) * f64 values, row-major

Entries are the model parameters in model order, then BN running statistics
(``<layer>.running_mean`` / ``<layer>.running_var``), then the optional
normalisation mean (``norm.mean``).
"""

import struct

import numpy as np

from .errors import DataError
from .netspec import Model, init_params, parse_arch

MAGIC = b"ECNN1"


def _entries(model):
    yield from model.params.items()
    for name, st in model.bn.items():
        yield f"{name}.running_mean", st.running_mean
        yield f"{name}.running_var", st.running_var
    if model.mean_image is not None:
        yield "norm.mean", model.mean_image


def dumps(model):
    spec = model.spec.to_string().encode("utf-8")
    out = [MAGIC, struct.pack("<I", len(spec)), spec, struct.pack("<q", model.seed)]
    for name, arr in _entries(model):
        raw = name.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def save(model, path):
    with open(path, "wb") as fh:
        fh.write(dumps(model))


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise DataError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _infer_dtype(entries):
    # values stored from a float32 model survive the round trip through float32
    weights = [a for k, a in entries.items() if k != "norm.mean"]
    if all(np.array_equal(a, a.astype(np.float32), equal_nan=True) for a in weights):
        return np.float32
    return np.float64


def loads(buf, dtype=None):
    """Rebuild a model from checkpoint bytes.

    With ``dtype=None`` the model comes back as float32 when every stored
    value is exactly representable in float32, otherwise as float64.
    """
    r = _Reader(buf)
    if r.take(len(MAGIC)) != MAGIC:
        raise DataError("not an ECNN1 checkpoint")
    (n,) = r.unpack("<I")
    try:
        spec = parse_arch(r.take(n).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"checkpoint has an invalid architecture: {exc}") from None
    (seed,) = r.unpack("<q")
    entries = {}
    while r.pos < len(buf):
        (n,) = r.unpack("<I")
        try:
            name = r.take(n).decode("utf-8")
        except UnicodeDecodeError:
            raise DataError(f"checkpoint entry name at byte {r.pos - n} is not UTF-8") from None
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}I")
        count = int(np.prod(shape, dtype=np.int64))
        entries[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape)
    if dtype is None:
        dtype = _infer_dtype(entries)
    # the normalisation mean stays float64, as in the data pipeline
    entries = {k: v if k == "norm.mean" else v.astype(dtype) for k, v in entries.items()}

    params, bn = init_params(spec, 0, dtype)
    for name in list(params):
        if name not in entries or entries[name].shape != params[name].shape:
            raise DataError(f"checkpoint entry {name!r} missing or misshapen")
        params[name] = entries.pop(name)
    for name, st in bn.items():
        try:
            st.running_mean = entries.pop(f"{name}.running_mean")
            st.running_var = entries.pop(f"{name}.running_var")
        except KeyError:
            raise DataError(f"checkpoint lacks running statistics for {name}") from None
    mean = entries.pop("norm.mean", None)
    if entries:
        raise DataError(f"unexpected checkpoint entries: {sorted(entries)}")
    return Model(spec, params, bn, seed, mean_image=mean)


def load(path, dtype=None):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return loads(buf, dtype)
