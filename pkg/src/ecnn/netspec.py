"""Architecture strings, model assembly, and whole-network forward/backward.

Architecture grammar (segments separated by ``|``)::

    conv:<F>x<K>x<K>[,s<S>][,p<P>][,sbn][,drop<p_keep>][,pool]   one or more
    fc:<H>[,bn][,drop<p_keep>]                                    zero or more
    hog                                                           optional
    classes:<K>                                                   optional, default 7
    input:<H>x<W>                                                 optional, default 48x48

Conv segments come first. Padding defaults to ``K // 2`` so 3x3 and 5x5
convolutions keep the spatial extent; ``pool`` halves it. ``hog`` appends the
HOG vector of the raw image to the flattened conv output before the first
fully connected layer.
"""

import re
from dataclasses import dataclass, field, replace

import numpy as np

from . import layers as L
from .errors import ConfigError, ParseError, ShapeError, UsageError
from .hog import HogConfig
from .tensor import concat_features

SHALLOW = "conv:32x3x3,s1,sbn,drop0.5|conv:64x3x3,s1,sbn,drop0.5,pool|fc:512,bn,drop0.5"
DEEP = ("conv:64x3x3,sbn,drop0.5,pool|conv:128x5x5,sbn,drop0.5,pool|"
        "conv:512x3x3,sbn,drop0.5,pool|conv:512x3x3,sbn,drop0.5,pool|"
        "fc:256,bn,drop0.5|fc:512,bn,drop0.5")
PRESETS = {"shallow": SHALLOW, "deep": DEEP}

CLASS_NAMES = ("Angry", "Disgust", "Fear", "Happy", "Sad", "Surprise", "Neutral")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int
    kernel: int = 0
    stride: int = 1
    pad: int | None = None
    bn: bool = False
    dropout: float | None = None
    pool: bool = False

    @property
    def padding(self):
        return self.kernel // 2 if self.pad is None else self.pad

    def to_string(self):
        if self.kind == "conv":
            parts = [f"conv:{self.width}x{self.kernel}x{self.kernel}"]
            if self.stride != 1:
                parts.append(f"s{self.stride}")
            if self.pad is not None:
                parts.append(f"p{self.pad}")
            if self.bn:
                parts.append("sbn")
        else:
            parts = [f"fc:{self.width}"]
            if self.bn:
                parts.append("bn")
        if self.dropout is not None:
            parts.append(f"drop{self.dropout!r}")
        if self.pool:
            parts.append("pool")
        return ",".join(parts)


@dataclass(frozen=True)
class ArchSpec:
    conv_layers: tuple
    fc_layers: tuple = ()
    num_classes: int = 7
    hog_concat: bool = False
    input_hw: tuple = (48, 48)

    def to_string(self):
        segs = [c.to_string() for c in self.conv_layers]
        segs += [f.to_string() for f in self.fc_layers]
        if self.hog_concat:
            segs.append("hog")
        if self.num_classes != 7:
            segs.append(f"classes:{self.num_classes}")
        if tuple(self.input_hw) != (48, 48):
            segs.append(f"input:{self.input_hw[0]}x{self.input_hw[1]}")
        return "|".join(segs)

    def with_hidden(self, hidden):
        """Copy with fc widths replaced; an int applies to every fc layer."""
        if isinstance(hidden, int):
            hidden = (hidden,) * len(self.fc_layers)
        if len(hidden) != len(self.fc_layers):
            raise ConfigError(f"{len(hidden)} widths given for {len(self.fc_layers)} fc layers")
        return replace(self, fc_layers=tuple(
            replace(f, width=int(h)) for f, h in zip(self.fc_layers, hidden)))


_CONV_HEAD = re.compile(r"conv:(\d+)x(\d+)x(\d+)$")
_FC_HEAD = re.compile(r"fc:(\d+)$")


def _parse_drop(tok, offset):
    try:
        p = float(tok[4:])
    except ValueError:
        raise ParseError(f"non-numeric dropout value {tok!r}", offset) from None
    if not 0.0 < p <= 1.0:
        raise ParseError(f"dropout keep probability must lie in (0, 1], got {p}", offset)
    return p


def _parse_int(tok, prefix, offset, minimum):
    body = tok[len(prefix):]
    if not body.isdigit():
        raise ParseError(f"non-numeric field {tok!r}", offset)
    value = int(body)
    if value < minimum:
        raise ParseError(f"{tok!r} must be at least {minimum}", offset)
    return value


def _parse_layer(seg, offset):
    tokens = seg.split(",")
    head = tokens[0].strip()
    m = _CONV_HEAD.match(head)
    if m:
        kind = "conv"
        width, kh, kw = (int(g) for g in m.groups())
        if kh != kw:
            raise ParseError(f"only square kernels are supported, got {kh}x{kw}", offset)
        if width < 1 or kh < 1:
            raise ParseError("filter count and kernel must be positive", offset)
        fields = {"kind": kind, "width": width, "kernel": kh}
    else:
        m = _FC_HEAD.match(head)
        if not m:
            raise ParseError(f"unrecognised layer {head!r}", offset)
        kind = "fc"
        fields = {"kind": kind, "width": int(m.group(1))}
        if fields["width"] < 1:
            raise ParseError("hidden width must be positive", offset)

    pos = offset + len(tokens[0]) + 1
    for raw in tokens[1:]:
        tok = raw.strip()
        if kind == "conv" and tok == "sbn" or kind == "fc" and tok == "bn":
            fields["bn"] = True
        elif tok == "pool":
            if kind != "conv":
                raise ParseError("pool is only valid on conv layers", pos)
            fields["pool"] = True
        elif tok.startswith("drop"):
            fields["dropout"] = _parse_drop(tok, pos)
        elif kind == "conv" and re.match(r"s\w*$", tok):
            fields["stride"] = _parse_int(tok, "s", pos, 1)
        elif kind == "conv" and re.match(r"p\w*$", tok):
            fields["pad"] = _parse_int(tok, "p", pos, 0)
        else:
            raise ParseError(f"unknown token {tok!r} for {kind} layer", pos)
        pos += len(raw) + 1
    return LayerSpec(**fields)


def parse_arch(text):
    """Parse an architecture string into an ``ArchSpec``.

    A segment that names a preset (``shallow`` or ``deep``) expands in place,
    so ``"deep|hog"`` is the hybrid deep network.
    """
    text = "|".join(PRESETS.get(seg.strip(), seg) for seg in text.split("|"))
    convs, fcs = [], []
    extras = {}
    offset = 0
    for seg in text.split("|"):
        s = seg.strip()
        where = offset + (len(seg) - len(seg.lstrip()))
        if not s:
            raise ParseError("empty segment", where)
        if s == "hog":
            if "hog_concat" in extras:
                raise ParseError("hog given twice", where)
            extras["hog_concat"] = True
        elif s.startswith("classes:"):
            extras["num_classes"] = _parse_int(s, "classes:", where, 2)
        elif s.startswith("input:"):
            m = re.match(r"input:(\d+)x(\d+)$", s)
            if not m:
                raise ParseError(f"bad input size {s!r}", where)
            extras["input_hw"] = (int(m.group(1)), int(m.group(2)))
        else:
            layer = _parse_layer(s, where)
            if layer.kind == "conv":
                if fcs:
                    raise ParseError("conv layer after fc layer", where)
                convs.append(layer)
            else:
                fcs.append(layer)
        offset += len(seg) + 1
    if not convs:
        raise ParseError("at least one conv layer is required", 0)
    return ArchSpec(tuple(convs), tuple(fcs), **extras)


def infer_shapes(spec):
    """Return per-conv-layer ``(C_in, H, W)`` inputs and the flattened width."""
    C, (H, W) = 1, spec.input_hw
    shapes = []
    for i, layer in enumerate(spec.conv_layers, 1):
        shapes.append((C, H, W))
        H = L.conv_output_size(H, layer.kernel, layer.stride, layer.padding)
        W = L.conv_output_size(W, layer.kernel, layer.stride, layer.padding)
        C = layer.width
        if layer.pool:
            if H % 2 or W % 2:
                raise ConfigError(f"conv{i}: cannot pool odd extent {H}x{W}")
            H, W = H // 2, W // 2
        if H < 1 or W < 1:
            raise ConfigError(f"conv{i}: spatial extent collapses to {H}x{W}")
    return shapes, C * H * W


def hog_config_for(spec):
    H, W = spec.input_hw
    if H != W:
        raise ConfigError("HOG features need square inputs")
    cfg = HogConfig(image_size=H)
    if H % cfg.cell or cfg.blocks_per_side < 1:
        raise ConfigError(f"HOG is undefined for {H}x{W} inputs")
    return cfg


@dataclass
class Caches:
    """Per-layer saved values from one forward pass."""

    token: int
    mode: str
    conv: list = field(default_factory=list)
    fc: list = field(default_factory=list)
    head: tuple = None
    conv_out_shape: tuple = ()
    used: bool = False


class Model:
    """A conv stack, optional HOG concat, fc stack and final affine classifier.

    Parameters live in ``params`` (ordered, deterministic names such as
    ``conv1.W`` or ``fc2.gamma``); BN running statistics live in ``bn``
    keyed by layer name. ``mean_image`` optionally records the training
    mean used to normalise inputs, so checkpoints are self-contained.
    """

    def __init__(self, spec, params, bn, seed=0, mean_image=None):
        self.spec = spec
        self.params = params
        self.bn = bn
        self.seed = seed
        self.mode = "train"
        self.mean_image = mean_image
        self.rng = np.random.default_rng([seed, 1])
        self._token = 0
        self.conv_shapes, self.flat_width = infer_shapes(spec)
        self.hog_dim = hog_config_for(spec).length if spec.hog_concat else 0

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def astype(self, dtype):
        for name, p in self.params.items():
            self.params[name] = p.astype(dtype)
        for st in self.bn.values():
            st.running_mean = st.running_mean.astype(dtype)
            st.running_var = st.running_var.astype(dtype)
        return self

    def num_params(self):
        return sum(p.size for p in self.params.values())

    # -- conv blocks -------------------------------------------------------

    def _conv_block(self, i, h, rng, stop_at_relu=False):
        layer = self.spec.conv_layers[i - 1]
        P = self.params
        cache = {}
        h, cache["conv"] = L.conv_forward(h, P[f"conv{i}.W"], P[f"conv{i}.b"],
                                          layer.stride, layer.padding)
        if layer.bn:
            h, cache["bn"] = L.spatial_batchnorm_forward(
                h, P[f"conv{i}.gamma"], P[f"conv{i}.beta"], self.bn[f"conv{i}"], self.mode)
        h, cache["relu"] = L.relu_forward(h)
        cache["act"] = h
        if stop_at_relu:
            return h, cache
        if layer.dropout is not None:
            h, cache["drop"] = L.dropout_forward(h, layer.dropout, self.mode, rng)
        if layer.pool:
            h, cache["pool"] = L.maxpool_forward(h)
        return h, cache

    def _conv_block_backward(self, i, dh, cache, grads):
        if "pool" in cache:
            dh = L.maxpool_backward(dh, cache["pool"])
        if "drop" in cache:
            dh = L.dropout_backward(dh, cache["drop"])
        dh = L.relu_backward(dh, cache["relu"])
        if "bn" in cache:
            dh, grads[f"conv{i}.gamma"], grads[f"conv{i}.beta"] = \
                L.spatial_batchnorm_backward(dh, cache["bn"])
        dh, grads[f"conv{i}.W"], grads[f"conv{i}.b"] = L.conv_backward(dh, cache["conv"])
        return dh

    # -- whole model ---------------------------------------------------------

    def _check_input(self, x, hog):
        C, H, W = self.conv_shapes[0]
        if x.ndim != 4 or x.shape[1:] != (C, H, W):
            raise ShapeError(f"expected input [N,{C},{H},{W}], got {x.shape}")
        if self.spec.hog_concat:
            if hog is None:
                raise ShapeError("hybrid model needs HOG features")
            if hog.shape != (x.shape[0], self.hog_dim):
                raise ShapeError(f"expected HOG [{x.shape[0]},{self.hog_dim}], got {hog.shape}")
        elif hog is not None:
            raise ShapeError("HOG features given to a non-hybrid model")

    def forward(self, x, hog=None, rng=None):
        """Class scores for ``x`` [N,1,H,W] (no softmax) plus backward caches.

        ``rng`` overrides the model's dropout generator for this pass.
        """
        self._check_input(x, hog)
        rng = self.rng if rng is None else rng
        x = x.astype(self.dtype, copy=False)
        self._token += 1
        caches = Caches(self._token, self.mode)
        h = x
        for i in range(1, len(self.spec.conv_layers) + 1):
            h, c = self._conv_block(i, h, rng)
            caches.conv.append(c)
        caches.conv_out_shape = h.shape
        h = h.reshape(h.shape[0], -1)
        if self.spec.hog_concat:
            h = concat_features(h, hog)
        P = self.params
        for j, layer in enumerate(self.spec.fc_layers, 1):
            c = {}
            h, c["affine"] = L.affine_forward(h, P[f"fc{j}.W"], P[f"fc{j}.b"])
            if layer.bn:
                h, c["bn"] = L.batchnorm_forward(
                    h, P[f"fc{j}.gamma"], P[f"fc{j}.beta"], self.bn[f"fc{j}"], self.mode)
            h, c["relu"] = L.relu_forward(h)
            if layer.dropout is not None:
                h, c["drop"] = L.dropout_forward(h, layer.dropout, self.mode, rng)
            caches.fc.append(c)
        scores, caches.head = L.affine_forward(h, P["out.W"], P["out.b"])
        return scores, caches

    def backward(self, dscores, caches, return_dx=False):
        """Gradients for every parameter, keyed like ``params``.

        HOG inputs are constants and receive no gradient.
        """
        if caches is None or caches.token != self._token or caches.used:
            raise UsageError("backward needs the caches of the most recent forward pass")
        caches.used = True
        grads = {}
        dh, grads["out.W"], grads["out.b"] = L.affine_backward(dscores, caches.head)
        for j in range(len(self.spec.fc_layers), 0, -1):
            c = caches.fc[j - 1]
            if "drop" in c:
                dh = L.dropout_backward(dh, c["drop"])
            dh = L.relu_backward(dh, c["relu"])
            if "bn" in c:
                dh, grads[f"fc{j}.gamma"], grads[f"fc{j}.beta"] = L.batchnorm_backward(dh, c["bn"])
            dh, grads[f"fc{j}.W"], grads[f"fc{j}.b"] = L.affine_backward(dh, c["affine"])
        shape = caches.conv_out_shape
        dh = dh[:, :int(np.prod(shape[1:]))].reshape(shape)
        for i in range(len(self.spec.conv_layers), 0, -1):
            dh = self._conv_block_backward(i, dh, caches.conv[i - 1], grads)
        grads = {name: grads[name] for name in self.params}
        return (grads, dh) if return_dx else grads

    def conv_activations(self, x):
        """Post-ReLU activation of every conv layer, in layer order."""
        acts = []
        h = x.astype(self.dtype, copy=False)
        for i in range(1, len(self.spec.conv_layers) + 1):
            h, c = self._conv_block(i, h, self.rng)
            acts.append(c["act"])
        return acts

    def activation_and_input_grad(self, x, layer, dact_fn):
        """Activation of conv ``layer`` and d(objective)/dx for DeepDream.

        ``dact_fn`` maps the activation to the upstream gradient.
        """
        h = x.astype(self.dtype, copy=False)
        caches = []
        for i in range(1, layer):
            h, c = self._conv_block(i, h, self.rng)
            caches.append(c)
        act, c = self._conv_block(layer, h, self.rng, stop_at_relu=True)
        caches.append(c)
        dh = dact_fn(act)
        scratch = {}
        for i in range(layer, 0, -1):
            dh = self._conv_block_backward(i, dh, caches[i - 1], scratch)
        return act, dh


def init_params(spec, seed, dtype=np.float64, weight_scale=1.0):
    """He-normal weights, zero biases, unit gammas and zero betas.

    The final classifier is drawn at 1% of its He scale so an untrained
    network starts near uniform class probabilities.
    """
    rng = np.random.default_rng(seed)
    shapes, flat = infer_shapes(spec)
    params, bn = {}, {}
    for i, ((C, _, _), layer) in enumerate(zip(shapes, spec.conv_layers), 1):
        fan_in = C * layer.kernel ** 2
        params[f"conv{i}.W"] = weight_scale * np.sqrt(2.0 / fan_in) * rng.standard_normal(
            (layer.width, C, layer.kernel, layer.kernel))
        params[f"conv{i}.b"] = np.zeros(layer.width)
        if layer.bn:
            params[f"conv{i}.gamma"] = np.ones(layer.width)
            params[f"conv{i}.beta"] = np.zeros(layer.width)
            bn[f"conv{i}"] = L.BatchNormState.fresh(layer.width, dtype)
    width = flat + (hog_config_for(spec).length if spec.hog_concat else 0)
    for j, layer in enumerate(spec.fc_layers, 1):
        params[f"fc{j}.W"] = weight_scale * np.sqrt(2.0 / width) * rng.standard_normal(
            (width, layer.width))
        params[f"fc{j}.b"] = np.zeros(layer.width)
        if layer.bn:
            params[f"fc{j}.gamma"] = np.ones(layer.width)
            params[f"fc{j}.beta"] = np.zeros(layer.width)
            bn[f"fc{j}"] = L.BatchNormState.fresh(layer.width, dtype)
        width = layer.width
    params["out.W"] = weight_scale * 0.01 * np.sqrt(2.0 / width) * rng.standard_normal(
        (width, spec.num_classes))
    params["out.b"] = np.zeros(spec.num_classes)
    return {k: v.astype(dtype) for k, v in params.items()}, bn


def build_model(spec, seed=0, dtype=np.float64, weight_scale=1.0):
    if isinstance(spec, str):
        spec = parse_arch(spec)
    params, bn = init_params(spec, seed, dtype, weight_scale)
    return Model(spec, params, bn, seed)


def resolve_arch(arch, hybrid=False, input_hw=None):
    """Preset name or DSL string to ``ArchSpec``; ``hybrid`` forces HOG concat."""
    spec = arch if isinstance(arch, ArchSpec) else parse_arch(arch)
    if hybrid and not spec.hog_concat:
        spec = replace(spec, hog_concat=True)
    if input_hw is not None:
        spec = replace(spec, input_hw=tuple(input_hw))
    return spec
