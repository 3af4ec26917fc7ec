"""Fixed-weight networks: the ``.bpgm`` container and synthetic constructors.

The generator, encoder, discriminator and feature network all use the same
:class:`GeneratorModel` type; only their input/output shape conventions
differ. Weights are held at float32 precision (the on-disk precision) so a
model built in memory and the same model loaded from disk are bit-identical.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff
from .autodiff import KINDS, LayerSpec
from .errors import (
    BadMagicError,
    DigestMismatchError,
    FormatError,
    InputError,
    ShapeChainError,
    ShapeError,
    TruncatedError,
    UnsupportedVersionError,
)

MAGIC = b"BPGM"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

# weight arrays stored per kind, in blob order
_WEIGHT_ORDER = {
    "dense": ("W", "b"),
    "conv2d": ("W", "b"),
    "transposed-conv2d": ("W", "b"),
    "frozen-affine-norm": ("scale", "shift"),
}


def fnv1a64(data):
    """64-bit FNV-1a hash of ``data``."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def _round_layer(layer):
    hyper = dict(layer.hyper)
    if layer.kind == "leaky-relu":
        hyper["slope"] = float(np.float32(hyper["slope"]))
    return LayerSpec(layer.kind, layer.in_shape, hyper, {k: _f32(v) for k, v in layer.weights.items()})


@dataclass(frozen=True, eq=False)
class GeneratorModel:
    layers: tuple
    model_id: bytes

    @classmethod
    def from_layers(cls, layers):
        """Build a model, rounding weights to storage precision and computing its id."""
        layers = tuple(_round_layer(layer) for layer in layers)
        autodiff.chain_shapes(layers)
        blob = _serialize(layers)
        return cls(layers, blob[-8:])

    @property
    def input_shape(self):
        return self.layers[0].in_shape

    @property
    def output_shape(self):
        return self.layers[-1].out_shape

    @property
    def input_dim(self):
        return int(np.prod(self.input_shape))

    @property
    def output_size(self):
        return int(np.prod(self.output_shape))

    def forward(self, x):
        return autodiff.forward(self.layers, x)

    def __call__(self, x):
        return autodiff.forward(self.layers, x)[0]

    def __eq__(self, other):
        if not isinstance(other, GeneratorModel):
            return NotImplemented
        return self.model_id == other.model_id and self.layers == other.layers

    def __hash__(self):
        return hash(self.model_id)

    def to_bytes(self):
        return save_model(self)

    def save(self, path):
        Path(path).write_bytes(save_model(self))

    @classmethod
    def load(cls, path):
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read model file {path}: {exc.strerror}", module="models") from exc
        return load_model(data)


# --- serialization ----------------------------------------------------------


def _shape_block(shape):
    return struct.pack("<B", len(shape)) + b"".join(struct.pack("<I", d) for d in shape)


def _hyper_block(layer):
    h = layer.hyper
    out = _shape_block(layer.in_shape)
    if layer.kind == "dense":
        out += struct.pack("<I", int(h["out"]))
    elif layer.kind in autodiff.CONV_KINDS:
        out += struct.pack("<HBBBB", int(h["out_channels"]), int(h["kh"]), int(h["kw"]), int(h["stride"]), int(h["padding"]))
        if layer.kind == "transposed-conv2d":
            out += struct.pack("<II", int(h["out_h"]), int(h["out_w"]))
    elif layer.kind == "leaky-relu":
        out += struct.pack("<f", float(h["slope"]))
    elif layer.kind == "residual-add":
        out += struct.pack("<H", int(h["source"]))
    elif layer.kind == "reshape":
        out += _shape_block(tuple(h["shape"]))
    return out


def _serialize(layers):
    parts = [MAGIC, struct.pack("<BH", VERSION, len(layers))]
    for layer in layers:
        parts.append(struct.pack("<B", KINDS.index(layer.kind)))
        parts.append(_hyper_block(layer))
        blob = b"".join(
            np.ascontiguousarray(layer.weights[name], dtype="<f4").tobytes()
            for name in _WEIGHT_ORDER.get(layer.kind, ())
        )
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    body = b"".join(parts)
    return body + struct.pack("<Q", fnv1a64(body))


def save_model(model):
    """Serialize ``model`` to ``.bpgm`` bytes."""
    return _serialize(model.layers)


class _Reader:
    def __init__(self, data, end):
        self.data = data
        self.pos = 0
        self.end = end

    def take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > self.end:
            raise TruncatedError("unexpected end of model data", offset=self.pos, module="models")
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return vals

    def raw(self, size):
        if self.pos + size > self.end:
            raise TruncatedError("weight blob runs past end of model data", offset=self.pos, module="models")
        out = self.data[self.pos : self.pos + size]
        self.pos += size
        return out

    def shape(self):
        (rank,) = self.take("<B")
        return tuple(self.take("<I")[0] for _ in range(rank))


def load_model(data):
    """Parse ``.bpgm`` bytes into a :class:`GeneratorModel`."""
    data = bytes(data)
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}", offset=0, module="models")
    if len(data) < 5:
        raise TruncatedError("missing version byte", offset=4, module="models")
    if data[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported model version {data[4]}", offset=4, module="models")
    if len(data) < 4 + 1 + 2 + 8:
        raise DigestMismatchError("model data too short to carry a digest", offset=len(data), module="models")
    (stored,) = struct.unpack("<Q", data[-8:])
    if fnv1a64(data[:-8]) != stored:
        raise DigestMismatchError("model digest mismatch", offset=len(data) - 8, module="models")

    r = _Reader(data, len(data) - 8)
    r.pos = 5
    (count,) = r.take("<H")
    layers = []
    for i in range(count):
        start = r.pos
        (tag,) = r.take("<B")
        if tag >= len(KINDS):
            raise FormatError(f"layer {i}: unknown kind tag {tag}", offset=start, module="models")
        kind = KINDS[tag]
        in_shape = r.shape()
        hyper = {}
        if kind == "dense":
            (hyper["out"],) = r.take("<I")
        elif kind in autodiff.CONV_KINDS:
            keys = ("out_channels", "kh", "kw", "stride", "padding")
            hyper.update(zip(keys, r.take("<HBBBB")))
            if kind == "transposed-conv2d":
                hyper["out_h"], hyper["out_w"] = r.take("<II")
        elif kind == "leaky-relu":
            (hyper["slope"],) = r.take("<f")
        elif kind == "residual-add":
            (hyper["source"],) = r.take("<H")
        elif kind == "reshape":
            hyper["shape"] = r.shape()
        (blob_len,) = r.take("<Q")
        blob = np.frombuffer(r.raw(blob_len), dtype="<f4").astype(np.float64)
        weights = {}
        try:
            weights = _split_weights(kind, in_shape, hyper, blob)
            layer = LayerSpec(kind, in_shape, hyper, weights)
        except (ShapeError, KeyError, ValueError) as exc:
            raise ShapeChainError(f"layer {i}: {exc}", offset=start, module="models") from exc
        layers.append(layer)
    if r.pos != r.end:
        raise FormatError("trailing bytes after last layer", offset=r.pos, module="models")
    try:
        autodiff.chain_shapes(layers)
    except ShapeError as exc:
        raise ShapeChainError(str(exc), module="models") from exc
    return GeneratorModel(tuple(layers), data[-8:])


def _split_weights(kind, in_shape, hyper, blob):
    names = _WEIGHT_ORDER.get(kind, ())
    if not names:
        if blob.size:
            raise ValueError(f"{kind} carries no weights but blob has {blob.size} values")
        return {}
    if kind == "dense":
        shapes = [(hyper["out"], in_shape[0]), (hyper["out"],)]
    elif kind == "conv2d":
        shapes = [(hyper["out_channels"], in_shape[0], hyper["kh"], hyper["kw"]), (hyper["out_channels"],)]
    elif kind == "transposed-conv2d":
        shapes = [(in_shape[0], hyper["out_channels"], hyper["kh"], hyper["kw"]), (hyper["out_channels"],)]
    else:
        shapes = [(in_shape[0],), (in_shape[0],)]
    sizes = [int(np.prod(s)) for s in shapes]
    if sum(sizes) != blob.size:
        raise ValueError(f"weight blob has {blob.size} values, expected {sum(sizes)}")
    out, off = {}, 0
    for name, shape, size in zip(names, shapes, sizes):
        out[name] = blob[off : off + size].reshape(shape)
        off += size
    return out


# --- constructors -------------------------------------------------------------


def dense(w, b=None):
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[0]) if b is None else b
    return LayerSpec("dense", (w.shape[1],), {"out": w.shape[0]}, {"W": w, "b": b})


def reshape(in_shape, out_shape):
    return LayerSpec("reshape", tuple(in_shape), {"shape": tuple(out_shape)})


def activation(kind, shape, slope=None):
    hyper = {"slope": slope} if kind == "leaky-relu" else {}
    return LayerSpec(kind, tuple(shape), hyper)


def conv(in_shape, w, b=None, stride=1, padding=0):
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[0]) if b is None else b
    hyper = {"out_channels": w.shape[0], "kh": w.shape[2], "kw": w.shape[3], "stride": stride, "padding": padding}
    return LayerSpec("conv2d", tuple(in_shape), hyper, {"W": w, "b": b})


def transposed_conv(in_shape, w, out_hw, b=None, stride=1, padding=0):
    w = np.asarray(w, dtype=np.float64)
    b = np.zeros(w.shape[1]) if b is None else b
    hyper = {
        "out_channels": w.shape[1], "kh": w.shape[2], "kw": w.shape[3],
        "stride": stride, "padding": padding, "out_h": out_hw[0], "out_w": out_hw[1],
    }
    return LayerSpec("transposed-conv2d", tuple(in_shape), hyper, {"W": w, "b": b})


def _with_reshape(layers, flat, shape):
    shape = tuple(shape)
    if shape != (flat,):
        layers.append(reshape((flat,), shape))
    return layers


@dataclass(frozen=True)
class SyntheticModelSpec:
    kind: str
    latent_dim: int
    signal_shape: tuple
    depth: int = 2
    width: int = 32
    seed: int = 0


def orthonormal_matrix(n, d, seed):
    """``n x d`` matrix with orthonormal columns, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((n, d)))
    return q * np.sign(np.diag(r))


def dct_matrix(n, d):
    """First ``d`` orthonormal type-II DCT basis vectors of length ``n`` as columns."""
    i = np.arange(n)[:, None]
    k = np.arange(d)[None, :]
    c = np.sqrt(2.0 / n) * np.cos(np.pi * (2 * i + 1) * k / (2 * n))
    c[:, 0] = np.sqrt(1.0 / n)
    return c


def make_synthetic(spec):
    """Deterministic stand-in generator described by ``spec``."""
    d = int(spec.latent_dim)
    shape = tuple(int(s) for s in spec.signal_shape)
    n = int(np.prod(shape)) if shape else 0
    if d <= 0 or n <= 0:
        raise ShapeError(f"latent_dim and signal size must be positive, got {d} and {shape}", module="models")
    if spec.kind == "orthonormal-linear":
        if d > n:
            raise ShapeError(f"orthonormal-linear needs latent_dim <= signal size ({d} > {n})", module="models")
        layers = [dense(orthonormal_matrix(n, d, spec.seed))]
    elif spec.kind == "dct-decoder":
        if d > n:
            raise ShapeError(f"dct-decoder needs latent_dim <= signal size ({d} > {n})", module="models")
        layers = [dense(dct_matrix(n, d))]
    elif spec.kind == "random-mlp":
        if spec.depth < 1 or spec.width < 1:
            raise ShapeError("random-mlp needs depth >= 1 and width >= 1", module="models")
        rng = np.random.default_rng(spec.seed)
        dims = [d] + [int(spec.width)] * (spec.depth - 1) + [n]
        layers = []
        for li, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            w = rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
            b = 0.1 * rng.standard_normal(fan_out)
            layers.append(dense(w, b))
            if li < spec.depth - 1:
                layers.append(activation("tanh", (fan_out,)))
    else:
        raise ShapeError(f"unknown synthetic kind {spec.kind!r}", module="models")
    return GeneratorModel.from_layers(_with_reshape(layers, n, shape))


def linear_matrix(model):
    """Return ``(A, b)`` with ``model(z) = reshape(A z + b)`` for purely affine models."""
    d = model.input_dim
    if all(l.kind in ("dense", "reshape") for l in model.layers):
        # compose the weights directly; reshapes are identities on flat vectors
        a, base = np.eye(d), np.zeros(d)
        for l in model.layers:
            if l.kind == "dense":
                a, base = l.weights["W"] @ a, l.weights["W"] @ base + l.weights["b"]
        return a, base
    base = model(np.zeros(model.input_shape)).ravel()
    a = np.empty((base.size, d))
    e = np.zeros(d)
    for j in range(d):
        e[j] = 1.0
        a[:, j] = model(e.reshape(model.input_shape)).ravel() - base
        e[j] = 0.0
    return a, base


def pseudo_inverse_encoder(generator):
    """Encoder mapping a signal to the least-squares latent of an affine generator."""
    a, b = linear_matrix(generator)
    pinv = np.linalg.pinv(a)
    layers = []
    if len(generator.output_shape) != 1:
        layers.append(reshape(generator.output_shape, (generator.output_size,)))
    layers.append(dense(pinv, -pinv @ b))
    return GeneratorModel.from_layers(layers)


def zero_encoder(signal_shape, latent_dim):
    n = int(np.prod(signal_shape))
    layers = [] if len(signal_shape) == 1 else [reshape(signal_shape, (n,))]
    layers.append(dense(np.zeros((latent_dim, n))))
    return GeneratorModel.from_layers(layers)


def random_critic(signal_shape, seed=0, hidden=16):
    """Small scalar-output network usable as a discriminator."""
    rng = np.random.default_rng(seed)
    n = int(np.prod(signal_shape))
    layers = [] if len(signal_shape) == 1 else [reshape(signal_shape, (n,))]
    layers.append(dense(rng.standard_normal((hidden, n)) / np.sqrt(n), 0.1 * rng.standard_normal(hidden)))
    layers.append(activation("leaky-relu", (hidden,), slope=0.2))
    layers.append(dense(rng.standard_normal((1, hidden)) / np.sqrt(hidden)))
    return GeneratorModel.from_layers(layers)


def random_feature_net(signal_shape, seed=0, channels=(4, 4)):
    """Conv feature extractor over a (C, H, W) or (H, W) signal.

    Conv layer positions (usable as feature taps) are returned alongside.
    """
    rng = np.random.default_rng(seed)
    shape = tuple(signal_shape)
    layers = []
    if len(shape) == 2:
        layers.append(reshape(shape, (1,) + shape))
        shape = (1,) + shape
    taps = []
    c_in = shape[0]
    for c_out in channels:
        w = rng.standard_normal((c_out, c_in, 3, 3)) / np.sqrt(9 * c_in)
        layer = conv(shape, w, 0.05 * rng.standard_normal(c_out), stride=1, padding=1)
        taps.append(len(layers))
        layers.append(layer)
        layers.append(activation("leaky-relu", layer.out_shape, slope=0.2))
        shape, c_in = layer.out_shape, c_out
    return GeneratorModel.from_layers(layers), taps
