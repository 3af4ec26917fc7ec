"""Reverse-mode differentiation over fixed-weight layer chains.

Only gradients with respect to the chain *input* are produced; weights are
constants. A model is an ordered list of :class:`LayerSpec`; the only
non-sequential edge allowed is ``residual-add``, which adds the output of an
earlier node to the current activation.

Activation indexing: ``acts[0]`` is the chain input and ``acts[i + 1]`` is the
output of layer ``i``. All arithmetic is carried out in float64.
"""

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, TapeError

KINDS = (
    "dense",
    "conv2d",
    "transposed-conv2d",
    "relu",
    "leaky-relu",
    "tanh",
    "sigmoid",
    "frozen-affine-norm",
    "residual-add",
    "reshape",
)

ELEMENTWISE = ("relu", "leaky-relu", "tanh", "sigmoid")
CONV_KINDS = ("conv2d", "transposed-conv2d")


def _conv_out(size, k, stride, pad):
    return (size + 2 * pad - k) // stride + 1


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One fixed-weight layer.

    ``hyper`` holds the kind-specific integer/real hyperparameters and
    ``weights`` the named weight arrays (see ``docs/FORMATS.md``).
    """

    kind: str
    in_shape: tuple
    hyper: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ShapeError(f"unknown layer kind {self.kind!r}", module="autodiff")
        object.__setattr__(self, "in_shape", tuple(int(d) for d in self.in_shape))
        object.__setattr__(
            self,
            "weights",
            {k: np.asarray(v, dtype=np.float64) for k, v in self.weights.items()},
        )
        for w in self.weights.values():
            w.setflags(write=False)
        if any(d <= 0 for d in self.in_shape):
            raise ShapeError(f"non-positive input dimension {self.in_shape}", module="autodiff")
        object.__setattr__(self, "out_shape", self._check())

    def __eq__(self, other):
        if not isinstance(other, LayerSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.in_shape == other.in_shape
            and self.hyper == other.hyper
            and self.weights.keys() == other.weights.keys()
            and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights)
        )

    def _need(self, name, shape):
        w = self.weights.get(name)
        if w is None or w.shape != tuple(shape):
            got = None if w is None else w.shape
            raise ShapeError(
                f"{self.kind} weight {name!r} must have shape {tuple(shape)}, got {got}",
                module="autodiff",
            )

    def _check(self):
        s = self.in_shape
        h = self.hyper
        if self.kind == "dense":
            if len(s) != 1:
                raise ShapeError("dense expects a flat input", module="autodiff")
            out = int(h["out"])
            self._need("W", (out, s[0]))
            self._need("b", (out,))
            return (out,)
        if self.kind in CONV_KINDS:
            if len(s) != 3:
                raise ShapeError(f"{self.kind} expects (C, H, W) input", module="autodiff")
            c_out, kh, kw = int(h["out_channels"]), int(h["kh"]), int(h["kw"])
            stride, pad = int(h["stride"]), int(h["padding"])
            if stride < 1 or pad < 0:
                raise ShapeError("stride must be >= 1 and padding >= 0", module="autodiff")
            if self.kind == "conv2d":
                ho, wo = _conv_out(s[1], kh, stride, pad), _conv_out(s[2], kw, stride, pad)
                if ho < 1 or wo < 1:
                    raise ShapeError("conv2d kernel larger than padded input", module="autodiff")
                self._need("W", (c_out, s[0], kh, kw))
                self._need("b", (c_out,))
                return (c_out, ho, wo)
            ho, wo = int(h["out_h"]), int(h["out_w"])
            if _conv_out(ho, kh, stride, pad) != s[1] or _conv_out(wo, kw, stride, pad) != s[2]:
                raise ShapeError(
                    f"transposed-conv2d output {(ho, wo)} is not an adjoint size for input {s[1:]}",
                    module="autodiff",
                )
            self._need("W", (s[0], c_out, kh, kw))
            self._need("b", (c_out,))
            return (c_out, ho, wo)
        if self.kind == "leaky-relu":
            float(h["slope"])
            return s
        if self.kind == "frozen-affine-norm":
            self._need("scale", (s[0],))
            self._need("shift", (s[0],))
            if np.any(self.weights["scale"] == 0):
                raise ShapeError("frozen-affine-norm scale entries must be nonzero", module="autodiff")
            return s
        if self.kind == "residual-add":
            if int(h["source"]) < 0:
                raise ShapeError("residual source must be a non-negative activation index", module="autodiff")
            return s
        if self.kind == "reshape":
            out = tuple(int(d) for d in h["shape"])
            if int(np.prod(out)) != int(np.prod(s)):
                raise ShapeError(f"cannot reshape {s} to {out}", module="autodiff")
            return out
        return s


# --- convolution kernels --------------------------------------------------


def conv2d(x, w, stride, pad):
    """Cross-correlation of ``x`` (C, H, W) with ``w`` (O, C, kh, kw)."""
    kh, kw = w.shape[2:]
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    return np.einsum("chwij,ocij->ohw", win, w, optimize=True)


def conv2d_adjoint(g, w, stride, pad, in_hw):
    """Adjoint of :func:`conv2d` with respect to its input."""
    c = w.shape[1]
    kh, kw = w.shape[2:]
    h, wd = in_hw
    ho, wo = g.shape[1:]
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            xp[:, i : i + stride * ho : stride, j : j + stride * wo : stride] += np.einsum(
                "ohw,oc->chw", g, w[:, :, i, j]
            )
    return xp[:, pad : pad + h, pad : pad + wd]


# --- per-kind forward / backward ------------------------------------------


def _forward_layer(layer, x, acts):
    k, h, wts = layer.kind, layer.hyper, layer.weights
    if k == "dense":
        return wts["W"] @ x + wts["b"], x
    if k == "conv2d":
        y = conv2d(x, wts["W"], int(h["stride"]), int(h["padding"]))
        return y + wts["b"][:, None, None], None
    if k == "transposed-conv2d":
        y = conv2d_adjoint(x, wts["W"], int(h["stride"]), int(h["padding"]), (int(h["out_h"]), int(h["out_w"])))
        return y + wts["b"][:, None, None], None
    if k == "relu":
        mask = x > 0
        return np.where(mask, x, 0.0), mask
    if k == "leaky-relu":
        mask = x > 0
        return np.where(mask, x, float(h["slope"]) * x), mask
    if k == "tanh":
        y = np.tanh(x)
        return y, y
    if k == "sigmoid":
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        return y, y
    if k == "frozen-affine-norm":
        bshape = (-1,) + (1,) * (x.ndim - 1)
        return x * wts["scale"].reshape(bshape) + wts["shift"].reshape(bshape), None
    if k == "residual-add":
        src = int(h["source"])
        return x + acts[src], None
    if k == "reshape":
        return x.reshape(layer.out_shape), None
    raise AssertionError(k)


def _backward_layer(layer, g, cache):
    k, h, wts = layer.kind, layer.hyper, layer.weights
    if k == "dense":
        return wts["W"].T @ g
    if k == "conv2d":
        return conv2d_adjoint(g, wts["W"], int(h["stride"]), int(h["padding"]), layer.in_shape[1:])
    if k == "transposed-conv2d":
        return conv2d(g, wts["W"], int(h["stride"]), int(h["padding"]))
    if k == "relu":
        return np.where(cache, g, 0.0)
    if k == "leaky-relu":
        return np.where(cache, g, float(h["slope"]) * g)
    if k == "tanh":
        return g * (1.0 - cache * cache)
    if k == "sigmoid":
        return g * cache * (1.0 - cache)
    if k == "frozen-affine-norm":
        return g * wts["scale"].reshape((-1,) + (1,) * (g.ndim - 1))
    if k == "residual-add":
        return g
    if k == "reshape":
        return g.reshape(layer.in_shape)
    raise AssertionError(k)


def chain_shapes(layers, in_shape=None):
    """Validate that ``layers`` chain and return the list of activation shapes."""
    if not layers:
        raise ShapeError("a model needs at least one layer", module="autodiff")
    shapes = [tuple(in_shape) if in_shape is not None else layers[0].in_shape]
    for i, layer in enumerate(layers):
        if layer.in_shape != shapes[-1]:
            raise ShapeError(f"expects input {layer.in_shape}, previous output is {shapes[-1]}", layer=i)
        if layer.kind == "residual-add":
            src = int(layer.hyper["source"])
            if src > i or shapes[src] != layer.in_shape:
                raise ShapeError(f"residual source {src} is not an earlier activation of shape {layer.in_shape}", layer=i)
        shapes.append(layer.out_shape)
    return shapes


@dataclass
class Tape:
    """Record of one forward pass, consumed by a single backward pass."""

    layers: tuple
    acts: list
    caches: list
    terminal: float = None
    grad_output: np.ndarray = None
    consumed: bool = False

    @property
    def output(self):
        return self.acts[-1]

    def attach(self, value, grad_output):
        """Attach a scalar objective of the output and its gradient."""
        value = np.asarray(value)
        if value.ndim != 0 and value.size != 1:
            raise TapeError(f"terminal must be scalar, got shape {value.shape}")
        grad_output = np.asarray(grad_output, dtype=np.float64)
        if grad_output.shape != self.output.shape:
            raise TapeError(f"objective gradient shape {grad_output.shape} != output shape {self.output.shape}")
        self.terminal = float(value)
        self.grad_output = grad_output


def forward(layers, x):
    """Apply ``layers`` to ``x``; return ``(output, tape)``."""
    x = np.asarray(x, dtype=np.float64)
    if not layers:
        raise ShapeError("a model needs at least one layer", module="autodiff")
    acts = [x]
    caches = []
    for i, layer in enumerate(layers):
        if acts[-1].shape != layer.in_shape:
            raise ShapeError(f"input shape {acts[-1].shape} does not match {layer.in_shape}", layer=i, module="autodiff")
        y, cache = _forward_layer(layer, acts[-1], acts)
        acts.append(y)
        caches.append(cache)
    return acts[-1], Tape(tuple(layers), acts, caches)


def vjp(tape, grad_output=None, act_grads=None):
    """Pull gradients back to the chain input.

    ``grad_output`` is d(loss)/d(output); ``act_grads`` optionally maps an
    activation index to an extra gradient injected at that node (used when a
    loss reads intermediate activations).
    """
    if tape.consumed:
        raise TapeError("tape already consumed")
    tape.consumed = True
    n = len(tape.layers)
    grads = [None] * (n + 1)
    if grad_output is not None:
        grads[n] = np.asarray(grad_output, dtype=np.float64)
    for idx, g in (act_grads or {}).items():
        g = np.asarray(g, dtype=np.float64)
        grads[idx] = g if grads[idx] is None else grads[idx] + g
    for i in range(n - 1, -1, -1):
        g = grads[i + 1]
        if g is None:
            continue
        layer = tape.layers[i]
        gi = _backward_layer(layer, g, tape.caches[i])
        grads[i] = gi if grads[i] is None else grads[i] + gi
        if layer.kind == "residual-add":
            src = int(layer.hyper["source"])
            grads[src] = g if grads[src] is None else grads[src] + g
    if grads[0] is None:
        return np.zeros_like(tape.acts[0])
    return grads[0]


def backward_input(tape):
    """Gradient of the attached scalar objective with respect to the input."""
    if tape.consumed:
        raise TapeError("tape already consumed")
    if tape.terminal is None:
        raise TapeError("tape has no scalar objective attached")
    return vjp(tape, tape.grad_output)
