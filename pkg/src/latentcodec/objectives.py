"""Compression-time objectives F(x, G(z)) and their gradients.

An *objective* here is any callable ``f(x, y) -> (value, grad_y)`` where ``x``
is the target signal and ``y = G(z)`` the generator output. Gradients with
respect to the latent are obtained by pulling ``grad_y`` back through the
generator tape (:func:`value_and_grad`).

Images are ``(H, W)`` or ``(C, H, W)`` arrays; MS-SSIM is evaluated per
channel and averaged.
"""

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import autodiff
from .errors import ShapeError
from .models import GeneratorModel

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5


def _same_shape(x, y, what):
    if x.shape != y.shape:
        raise ShapeError(f"{what}: shape mismatch {x.shape} vs {y.shape}", module="objectives")


def mse(x, y):
    """Mean squared difference of two equally shaped arrays."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y, "mse")
    d = x - y
    return float(np.mean(d * d))


def mse_objective(x, y):
    """MSE as an objective, with its gradient in ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y, "mse")
    d = y - x
    return float(np.mean(d * d)), 2.0 * d / d.size


# --- MS-SSIM ---------------------------------------------------------------


@dataclass
class ImageObjectiveConfig:
    lambda3: float = 1.0
    gamma: float = 0.1
    msssim_scales: int = 5
    data_range: float = 2.0
    c1: Optional[float] = None
    c2: Optional[float] = None
    use_discriminator: bool = False
    discriminator: Optional[GeneratorModel] = None

    def __post_init__(self):
        if self.lambda3 < 0 or self.gamma < 0:
            raise ValueError("lambda3 and gamma must be nonnegative")
        if self.msssim_scales < 1:
            raise ValueError("msssim_scales must be positive")
        if self.use_discriminator and self.discriminator is None:
            raise ValueError("use_discriminator requires a discriminator model")

    @property
    def C1(self):
        return self.c1 if self.c1 is not None else (0.01 * self.data_range) ** 2

    @property
    def C2(self):
        return self.c2 if self.c2 is not None else (0.03 * self.data_range) ** 2


def gaussian_window(size=WINDOW_SIZE, sigma=WINDOW_SIGMA):
    t = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(t * t) / (2 * sigma * sigma))
    return k / k.sum()


def _filt(a, k):
    a = sliding_window_view(a, k.size, axis=0) @ k
    return sliding_window_view(a, k.size, axis=1) @ k


def _filt_adj(g, k):
    p = k.size - 1
    return _filt(np.pad(g, p), k[::-1])


def _down(a):
    h, w = a.shape[0] // 2, a.shape[1] // 2
    return a[: 2 * h, : 2 * w].reshape(h, 2, w, 2).mean(axis=(1, 3))


def _down_adj(g, shape):
    out = np.zeros(shape)
    h, w = g.shape
    out[: 2 * h, : 2 * w] = np.repeat(np.repeat(g / 4.0, 2, axis=0), 2, axis=1)
    return out


def min_msssim_size(scales):
    return WINDOW_SIZE * 2 ** (scales - 1)


def max_msssim_scales(side, limit=5):
    """Largest scale count (at most ``limit``) whose coarsest level still fits the window; 0 if none."""
    scales = limit
    while scales > 0 and min_msssim_size(scales) > side:
        scales -= 1
    return scales


def _as_channels(a):
    if a.ndim == 2:
        return a[None]
    if a.ndim == 3:
        return a
    raise ShapeError(f"msssim expects (H, W) or (C, H, W), got shape {a.shape}", module="objectives")


def _msssim_channel(x, y, scales, c1, c2, k, need_grad):
    xs, ys = [x], [y]
    for _ in range(scales - 1):
        xs.append(_down(xs[-1]))
        ys.append(_down(ys[-1]))

    factors, partials = [], []
    for j, (xj, yj) in enumerate(zip(xs, ys)):
        mx, my = _filt(xj, k), _filt(yj, k)
        sxx = _filt(xj * xj, k) - mx * mx
        syy = _filt(yj * yj, k) - my * my
        sxy = _filt(xj * yj, k) - mx * my
        a = 2 * sxy + c2
        b = sxx + syy + c2
        n = a.size
        factors.append(np.mean(a / b))
        if need_grad:
            g = (
                xj * _filt_adj(2.0 / b, k)
                - _filt_adj(2.0 * mx / b, k)
                - 2.0 * yj * _filt_adj(a / (b * b), k)
                + _filt_adj(2.0 * my * a / (b * b), k)
            ) / n
            partials.append((j, g))
        if j == scales - 1:
            p = 2 * mx * my + c1
            q = mx * mx + my * my + c1
            factors.append(np.mean(p / q))
            if need_grad:
                g = _filt_adj(2.0 * mx / q - 2.0 * my * p / (q * q), k) / n
                partials.append((j, g))

    clipped = [max(f, 0.0) for f in factors]
    index = float(np.prod(clipped))
    if not need_grad:
        return index, None

    grads_by_scale = [np.zeros_like(ys[j]) for j in range(scales)]
    for i, (j, g) in enumerate(partials):
        if factors[i] <= 0.0:
            continue
        others = np.prod([clipped[m] for m in range(len(clipped)) if m != i])
        grads_by_scale[j] += others * g
    grad = grads_by_scale[-1]
    for j in range(scales - 2, -1, -1):
        grad = grads_by_scale[j] + _down_adj(grad, ys[j].shape)
    return index, grad


def msssim_value_and_grad(x, y, cfg=None, need_grad=True):
    """MS-SSIM index of ``y`` against ``x`` and its gradient in ``y``.

    Contrast-structure terms are taken at every scale and luminance only at
    the coarsest, all exponents 1. Each per-scale mean factor is clipped at
    zero so the index stays in [0, 1].
    """
    cfg = cfg or ImageObjectiveConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y, "msssim")
    xc, yc = _as_channels(x), _as_channels(y)
    need = min_msssim_size(cfg.msssim_scales)
    if min(xc.shape[1:]) < need:
        raise ShapeError(
            f"image {xc.shape[1:]} too small for {cfg.msssim_scales} scales; minimum side is {need}",
            module="objectives",
        )
    k = gaussian_window()
    total, grads = 0.0, []
    for xi, yi in zip(xc, yc):
        v, g = _msssim_channel(xi, yi, cfg.msssim_scales, cfg.C1, cfg.C2, k, need_grad)
        total += v
        grads.append(g)
    nc = xc.shape[0]
    if not need_grad:
        return total / nc, None
    return total / nc, (np.stack(grads) / nc).reshape(y.shape)


def msssim(x, y, cfg=None):
    return msssim_value_and_grad(x, y, cfg, need_grad=False)[0]


def msssim_loss(x, y, cfg=None):
    return 1.0 - msssim(x, y, cfg)


# --- network-based terms ----------------------------------------------------


def _fit_input(net, y):
    if y.shape == net.input_shape:
        return y
    if y.size == net.input_dim:
        return y.reshape(net.input_shape)
    raise ShapeError(f"network input {net.input_shape} does not accept signal {y.shape}", module="objectives")


def discriminator_term(disc, y, need_grad=False):
    """``-D(y)``; with ``need_grad`` also its gradient in ``y``."""
    y = np.asarray(y, dtype=np.float64)
    if disc.output_size != 1:
        raise ShapeError(f"discriminator output must be scalar, got {disc.output_shape}", module="objectives")
    out, tape = disc.forward(_fit_input(disc, y))
    value = -float(out.reshape(()))
    if not need_grad:
        return value
    tape.attach(value, -np.ones_like(out))
    return value, autodiff.backward_input(tape).reshape(y.shape)


@dataclass
class SpeechObjectiveConfig:
    lambda4: float = 10.0
    feature_net: Optional[GeneratorModel] = None
    feature_layer_indices: Sequence[int] = field(default_factory=tuple)

    def __post_init__(self):
        if self.lambda4 < 0:
            raise ValueError("lambda4 must be nonnegative")
        if self.feature_net is not None:
            check_feature_layers(self.feature_net, self.feature_layer_indices)


def check_feature_layers(net, indices):
    for i in indices:
        if not 0 <= i < len(net.layers):
            raise ShapeError(f"feature layer index {i} out of range (net has {len(net.layers)} layers)", module="objectives")
        if net.layers[i].kind not in autodiff.CONV_KINDS:
            raise ShapeError(f"feature layer {i} is {net.layers[i].kind}, not a convolution", module="objectives")


def _features(net, indices, s):
    _, tape = net.forward(_fit_input(net, s))
    return [tape.acts[i + 1] for i in indices], tape


def feature_loss(x, y, cfg, need_grad=False):
    """Sum over tapped conv layers of the mean squared activation difference."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _same_shape(x, y, "feature_loss")
    if cfg.feature_net is None:
        return (0.0, np.zeros_like(y)) if need_grad else 0.0
    check_feature_layers(cfg.feature_net, cfg.feature_layer_indices)
    fx, _ = _features(cfg.feature_net, cfg.feature_layer_indices, x)
    fy, tape = _features(cfg.feature_net, cfg.feature_layer_indices, y)
    value = 0.0
    act_grads = {}
    for i, a, b in zip(cfg.feature_layer_indices, fx, fy):
        d = b - a
        value += float(np.mean(d * d))
        act_grads[i + 1] = act_grads.get(i + 1, 0.0) + 2.0 * d / d.size
    if not need_grad:
        return value
    return value, autodiff.vjp(tape, None, act_grads).reshape(y.shape)


# --- composite objectives ---------------------------------------------------


class ImageObjective:
    """``-D(y) + lambda3 * (L_msssim + gamma * MSE)``; ``-D`` only if enabled."""

    def __init__(self, cfg=None):
        self.cfg = cfg or ImageObjectiveConfig()

    def __call__(self, x, y):
        cfg = self.cfg
        ms, g_ms = msssim_value_and_grad(x, y, cfg)
        m, g_m = mse_objective(x, y)
        value = cfg.lambda3 * ((1.0 - ms) + cfg.gamma * m)
        grad = cfg.lambda3 * (-g_ms + cfg.gamma * g_m)
        if cfg.use_discriminator:
            d, g_d = discriminator_term(cfg.discriminator, y, need_grad=True)
            value += d
            grad = grad + g_d
        return value, grad


class SpeechObjective:
    """``L_feat(x, y) + lambda4 * MSE(x, y)``."""

    def __init__(self, cfg=None):
        self.cfg = cfg or SpeechObjectiveConfig()

    def __call__(self, x, y):
        f, g_f = feature_loss(x, y, self.cfg, need_grad=True)
        m, g_m = mse_objective(x, y)
        return f + self.cfg.lambda4 * m, g_f + self.cfg.lambda4 * g_m


def value_and_grad(x, z, generator, objective):
    """``F(x, G(z))`` and its gradient with respect to ``z``."""
    z = np.asarray(z, dtype=np.float64)
    y, tape = generator.forward(z.reshape(generator.input_shape))
    value, gy = objective(x, y)
    tape.attach(value, gy)
    return value, autodiff.backward_input(tape).reshape(z.shape)


def evaluate(x, z, generator, objective):
    z = np.asarray(z, dtype=np.float64)
    return objective(x, generator(z.reshape(generator.input_shape)))[0]


def image_objective(x, z, generator, cfg=None):
    return evaluate(x, z, generator, ImageObjective(cfg))


def speech_objective(x, z, generator, cfg=None):
    return evaluate(x, z, generator, SpeechObjective(cfg))
