"""Signal pre- and post-processing for the image and speech pipelines.

Spectrogram arrays are laid out ``(frequency, time)``: a STFT has shape
``(frame_size // 2 + 1, n_frames)`` and a mel spectrogram
``(mel_bins, n_frames)``. Images inside the codec are ``(C, H, W)`` floats in
``[-1, 1]``; on disk they are ``(H, W, C)`` uint8.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError, ShapeError

PATCH_SECONDS = 1.0  # nominal duration of one 128-frame patch


@dataclass
class SpeechPipelineConfig:
    sample_rate: int = 16000
    frame_size: int = 512
    stride: int = 128
    mel_bins: int = 128
    patch_frames: int = 128
    dynamic_range: float = 8.0
    mel_inversion: str = "pinv"
    griffin_lim_iters: int = 100
    griffin_lim_momentum: float = 0.0
    training_patch_frames: int = 140
    training_overlap: int = 12

    def __post_init__(self):
        if self.frame_size <= 0 or self.stride <= 0 or self.stride > self.frame_size:
            raise InputError("need 0 < stride <= frame_size", module="signal")
        if self.frame_size % self.stride:
            raise InputError("stride must divide frame_size", module="signal")
        if self.mel_bins <= 0 or self.patch_frames <= 0 or self.dynamic_range <= 0:
            raise InputError("mel_bins, patch_frames and dynamic_range must be positive", module="signal")
        if self.mel_inversion not in ("pinv", "transpose", "nnls"):
            raise InputError(f"unknown mel inversion {self.mel_inversion!r}", module="signal")

    @property
    def overlap(self):
        return 1.0 - self.stride / self.frame_size

    @property
    def n_bins(self):
        return self.frame_size // 2 + 1

    @property
    def patch_samples(self):
        return self.patch_frames * self.stride

    @property
    def patch_shape(self):
        return (self.mel_bins, self.patch_frames)


@dataclass
class ImagePipelineConfig:
    target_resolution: tuple = (768, 512)  # (width, height)
    channels: int = 3

    def __post_init__(self):
        w, h = self.target_resolution
        if w <= 0 or h <= 0 or self.channels not in (1, 3):
            raise InputError("target resolution must be positive and channels 1 or 3", module="signal")

    @property
    def signal_shape(self):
        w, h = self.target_resolution
        return (self.channels, h, w)


# --- STFT ------------------------------------------------------------------


def hann(n):
    """Periodic Hann window (constant overlap-add at hop n/4)."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def _window(cfg, window):
    if window == "hann":
        return hann(cfg.frame_size)
    if window in ("rect", "rectangular", None):
        return np.ones(cfg.frame_size)
    raise InputError(f"unknown window {window!r}", module="signal")


def n_frames(n_samples, cfg):
    return 1 + (n_samples - cfg.frame_size) // cfg.stride


def stft(samples, cfg=None, window="hann"):
    """Framed real DFT; returns complex ``(bins, frames)``."""
    cfg = cfg or SpeechPipelineConfig()
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < cfg.frame_size:
        raise InputError(f"signal has {x.size} samples, needs at least {cfg.frame_size}", module="signal")
    t = n_frames(x.size, cfg)
    idx = np.arange(cfg.frame_size)[None, :] + cfg.stride * np.arange(t)[:, None]
    frames = x[idx] * _window(cfg, window)
    return np.fft.rfft(frames, axis=1).T


def istft(spec, cfg=None, window="hann"):
    """Least-squares inverse of :func:`stft` (weighted overlap-add)."""
    cfg = cfg or SpeechPipelineConfig()
    spec = np.asarray(spec)
    if spec.shape[0] != cfg.n_bins:
        raise ShapeError(f"spectrogram has {spec.shape[0]} bins, expected {cfg.n_bins}", module="signal")
    t = spec.shape[1]
    w = _window(cfg, window)
    frames = np.fft.irfft(spec.T, n=cfg.frame_size, axis=1) * w
    n = (t - 1) * cfg.stride + cfg.frame_size
    out = np.zeros(n)
    norm = np.zeros(n)
    for i in range(t):
        s = i * cfg.stride
        out[s : s + cfg.frame_size] += frames[i]
        norm[s : s + cfg.frame_size] += w * w
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    return out


def bin_weights(frame_size):
    """Multiplicity of each rfft bin in the full spectrum (1 for DC/Nyquist, else 2)."""
    w = np.full(frame_size // 2 + 1, 2.0)
    w[0] = 1.0
    if frame_size % 2 == 0:
        w[-1] = 1.0
    return w


def spectral_error(mag, target, frame_size):
    """Full-spectrum Euclidean distance between two magnitude spectrograms."""
    d = (np.abs(mag) - np.abs(target)) ** 2
    return float(np.sqrt(np.sum(d * bin_weights(frame_size)[:, None])))


def griffin_lim(magnitude, cfg=None, iterations=None, return_errors=False, momentum=None):
    """Phase recovery from a magnitude spectrogram, starting from zero phase.

    With ``momentum=0`` this is the classic alternating projection, whose
    spectral error never increases. A positive momentum extrapolates the
    consistent estimate (fast Griffin-Lim); it converges much faster but
    loses the monotonicity guarantee.
    """
    cfg = cfg or SpeechPipelineConfig()
    mag = np.abs(np.asarray(magnitude, dtype=np.float64))
    if mag.ndim != 2 or mag.shape[0] != cfg.n_bins:
        raise ShapeError(f"magnitude must be ({cfg.n_bins}, frames), got {mag.shape}", module="signal")
    iterations = cfg.griffin_lim_iters if iterations is None else iterations
    momentum = cfg.griffin_lim_momentum if momentum is None else momentum
    spec = mag.astype(np.complex128)
    prev = spec
    errors = []
    x = istft(spec, cfg)
    for _ in range(iterations):
        est = stft(x, cfg)
        errors.append(spectral_error(est, mag, cfg.frame_size))
        proj = mag * np.exp(1j * np.angle(est))
        spec = proj + momentum * (proj - prev)
        prev = proj
        x = istft(spec, cfg)
    if return_errors:
        return x, errors
    return x


# --- mel -----------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg=None):
    """Triangular HTK-mel filters from 0 Hz to Nyquist, shape ``(mel_bins, bins)``."""
    cfg = cfg or SpeechPipelineConfig()
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.frame_size
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2), cfg.mel_bins + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def mel_project(spectrogram, cfg=None):
    cfg = cfg or SpeechPipelineConfig()
    s = np.abs(np.asarray(spectrogram))
    if s.shape[0] != cfg.n_bins:
        raise ShapeError(f"spectrogram has {s.shape[0]} bins, expected {cfg.n_bins}", module="signal")
    return mel_filterbank(cfg) @ s


def mel_unproject(mel, cfg=None, method=None):
    """Nonnegative linear-frequency magnitude whose mel projection approximates ``mel``.

    ``pinv`` applies the Moore-Penrose pseudo-inverse of the filterbank and
    clamps negatives; ``transpose`` uses the row-normalized filterbank
    transpose; ``nnls`` solves a nonnegative least-squares problem per frame.
    """
    cfg = cfg or SpeechPipelineConfig()
    method = method or cfg.mel_inversion
    mel = np.asarray(mel, dtype=np.float64)
    fb = mel_filterbank(cfg)
    if mel.shape[0] != cfg.mel_bins:
        raise ShapeError(f"mel spectrogram has {mel.shape[0]} bins, expected {cfg.mel_bins}", module="signal")
    if method == "pinv":
        return np.maximum(np.linalg.pinv(fb) @ mel, 0.0)
    if method == "transpose":
        rows = fb.sum(axis=1)
        safe = np.where(rows > 0, rows, 1.0)
        return np.maximum(fb.T @ (mel / safe[:, None]), 0.0)
    if method == "nnls":
        from scipy.optimize import nnls

        return np.stack([nnls(fb, col)[0] for col in mel.T], axis=1)
    raise InputError(f"unknown mel inversion {method!r}", module="signal")


# --- log-magnitude normalization -----------------------------------------------


def log_normalize(mel, r=8.0, gain=None):
    """Map magnitudes to ``[-1, 1]``: scale by the global max, log, clamp at -r, rescale.

    Returns ``(patch, gain)`` where ``gain`` is the global maximum, or the
    given ``gain`` when one is supplied (values above it clip to 1).
    """
    mel = np.asarray(mel, dtype=np.float64)
    if np.any(mel < 0) or not np.all(np.isfinite(mel)):
        raise InputError("mel magnitudes must be finite and nonnegative", module="signal")
    if gain is None:
        gain = float(mel.max()) if mel.size else 0.0
    if gain <= 0:
        raise InputError("all-zero input has no maximum to normalize by", module="signal")
    floor = gain * np.exp(-r)
    out = np.full(mel.shape, -1.0)
    keep = mel > floor
    out[keep] = 2.0 * np.log(mel[keep] / gain) / r + 1.0
    return np.clip(out, -1.0, 1.0), gain


def denormalize(patch, r=8.0, gain=1.0):
    v = np.clip(np.asarray(patch, dtype=np.float64), -1.0, 1.0)
    return gain * np.exp((v - 1.0) * r / 2.0)


# --- patching --------------------------------------------------------------------


def to_patches(mel, patch_frames):
    """Split ``(bins, frames)`` into non-overlapping patches, padding the tail with the floor value -1."""
    bins, t = mel.shape
    n = max(1, -(-t // patch_frames))
    padded = np.full((bins, n * patch_frames), -1.0)
    padded[:, :t] = mel
    return [padded[:, i * patch_frames : (i + 1) * patch_frames] for i in range(n)]


def training_patches(mel, patch_frames=140, overlap=12):
    """Overlapping patches as used for generator training (not used when compressing)."""
    hop = patch_frames - overlap
    bins, t = mel.shape
    return [mel[:, s : s + patch_frames] for s in range(0, t - patch_frames + 1, hop)]


def from_patches(patches, n_frames_total):
    return np.concatenate(list(patches), axis=1)[:, :n_frames_total]


def speech_frame_count(n_samples, cfg):
    """Frames needed to cover ``n_samples``; the tail is zero padded to a full hop."""
    n = max(int(n_samples), cfg.frame_size)
    return 1 + -(-(n - cfg.frame_size) // cfg.stride)


def speech_analysis(samples, cfg):
    """Samples -> normalized mel patches, the gain and the frame count."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    t = speech_frame_count(x.size, cfg)
    x = np.pad(x, (0, (t - 1) * cfg.stride + cfg.frame_size - x.size))
    mel = mel_project(stft(x, cfg), cfg)
    norm, gain = log_normalize(mel, cfg.dynamic_range)
    return to_patches(norm, cfg.patch_frames), gain, t


def speech_synthesis(patches, gain, n_frames_total, n_samples, cfg):
    norm = from_patches(patches, n_frames_total)
    mag = mel_unproject(denormalize(norm, cfg.dynamic_range, gain), cfg)
    x = griffin_lim(mag, cfg)
    out = np.zeros(n_samples)
    out[: min(n_samples, x.size)] = x[:n_samples]
    return out


# --- images ----------------------------------------------------------------------------


def _resize(img, h, w):
    """Bilinear resize of an (H, W, C) float array."""
    ih, iw = img.shape[:2]
    if (ih, iw) == (h, w):
        return img.copy()
    return ndimage.zoom(img, (h / ih, w / iw, 1), order=1, mode="nearest", grid_mode=True)


def image_preprocess(pixels, cfg):
    """uint8 ``(H, W, C)`` -> float ``(C, h, w)`` in [-1, 1] at the target resolution."""
    px = np.asarray(pixels)
    if px.ndim == 2:
        px = px[:, :, None]
    if px.shape[2] != cfg.channels:
        raise ShapeError(f"image has {px.shape[2]} channels, pipeline expects {cfg.channels}", module="signal")
    w, h = cfg.target_resolution
    img = _resize(px.astype(np.float64), h, w)
    return np.transpose(img / 127.5 - 1.0, (2, 0, 1))


def image_postprocess(signal, original_shape):
    """float ``(C, h, w)`` in [-1, 1] -> uint8 ``(H, W, C)`` at the original size."""
    img = np.transpose(np.asarray(signal, dtype=np.float64), (1, 2, 0))
    img = (np.clip(img, -1.0, 1.0) + 1.0) * 127.5
    img = _resize(img, original_shape[0], original_shape[1])
    out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if len(original_shape) == 2:
        return out[:, :, 0]
    return out


# --- metrics ---------------------------------------------------------------------------


def psnr(x, y, peak=255.0):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"psnr: shape mismatch {x.shape} vs {y.shape}", module="signal")
    err = float(np.mean((x - y) ** 2))
    if err == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / err)


def spectral_psnr(reference, test, cfg=None):
    """PSNR between normalized log-mel spectrograms (peak 2), using the reference gain for both."""
    cfg = cfg or SpeechPipelineConfig()
    a = np.asarray(reference, dtype=np.float64).ravel()
    b = np.asarray(test, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ShapeError(f"spectral_psnr: {a.size} vs {b.size} samples", module="signal")
    t = speech_frame_count(a.size, cfg)
    pad = (t - 1) * cfg.stride + cfg.frame_size - a.size
    ma = mel_project(stft(np.pad(a, (0, pad)), cfg), cfg)
    mb = mel_project(stft(np.pad(b, (0, pad)), cfg), cfg)
    na, gain = log_normalize(ma, cfg.dynamic_range)
    nb, _ = log_normalize(mb, cfg.dynamic_range, gain=gain)
    return psnr(na, nb, peak=2.0)
