"""End-to-end compression: signal -> quantized latents -> ``.bpgc`` and back.

An image is carried by one latent vector. Speech is cut into
non-overlapping normalized mel patches, each carried by its own latent;
the normalization gain travels in the container header.
"""

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from . import entropy, signal
from .errors import FormatError, InputError, ModelMismatchError, ShapeError
from .objectives import ImageObjective, SpeechObjective, mse_objective
from .search import SearchConfig, search


def index_bits(K):
    """Bits per symbol of a fixed-length code over ``K`` levels."""
    return (int(K) - 1).bit_length()


def raw_payload_bits(latent_dim, K, n_latents=1):
    """Payload size without entropy coding: every element costs ceil(log2 K) bits."""
    return int(latent_dim) * int(n_latents) * index_bits(K)


def bits_per_pixel(bits, width, height):
    """Exact rate as a :class:`~fractions.Fraction`."""
    return Fraction(int(bits), int(width) * int(height))


def bits_per_second(bits, n_patches, patch_seconds=signal.PATCH_SECONDS):
    return Fraction(int(bits)) / (int(n_patches) * Fraction(patch_seconds))


@dataclass
class RateReport:
    """Bit accounting for one compressed signal.

    ``units`` is the pixel count (images) or the nominal duration in seconds
    (speech); rates are bits per unit.
    """

    signal_type: str
    raw_bits: int
    payload_bits: int
    container_bits: int
    units: Fraction

    @property
    def raw_rate(self):
        return Fraction(self.raw_bits) / self.units

    @property
    def payload_rate(self):
        return Fraction(self.payload_bits) / self.units

    @property
    def container_rate(self):
        return Fraction(self.container_bits) / self.units

    def lines(self):
        name = "bpp" if self.signal_type == "image" else "bps"
        return [
            f"raw_bits={self.raw_bits}",
            f"payload_bits={self.payload_bits}",
            f"container_bits={self.container_bits}",
            f"raw_{name}={float(self.raw_rate):.6f}",
            f"{name}={float(self.payload_rate):.6f}",
            f"{name}_with_header={float(self.container_rate):.6f}",
        ]


@dataclass
class CompressionResult:
    data: bytes
    bitstream: entropy.Bitstream
    latents: np.ndarray
    reports: list
    rate: RateReport

    @property
    def iterations(self):
        return sum(r.iterations for r in self.reports)

    @property
    def final_objective(self):
        return float(np.mean([r.final_objective for r in self.reports]))


@dataclass
class CodecConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    objective: Optional[Callable] = None
    huffman: bool = True
    table: Optional[entropy.HuffmanTable] = None  # corpus-global table; per-signal when None
    workers: int = 1


def _target_for(G, x):
    if x.size != G.output_size:
        raise ShapeError(
            f"generator output {G.output_shape} does not match signal of {x.size} elements", module="codec"
        )
    return x.reshape(G.output_shape)


def _search_all(targets, G, cb, objective, cfg, encoder):
    def one(i):
        scfg = dataclasses.replace(cfg.search, seed=cfg.search.seed + i)
        return search(targets[i], G, cb, objective, scfg, encoder=encoder)

    if cfg.workers > 1 and len(targets) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(one, range(len(targets))))
    else:
        results = [one(i) for i in range(len(targets))]
    return np.stack([z for z, _ in results]), [r for _, r in results]


def _pack(signal_type, shape, gain, G, cb, zq, cfg):
    symbols = cb.indices(zq).ravel()
    if cfg.table is not None:
        table = cfg.table
        if len(table) != cb.K:
            raise InputError(f"global table has {len(table)} symbols, codebook has {cb.K}", module="codec")
    elif cfg.huffman:
        table = entropy.build_table(np.bincount(symbols, minlength=cb.K))
    else:
        table = entropy.HuffmanTable([index_bits(cb.K)] * cb.K)
    payload, nbits = entropy.encode(table, symbols)
    bs = entropy.Bitstream(
        signal_type, tuple(int(s) for s in shape), float(np.float32(gain)), zq.shape[1], zq.shape[0],
        bytes(G.model_id), cb, table, payload, nbits,
    )
    return bs, entropy.write_container(bs)


def compress_image(pixels, G, cb, cfg=None, pipeline=None, encoder=None):
    """Compress a uint8 ``(H, W, C)`` or ``(H, W)`` image."""
    cfg = cfg or CodecConfig()
    pipeline = pipeline or signal.ImagePipelineConfig()
    px = np.asarray(pixels)
    if px.dtype != np.uint8 or px.ndim not in (2, 3):
        raise InputError(f"image must be a uint8 (H, W[, C]) array, got {px.dtype} {px.shape}", module="codec")
    x = _target_for(G, signal.image_preprocess(px, pipeline))
    objective = cfg.objective or ImageObjective()
    zq, reports = _search_all([x], G, cb, objective, cfg, encoder)
    bs, data = _pack("image", px.shape, 1.0, G, cb, zq, cfg)
    rate = RateReport(
        "image", raw_payload_bits(zq.shape[1], cb.K), bs.payload_bits, 8 * len(data),
        Fraction(px.shape[0] * px.shape[1]),
    )
    return CompressionResult(data, bs, zq, reports, rate)


def compress_speech(samples, G, cb, cfg=None, pipeline=None, encoder=None):
    """Compress mono speech samples (floats in [-1, 1])."""
    cfg = cfg or CodecConfig()
    pipeline = pipeline or signal.SpeechPipelineConfig()
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise InputError("empty audio", module="codec")
    patches, gain, _ = signal.speech_analysis(x, pipeline)
    targets = [_target_for(G, p) for p in patches]
    objective = cfg.objective or SpeechObjective()
    zq, reports = _search_all(targets, G, cb, objective, cfg, encoder)
    shape = (x.size, pipeline.mel_bins, pipeline.patch_frames)
    bs, data = _pack("speech", shape, gain, G, cb, zq, cfg)
    rate = RateReport(
        "speech", raw_payload_bits(zq.shape[1], cb.K, len(patches)), bs.payload_bits, 8 * len(data),
        len(patches) * Fraction(signal.PATCH_SECONDS),
    )
    return CompressionResult(data, bs, zq, reports, rate)


def compress(x, G, cb, cfg=None, pipeline=None, encoder=None):
    if isinstance(pipeline, signal.SpeechPipelineConfig):
        return compress_speech(x, G, cb, cfg, pipeline, encoder)
    return compress_image(x, G, cb, cfg, pipeline, encoder)


def check_model(bs, G):
    if bs.model_id != bytes(G.model_id):
        raise ModelMismatchError(
            f"bitstream was made with model {bs.model_id.hex()}, got {bytes(G.model_id).hex()}",
            block="header", module="codec",
        )


def decode_latents(data, G):
    """Parse a container and return ``(bitstream, latents)``; checks the generator id."""
    bs = entropy.parse_container(data)
    check_model(bs, G)
    if bs.latent_dim != G.input_dim:
        raise ShapeError(f"bitstream latent_dim {bs.latent_dim} != generator input {G.input_dim}", module="codec")
    symbols = entropy.read_symbols(bs)
    return bs, bs.codebook.centers[symbols].reshape(bs.n_latents, bs.latent_dim)


def _check_shape(bs, want_rank, what):
    if len(bs.shape) != want_rank:
        raise FormatError(f"{what} header shape has rank {len(bs.shape)}, expected {want_rank}", block="header", module="codec")


def decompress(data, G, pipeline=None):
    """Reconstruct the signal: uint8 image array, or float speech samples."""
    bs, z = decode_latents(data, G)
    outs = [G(zi.reshape(G.input_shape)) for zi in z]
    if bs.signal_type == "image":
        if len(bs.shape) not in (2, 3):
            _check_shape(bs, 3, "image")
        pipeline = pipeline or signal.ImagePipelineConfig()
        return signal.image_postprocess(outs[0].reshape(pipeline.signal_shape), bs.shape)
    _check_shape(bs, 3, "speech")
    pipeline = pipeline or signal.SpeechPipelineConfig()
    n_samples, bins, frames = bs.shape
    if (bins, frames) != pipeline.patch_shape:
        raise ShapeError(
            f"bitstream patches are {bins}x{frames}, pipeline expects {pipeline.patch_shape}", module="codec"
        )
    t = signal.speech_frame_count(n_samples, pipeline)
    if len(outs) != -(-t // frames):
        raise FormatError(f"{len(outs)} patches cannot cover {n_samples} samples", block="header", module="codec")
    patches = [o.reshape(bins, frames) for o in outs]
    return signal.speech_synthesis(patches, bs.gain, t, n_samples, pipeline)


def default_objective(kind):
    return {"image": ImageObjective(), "speech": SpeechObjective(), "mse": mse_objective}[kind]
