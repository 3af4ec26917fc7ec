from fractions import Fraction

import numpy as np
import pytest

from latentcodec import codec, entropy, models, signal
from latentcodec.codec import CodecConfig, compress_image, compress_speech, decompress
from latentcodec.errors import ModelMismatchError
from latentcodec.models import SyntheticModelSpec, make_synthetic, pseudo_inverse_encoder
from latentcodec.objectives import mse_objective
from latentcodec.quantization import fit_codebook, uniform_codebook
from latentcodec.search import SearchConfig

IMG = signal.ImagePipelineConfig(target_resolution=(16, 12))
SPEECH = signal.SpeechPipelineConfig(mel_bins=32, patch_frames=16)


def image_setup(dim=576, seed=1):
    G = make_synthetic(SyntheticModelSpec("orthonormal-linear", dim, IMG.signal_shape, seed=seed))
    img = np.random.default_rng(seed).integers(0, 256, (12, 16, 3)).astype(np.uint8)
    return G, pseudo_inverse_encoder(G), img


def mse_cfg(**kw):
    search = SearchConfig(**{"max_iters": 20, "step": 1e-3, **kw})
    return CodecConfig(search=search, objective=mse_objective)


def test_accounting_identities():
    assert codec.raw_payload_bits(512, 16) == 2048
    assert codec.bits_per_second(2048, 1) == 2048
    assert codec.raw_payload_bits(20000, 256) == 160000
    assert codec.bits_per_pixel(160000, 768, 512) == Fraction(160000, 393216)
    assert round(float(codec.bits_per_pixel(160000, 768, 512)), 5) == 0.40690
    assert codec.index_bits(2) == 1 and codec.index_bits(5) == 3 and codec.index_bits(65535) == 16


def test_near_lossless_image_round_trip():
    G, E, img = image_setup()
    cb = uniform_codebook(-4, 4, 4096)
    res = compress_image(img, G, cb, mse_cfg(), IMG, encoder=E)
    out = decompress(res.data, G, IMG)
    assert out.shape == img.shape and out.dtype == np.uint8
    assert signal.psnr(img, out) >= 40.0


def test_image_bytes_are_deterministic_and_rate_is_exact():
    G, E, img = image_setup(dim=200)
    cb = fit_codebook(np.random.default_rng(0).standard_normal(5000), 32)
    a = compress_image(img, G, cb, mse_cfg(seed=4), IMG)
    b = compress_image(img, G, cb, mse_cfg(seed=4), IMG)
    assert a.data == b.data
    assert np.array_equal(decompress(a.data, G, IMG), decompress(a.data, G, IMG))
    assert a.rate.payload_rate == Fraction(a.bitstream.payload_bits, 12 * 16)
    assert a.rate.container_bits == 8 * len(a.data)
    assert a.rate.payload_bits <= a.rate.raw_bits == 200 * 5


def test_foreign_model_is_rejected():
    G, E, img = image_setup(dim=100)
    other = make_synthetic(SyntheticModelSpec("orthonormal-linear", 100, IMG.signal_shape, seed=99))
    cb = uniform_codebook(-3, 3, 64)
    res = compress_image(img, G, cb, mse_cfg(max_iters=2), IMG, encoder=E)
    with pytest.raises(ModelMismatchError) as info:
        decompress(res.data, other, IMG)
    assert info.value.exit_code == 3


def test_fixed_length_mode_and_global_table():
    G, E, img = image_setup(dim=100)
    cb = uniform_codebook(-3, 3, 16)
    fixed = compress_image(img, G, cb, CodecConfig(mse_cfg(max_iters=3).search, mse_objective, huffman=False), IMG, E)
    assert fixed.bitstream.payload_bits == fixed.rate.raw_bits == 400
    table = entropy.build_table(np.arange(1, 17))
    glob = compress_image(img, G, cb, CodecConfig(mse_cfg(max_iters=3).search, mse_objective, table=table), IMG, E)
    assert glob.bitstream.table == table
    assert np.array_equal(codec.decode_latents(glob.data, G)[1], fixed.latents)


def test_speech_round_trip():
    G = make_synthetic(SyntheticModelSpec("orthonormal-linear", 256, SPEECH.patch_shape, seed=2))
    E = pseudo_inverse_encoder(G)
    x = 0.3 * np.sin(2 * np.pi * 300 * np.arange(6000) / 16000)
    cb = uniform_codebook(-1.5, 1.5, 256)
    res = compress_speech(x, G, cb, mse_cfg(), SPEECH, encoder=E)
    patches, gain, t = signal.speech_analysis(x, SPEECH)
    assert res.bitstream.n_latents == len(patches)
    assert res.bitstream.gain == pytest.approx(gain, rel=1e-6)
    assert res.rate.payload_rate == Fraction(res.bitstream.payload_bits, len(patches))
    _, z = codec.decode_latents(res.data, G)
    assert np.array_equal(z, res.latents)
    y = decompress(res.data, G, SPEECH)
    assert y.shape == x.shape and np.all(np.isfinite(y))
    assert np.array_equal(y, decompress(res.data, G, SPEECH))


def test_one_second_patch_costs_2048_bits_without_huffman():
    cfg = signal.SpeechPipelineConfig()
    G = make_synthetic(SyntheticModelSpec("random-mlp", 512, cfg.patch_shape, width=8, seed=0))
    cb = fit_codebook(np.random.default_rng(0).standard_normal(5000), 16)
    x = 0.2 * np.random.default_rng(1).standard_normal(16384)
    res = compress_speech(x, G, cb, CodecConfig(SearchConfig(max_iters=1), mse_objective, huffman=False), cfg)
    assert res.bitstream.n_latents == 1
    assert res.bitstream.payload_bits == 2048
    assert res.rate.payload_rate == 2048


def test_parallel_workers_do_not_change_output():
    G = make_synthetic(SyntheticModelSpec("orthonormal-linear", 64, SPEECH.patch_shape, seed=3))
    x = np.random.default_rng(2).standard_normal(9000) * 0.1
    cb = uniform_codebook(-2, 2, 64)
    base = mse_cfg(max_iters=5)
    a = compress_speech(x, G, cb, base, SPEECH)
    b = compress_speech(x, G, cb, CodecConfig(base.search, mse_objective, workers=3), SPEECH)
    assert a.bitstream.n_latents > 1
    assert a.data == b.data
