"""Command-line interface.

Exit codes: 0 ok, 1 internal error, 2 input/IO/usage, 3 format or model-id
mismatch, 4 numerical failure. Failures print one line on stderr::

    error code=<n> module=<name> message=<text>

Every command accepts ``--config FILE``: an INI file whose sections
(``[search]``, ``[codec]``, ``[bench]``, ``[image]``, ``[speech]``) supply
defaults that command-line flags override.
"""

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, codec, entropy, fileio, models, signal
from .errors import CodecError, InputError
from .objectives import ImageObjective, ImageObjectiveConfig, SpeechObjective, max_msssim_scales, mse_objective, msssim
from .quantization import Codebook, fit_codebook
from .search import METHODS, SearchConfig

SEARCH_KEYS = {
    "method": str, "max_iters": int, "step": float, "optimizer": str, "mu": float,
    "inner_steps": int, "convergence_tol": float, "iht_substeps": int, "seed": int,
}


# --- config plumbing ----------------------------------------------------------------


def load_ini(path):
    parser = configparser.ConfigParser()
    if path is None:
        return parser
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc.strerror}", module="cli") from exc
    except configparser.Error as exc:
        raise InputError(f"bad config {path}: {exc}".replace("\n", " "), module="cli") from exc
    return parser


def pick(args, ini, section, key, conv, default=None):
    """Command-line value, else config-file value, else ``default``."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    if ini.has_option(section, key):
        raw = ini.get(section, key)
        try:
            return conv(raw)
        except ValueError as exc:
            raise InputError(f"config [{section}] {key}={raw!r}: {exc}", module="cli") from exc
    return default


def search_config(args, ini):
    kw = {}
    for key, conv in SEARCH_KEYS.items():
        v = pick(args, ini, "search", key, conv)
        if v is not None:
            kw[key] = v
    try:
        return SearchConfig(**kw)
    except TypeError as exc:
        raise InputError(str(exc), module="cli") from exc


def int_list(text):
    """``"8,16"`` or ``"0-9"`` or a mix such as ``"0-3,7"``."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def shape_arg(text):
    return tuple(int(s) for s in str(text).replace("x", ",").split(",") if s.strip())


def add_search_flags(p):
    g = p.add_argument_group("search")
    g.add_argument("--method", choices=METHODS)
    g.add_argument("--max-iters", dest="max_iters", type=int)
    g.add_argument("--step", type=float, help="learning rate")
    g.add_argument("--optimizer", choices=("adam", "sgd"))
    g.add_argument("--mu", type=float, help="ADMM penalty")
    g.add_argument("--inner-steps", dest="inner_steps", type=int)
    g.add_argument("--convergence-tol", dest="convergence_tol", type=float)
    g.add_argument("--iht-substeps", dest="iht_substeps", type=int)


def is_speech(path):
    return str(path).lower().endswith(".wav")


def speech_pipeline_for(G, ini):
    if len(G.output_shape) != 2:
        raise InputError(f"speech generator must output (mel_bins, frames), got {G.output_shape}", module="cli")
    bins, frames = G.output_shape
    kw = {"mel_bins": int(bins), "patch_frames": int(frames)}
    for key, conv in (("sample_rate", int), ("frame_size", int), ("stride", int), ("dynamic_range", float),
                      ("mel_inversion", str), ("griffin_lim_iters", int), ("griffin_lim_momentum", float)):
        if ini.has_option("speech", key):
            kw[key] = conv(ini.get("speech", key))
    return signal.SpeechPipelineConfig(**kw)


def image_pipeline_for(G):
    shape = G.output_shape
    if len(shape) != 3 or shape[0] not in (1, 3):
        raise InputError(f"image generator must output (C, H, W) with C in (1, 3), got {shape}", module="cli")
    return signal.ImagePipelineConfig(target_resolution=(shape[2], shape[1]), channels=shape[0])


def out(line):
    print(line, flush=True)


# --- commands ---------------------------------------------------------------------


def read_corpus(path):
    p = Path(path)
    if not p.exists():
        raise InputError(f"cannot read corpus {path}: no such file", module="cli")
    try:
        if p.suffix == ".npy":
            return np.load(p, allow_pickle=False).ravel()
        return np.loadtxt(p, dtype=np.float64).ravel()
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot parse corpus {path}: {exc}", module="cli") from exc


def cmd_fit_codebook(args, ini):
    K = pick(args, ini, "codebook", "levels", int)
    if K is None:
        raise InputError("--levels is required", module="cli")
    max_iters = pick(args, ini, "codebook", "max_iters_kmeans", int, 100)
    corpus = read_corpus(args.corpus)
    cb, rep = fit_codebook(corpus, K, max_iters=max_iters, return_report=True)
    cb.save(args.out)
    out(f"levels={cb.K}")
    out(f"iterations={rep.iterations}")
    out(f"distortion={rep.distortion:.9g}")
    out("occupancy=" + ",".join(str(int(c)) for c in rep.occupancy))
    out("centers=" + ",".join(f"{c:.6g}" for c in cb.centers))
    return 0


def cmd_make_model(args, ini):
    spec = models.SyntheticModelSpec(args.kind, args.latent_dim, shape_arg(args.shape),
                                     depth=args.depth, width=args.width, seed=args.seed or 0)
    G = models.make_synthetic(spec)
    G.save(args.out)
    out(f"model_id={bytes(G.model_id).hex()}")
    out(f"input_shape={'x'.join(map(str, G.input_shape))}")
    out(f"output_shape={'x'.join(map(str, G.output_shape))}")
    if args.encoder_out:
        if args.kind == "random-mlp":
            raise InputError("a pseudo-inverse encoder exists only for linear generators", module="cli")
        E = models.pseudo_inverse_encoder(G)
        E.save(args.encoder_out)
        out(f"encoder_id={bytes(E.model_id).hex()}")
    return 0


def _objective(name, kind, G=None):
    if name == "mse":
        return mse_objective
    if kind == "speech":
        return SpeechObjective()
    # the generator's resolution caps how many MS-SSIM scales fit
    scales = max_msssim_scales(min(G.output_shape[1:]))
    if scales == 0:
        raise InputError(f"generator output {G.output_shape} is too small for MS-SSIM; use --objective mse", module="cli")
    return ImageObjective(ImageObjectiveConfig(msssim_scales=scales))


def cmd_compress(args, ini):
    scfg = search_config(args, ini)
    G = models.GeneratorModel.load(args.generator)
    cb = Codebook.load(args.codebook)
    E = models.GeneratorModel.load(args.encoder) if args.encoder else None
    objective = pick(args, ini, "codec", "objective", str, "auto")
    if objective not in ("auto", "mse"):
        raise InputError(f"objective must be auto or mse, got {objective!r}", module="cli")
    workers = pick(args, ini, "codec", "workers", int, 1)
    huff = not args.no_huffman
    if is_speech(args.input):
        samples, rate = fileio.read_wav(args.input)
        pipe = speech_pipeline_for(G, ini)
        if rate != pipe.sample_rate:
            raise InputError(f"{args.input}: sample rate {rate}, expected {pipe.sample_rate}", module="cli")
        cfg = codec.CodecConfig(scfg, _objective(objective, "speech"), huff, workers=workers)
        res = codec.compress_speech(samples, G, cb, cfg, pipe, E)
    else:
        pixels = fileio.read_image(args.input)
        pipe = image_pipeline_for(G)
        cfg = codec.CodecConfig(scfg, _objective(objective, "image", G), huff, workers=workers)
        res = codec.compress_image(pixels, G, cb, cfg, pipe, E)
    try:
        Path(args.out).write_bytes(res.data)
    except OSError as exc:
        raise InputError(f"cannot write {args.out}: {exc.strerror}", module="cli") from exc
    out(f"signal_type={res.bitstream.signal_type}")
    out(f"latents={res.bitstream.n_latents}")
    for line in res.rate.lines():
        out(line)
    out(f"iterations={res.iterations}")
    out(f"final_objective={res.final_objective:.9g}")
    return 0


def cmd_decompress(args, ini):
    G = models.GeneratorModel.load(args.generator)
    try:
        data = Path(args.input).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {args.input}: {exc.strerror}", module="cli") from exc
    bs = entropy.parse_container(data)
    codec.check_model(bs, G)
    if bs.signal_type == "speech":
        pipe = speech_pipeline_for(G, ini)
        samples = codec.decompress(data, G, pipe)
        fileio.write_wav(args.out, samples, pipe.sample_rate)
    else:
        fileio.write_image(args.out, codec.decompress(data, G, image_pipeline_for(G)))
    out(f"signal_type={bs.signal_type}")
    out(f"wrote={args.out}")
    return 0


def cmd_eval(args, ini):
    if is_speech(args.original) != is_speech(args.reconstruction):
        raise InputError("original and reconstruction must both be audio or both be images", module="cli")
    if is_speech(args.original):
        a, _ = fileio.read_wav(args.original)
        b, _ = fileio.read_wav(args.reconstruction)
        n = min(a.size, b.size)
        if a.size != b.size:
            raise InputError(f"length mismatch: {a.size} vs {b.size} samples", module="cli")
        pipe = signal.SpeechPipelineConfig()
        out(f"psnr={signal.psnr(a[:n], b[:n], peak=1.0):.6f}")
        out(f"spectral_psnr={signal.spectral_psnr(a, b, pipe):.6f}")
        return 0
    a = fileio.read_image(args.original)
    b = fileio.read_image(args.reconstruction)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}", module="cli")
    out(f"psnr={signal.psnr(a, b, peak=255.0):.6f}")
    xa = np.moveaxis(np.atleast_3d(a).astype(np.float64), 2, 0)
    xb = np.moveaxis(np.atleast_3d(b).astype(np.float64), 2, 0)
    scales = max_msssim_scales(min(a.shape[0], a.shape[1]))
    if scales == 0:
        out("msssim=nan")
    else:
        cfg = ImageObjectiveConfig(msssim_scales=scales, data_range=255.0)
        out(f"msssim={msssim(xa, xb, cfg):.6f}")
    out(f"msssim_scales={scales}")
    return 0


def bench_config(args, ini):
    scfg = search_config(args, ini)
    base = bench.BenchConfig()
    kw = {}
    for key, default in (("dims", base.dims), ("levels", base.levels), ("seeds", base.seeds)):
        v = pick(args, ini, "bench", key, int_list, default)
        kw[key] = int_list(v) if isinstance(v, str) else tuple(v)
    methods = pick(args, ini, "bench", "methods", str, ",".join(base.methods))
    kw["methods"] = tuple(m.strip() for m in methods.split(",") if m.strip())
    # the suite uses its own search defaults unless overridden
    merged = {**base.search.__dict__}
    for key in SEARCH_KEYS:
        if getattr(args, key, None) is not None or ini.has_option("search", key):
            merged[key] = getattr(scfg, key)
    kw["search"] = SearchConfig(**merged)
    cfg = bench.BenchConfig(**kw)
    cfg.validate()
    return cfg


def _write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}", module="cli") from exc


def cmd_bench_quant(args, ini):
    cfg = bench_config(args, ini)
    rows = bench.bench_quant(cfg)
    _write_text(args.out, bench.to_csv(bench.CSV_HEADER, rows))
    if args.summary:
        _write_text(args.summary, bench.to_csv(bench.SUMMARY_HEADER, bench.summarize(rows)))
    return 0


def cmd_bench_init(args, ini):
    cfg = bench_config(args, ini)
    scfg = SearchConfig(**{**cfg.search.__dict__, "method": "direct", "step": args.step or 0.01,
                           "max_iters": args.max_iters or 100})
    lines = ["latent_dim,levels,seed,init,iteration,objective"]
    for dim in cfg.dims:
        for K in cfg.levels:
            cb = bench.gaussian_codebook(K, cfg.codebook_samples)
            for seed in cfg.seeds:
                oracle, rnd = bench.init_study(dim, seed, cb, scfg)
                for name, trace in (("oracle", oracle), ("random", rnd)):
                    lines += [f"{dim},{K},{seed},{name},{k + 1},{v!r}" for k, v in enumerate(trace)]
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


# --- entry point ----------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="latentcodec", description="Generative-model latent codec.")
    p.add_argument("--config", help="INI file with default parameters")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("fit-codebook", help="fit K-means quantization levels to a latent corpus")
    s.add_argument("--corpus", required=True, help=".npy array or whitespace-separated text of latent values")
    s.add_argument("--levels", type=int, help="number of levels K")
    s.add_argument("--max-iters-kmeans", dest="max_iters_kmeans", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output .bpcb file")
    s.set_defaults(func=cmd_fit_codebook)

    s = sub.add_parser("make-model", help="write a deterministic synthetic generator (.bpgm)")
    s.add_argument("--kind", choices=("orthonormal-linear", "dct-decoder", "random-mlp"), required=True)
    s.add_argument("--latent-dim", dest="latent_dim", type=int, required=True)
    s.add_argument("--shape", required=True, help="output shape, e.g. 3,64,96 for images or 128,128 for speech")
    s.add_argument("--depth", type=int, default=2)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.add_argument("--encoder-out", dest="encoder_out", help="also write the pseudo-inverse encoder")
    s.set_defaults(func=cmd_make_model)

    s = sub.add_parser("compress", help="compress a .ppm/.pgm/.png image or a .wav file")
    s.add_argument("input")
    s.add_argument("--generator", required=True)
    s.add_argument("--codebook", required=True)
    s.add_argument("--encoder", help="encoder model for latent initialization")
    s.add_argument("--objective", choices=("auto", "mse"))
    s.add_argument("--workers", type=int)
    s.add_argument("--no-huffman", action="store_true", help="fixed-length codes instead of Huffman")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    add_search_flags(s)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("decompress", help="reconstruct a signal from a .bpgc file")
    s.add_argument("input")
    s.add_argument("--generator", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_decompress)

    s = sub.add_parser("eval", help="quality metrics between an original and a reconstruction")
    s.add_argument("original")
    s.add_argument("reconstruction")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_eval)

    for name, func, helptext in (
        ("bench-quant", cmd_bench_quant, "compare direct/ADMM/IHT over a (dim, K) grid"),
        ("bench-init", cmd_bench_init, "objective traces for oracle vs random initialization"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--dims", help="latent sizes, e.g. 8,16")
        s.add_argument("--levels", help="level counts, e.g. 4,16")
        s.add_argument("--seeds", help="seed list, e.g. 0-9")
        s.add_argument("--methods", help="comma-separated subset of direct,admm,iht")
        s.add_argument("--out", default="-", help="CSV path (default stdout)")
        if name == "bench-quant":
            s.add_argument("--summary", help="per-cell mean/std CSV")
        add_search_flags(s)
        s.set_defaults(func=func)
    return p


def report_error(code, module, message):
    message = " ".join(str(message).split())
    print(f"error code={code} module={module} message={message}", file=sys.stderr, flush=True)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        ini = load_ini(args.config)
        return args.func(args, ini)
    except CodecError as exc:
        report_error(exc.exit_code, exc.module, exc)
        return exc.exit_code
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        report_error(1, "internal", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
