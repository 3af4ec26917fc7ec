"""Quantizer comparison and initialization studies on seeded synthetic generators.

Suite instance ``(dim, seed)``: a ``random-mlp`` generator from ``dim``
latents to ``expansion * dim`` outputs (hidden width ``width_mult * dim``),
and a target ``x = G(z_true)`` with ``z_true ~ N(0, I)`` drawn from
``default_rng(1000 + seed)``. The codebook for ``K`` levels is fitted by
K-means on standard normal samples, mirroring a latent prior of N(0, I).
"""

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from . import entropy
from .errors import InputError
from .models import SyntheticModelSpec, make_synthetic, pseudo_inverse_encoder
from .objectives import evaluate, mse_objective, value_and_grad
from .quantization import fit_codebook
from .search import METHODS, SearchConfig, make_optimizer, optimizer_step, search

CSV_HEADER = ("method", "latent_dim", "levels", "seed", "final_objective", "payload_bits")
SUMMARY_HEADER = ("method", "latent_dim", "levels", "n", "mean_objective", "std_objective", "mean_payload_bits")


@dataclass
class BenchConfig:
    dims: tuple = (8, 16)
    levels: tuple = (4, 16)
    seeds: tuple = tuple(range(10))
    methods: tuple = METHODS
    search: SearchConfig = field(
        default_factory=lambda: SearchConfig(step=0.05, max_iters=300, mu=0.01, convergence_tol=0.0)
    )
    expansion: int = 4
    width_mult: int = 2
    codebook_samples: int = 20000

    def validate(self):
        if not self.dims or not self.levels or not self.seeds or not self.methods:
            raise InputError("benchmark grid is empty: need at least one dim, level count, seed and method", module="bench")
        if any(d < 1 for d in self.dims) or any(k < 2 for k in self.levels):
            raise InputError("dims must be >= 1 and levels >= 2", module="bench")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InputError(f"unknown methods {bad}", module="bench")


def suite_instance(dim, seed, expansion=4, width_mult=2):
    """``(G, x, z_true)`` for one seeded instance."""
    G = make_synthetic(
        SyntheticModelSpec("random-mlp", dim, (expansion * dim,), depth=2, width=width_mult * dim, seed=seed)
    )
    z_true = np.random.default_rng(1000 + seed).standard_normal(dim)
    return G, G(z_true), z_true


def gaussian_codebook(K, n_samples=20000):
    return fit_codebook(np.random.default_rng(0).standard_normal(n_samples), K)


def run_cell(method, dim, K, seed, cfg, cb=None):
    """Final objective and Huffman payload bits for one method on one instance."""
    G, x, _ = suite_instance(dim, seed, cfg.expansion, cfg.width_mult)
    cb = cb or gaussian_codebook(K, cfg.codebook_samples)
    scfg = replace(cfg.search, method=method, seed=seed)
    zq, rep = search(x, G, cb, mse_objective, scfg)
    sym = cb.indices(zq)
    table = entropy.build_table(np.bincount(sym, minlength=cb.K))
    return rep.final_objective, table.encoded_bits(sym)


def bench_quant(cfg):
    """Rows ``(method, dim, K, seed, objective, bits)`` in grid order."""
    cfg.validate()
    rows = []
    for dim in cfg.dims:
        for K in cfg.levels:
            cb = gaussian_codebook(K, cfg.codebook_samples)
            for method in cfg.methods:
                for seed in cfg.seeds:
                    f, bits = run_cell(method, dim, K, seed, cfg, cb)
                    rows.append((method, dim, K, seed, f, bits))
    return rows


def summarize(rows):
    """Per (method, dim, K) mean and population std of the final objective."""
    cells = {}
    for method, dim, K, _, f, bits in rows:
        cells.setdefault((method, dim, K), []).append((f, bits))
    out = []
    for (method, dim, K), vals in cells.items():
        f = np.array([v[0] for v in vals])
        b = np.array([v[1] for v in vals])
        out.append((method, dim, K, len(vals), float(f.mean()), float(f.std()), float(b.mean())))
    return out


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# --- initialization study -------------------------------------------------------


def linear_instance(dim, seed, n=None, noise=0.1):
    """Orthonormal linear generator with a noisy target; its pinv encoder is the oracle."""
    n = n or 4 * dim
    G = make_synthetic(SyntheticModelSpec("orthonormal-linear", dim, (n,), seed=seed))
    rng = np.random.default_rng(2000 + seed)
    x = G(rng.standard_normal(dim)) + noise * rng.standard_normal(n)
    return G, x


def objective_trace(x, G, cb, cfg, z0):
    """Objective at the quantized iterate after each of ``cfg.max_iters`` direct steps."""
    opt = make_optimizer(cfg)
    z = cb.project(z0)
    trace = []
    for _ in range(cfg.max_iters):
        _, g = value_and_grad(x, z, G, mse_objective)
        z = cb.project(optimizer_step(opt, z, g))
        trace.append(float(evaluate(x, z, G, mse_objective)))
    return trace


def init_study(dim, seed, cb, cfg):
    """Traces from the oracle (pseudo-inverse) and a seeded random initialization."""
    G, x = linear_instance(dim, seed)
    enc = pseudo_inverse_encoder(G)
    z_oracle = enc(x).ravel()
    z_random = np.random.default_rng(seed).standard_normal(dim)
    return objective_trace(x, G, cb, cfg, z_oracle), objective_trace(x, G, cb, cfg, z_random)
