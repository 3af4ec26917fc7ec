import numpy as np
import pytest

from latentcodec import bench
from latentcodec.errors import InputError
from latentcodec.search import SearchConfig


def small(**kw):
    base = dict(dims=(4,), levels=(4,), seeds=(0, 1), search=SearchConfig(step=0.05, max_iters=30, mu=0.01, convergence_tol=0.0))
    return bench.BenchConfig(**{**base, **kw})


def test_row_count_and_order():
    cfg = small(dims=(2, 4), levels=(2, 4))
    rows = bench.bench_quant(cfg)
    assert len(rows) == 3 * 2 * 2 * 2
    assert [r[:4] for r in rows[:3]] == [("direct", 2, 2, 0), ("direct", 2, 2, 1), ("admm", 2, 2, 0)]
    for method, dim, K, seed, f, bits in rows:
        assert f >= 0 and 0 < bits <= dim * max(1, (K - 1).bit_length())


def test_csv_is_deterministic():
    a = bench.to_csv(bench.CSV_HEADER, bench.bench_quant(small()))
    b = bench.to_csv(bench.CSV_HEADER, bench.bench_quant(small()))
    assert a == b
    assert a.splitlines()[0] == ",".join(bench.CSV_HEADER)


def test_empty_grid_rejected():
    with pytest.raises(InputError):
        bench.bench_quant(small(seeds=()))
    with pytest.raises(InputError):
        bench.bench_quant(small(methods=("bogus",)))


def test_summary_statistics():
    rows = bench.bench_quant(small(seeds=(0, 1, 2)))
    summary = bench.summarize(rows)
    assert len(summary) == 3
    for method, dim, K, n, mean, std, _ in summary:
        vals = np.array([r[4] for r in rows if r[0] == method])
        assert n == 3
        assert mean == pytest.approx(vals.mean()) and std == pytest.approx(vals.std())


def test_suite_instance_is_reproducible():
    G1, x1, z1 = bench.suite_instance(8, 3)
    G2, x2, z2 = bench.suite_instance(8, 3)
    assert bytes(G1.model_id) == bytes(G2.model_id)
    assert np.array_equal(x1, x2) and np.array_equal(z1, z2)
    assert x1.shape == (32,)


def test_init_study_traces():
    cb = bench.gaussian_codebook(16)
    oracle, rnd = bench.init_study(4, 0, cb, SearchConfig(method="direct", step=0.01, max_iters=10))
    assert len(oracle) == len(rnd) == 10
    assert all(np.isfinite(oracle)) and all(np.isfinite(rnd))


def test_default_grid_ten_seeds_admm_beats_direct():
    cfg = bench.BenchConfig()
    assert cfg.dims == (8, 16) and cfg.levels == (4, 16) and len(cfg.seeds) == 10
    rows = bench.bench_quant(cfg)
    assert len(rows) == 3 * 2 * 2 * 10
    means = {(m, d, K): mean for m, d, K, _, mean, _, _ in bench.summarize(rows)}
    for d in cfg.dims:
        for K in cfg.levels:
            assert means[("admm", d, K)] <= means[("direct", d, K)]
