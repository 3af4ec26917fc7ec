import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from latentcodec.errors import FormatError, InputError, NumericalError
from latentcodec.quantization import (
    MAX_LEVELS, Codebook, fit_codebook, project, symbol_indices, uniform_codebook, values,
)


def scan_project(centers, z):
    out = []
    for v in z:
        best = centers[0]
        for c in centers[1:]:
            if abs(v - c) < abs(v - best):  # strict: earlier (smaller) center keeps ties
                best = c
        out.append(best)
    return np.array(out)


def best_two_partition(x):
    """Optimal 2-means of sorted 1-D points: try every split point."""
    x = np.sort(x)
    best = (np.inf, None)
    for k in range(1, x.size):
        a, b = x[:k], x[k:]
        d = np.sum((a - a.mean()) ** 2) + np.sum((b - b.mean()) ** 2)
        if d < best[0]:
            best = (d, (a.mean(), b.mean()))
    return best


def test_project_examples():
    cb = Codebook([-1, 0, 1])
    assert np.array_equal(project(cb, [0.4, -0.9, 7]), [0, -1, 1])
    assert np.array_equal(Codebook([0, 1]).project([0.5]), [0])
    with pytest.raises(NumericalError):
        cb.project([np.nan])


def test_project_matches_scan():
    rng = np.random.default_rng(0)
    for seed in range(10):
        cb = Codebook(np.sort(rng.choice(np.linspace(-3, 3, 200), 7, replace=False)))
        z = rng.standard_normal(32) * 2
        assert np.array_equal(cb.project(z), scan_project(cb.centers, z))


def test_symbol_indices():
    cb = Codebook([-1, 0, 1])
    assert np.array_equal(symbol_indices(cb, [1, -1, 0]), [2, 0, 1])
    with pytest.raises(InputError):
        symbol_indices(cb, [0.5])
    cb = uniform_codebook(-1, 1, 256)
    for seed in range(5):
        zq = cb.project(np.random.default_rng(seed).uniform(-1.2, 1.2, 500))
        idx = symbol_indices(cb, zq)
        assert np.array_equal(values(cb, idx), zq)
        assert np.array_equal(symbol_indices(cb, values(cb, idx)), idx)


def test_codebook_validation():
    with pytest.raises(InputError):
        Codebook([1.0])
    with pytest.raises(InputError):
        Codebook([0.0, 0.0, 1.0])
    with pytest.raises(InputError):
        Codebook([1.0, 0.0])
    with pytest.raises(InputError):
        Codebook(np.arange(MAX_LEVELS + 1, dtype=float))


def test_serialization(tmp_path):
    cb = fit_codebook(np.random.default_rng(0).standard_normal(1000), 16)
    blob = cb.to_bytes()
    assert len(blob) == 2 + 16 * 4
    assert Codebook.from_bytes(blob) == cb
    cb.save(tmp_path / "c.bpcb")
    assert Codebook.load(tmp_path / "c.bpcb").to_bytes() == blob
    with pytest.raises(FormatError):
        Codebook.from_bytes(blob[:-1])
    unsorted = blob[:2] + blob[6:10] + blob[2:6] + blob[10:]
    with pytest.raises(FormatError):
        Codebook.from_bytes(unsorted)


def test_kmeans_examples():
    cb = fit_codebook([0, 0.1, 1.0, 1.1], 2)
    assert np.allclose(cb.centers, [0.05, 1.05], atol=1e-7)
    x = np.array([3.0, -1.0, 2.0, 2.0, 7.5])
    cb, rep = fit_codebook(x, 4, return_report=True)
    assert np.array_equal(cb.centers, [-1, 2, 3, 7.5])
    assert rep.distortion == 0.0
    s = np.random.default_rng(2).standard_normal(3000)
    assert fit_codebook(s, 8, seed=5) == fit_codebook(s, 8, seed=5)
    with pytest.raises(InputError):
        fit_codebook([1.0, 1.0, 2.0], 3)


def test_kmeans_two_clusters_match_partition_oracle():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = np.concatenate([rng.normal(-1, 0.3, rng.integers(3, 9)), rng.normal(1, 0.3, rng.integers(3, 9))])
        cb, rep = fit_codebook(x, 2, return_report=True)
        d, centers = best_two_partition(x)
        assert np.allclose(cb.centers, np.float32(centers), atol=1e-6)
        assert rep.distortion * x.size == pytest.approx(d, rel=1e-9, abs=1e-12)


def test_kmeans_distortion_monotone_and_occupied():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = np.concatenate([rng.standard_normal(400), rng.exponential(2.0, 100)])
        cb, rep = fit_codebook(x, int(rng.integers(2, 33)), return_report=True)
        h = np.array(rep.history)
        assert np.all(np.diff(h) <= 1e-12 * h[0])
    x = np.random.default_rng(0).standard_normal(5000)
    cb, rep = fit_codebook(x, 16, return_report=True)
    assert cb.K == 16 and np.all(rep.occupancy > 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=40),
       st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=12, unique=True))
def test_projection_properties(z, centers):
    c = np.unique(np.float32(centers).astype(float))
    if c.size < 2 or np.min(np.diff(c)) <= 1e-6:
        return
    cb = Codebook(c)
    q = cb.project(z)
    assert np.array_equal(cb.project(q), q)
    assert np.all(np.isin(q, cb.centers))
    err = np.abs(np.asarray(z) - q)
    assert np.all(err[:, None] <= np.abs(np.asarray(z)[:, None] - cb.centers[None, :]) + 1e-12)
