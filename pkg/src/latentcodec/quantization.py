"""Scalar non-uniform codebooks: 1-D K-means fitting and nearest-center projection."""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, NumericalError, TruncatedError

MAX_LEVELS = 65535  # K is stored as u16


class Codebook:
    """Sorted scalar quantization centers (the quantized set S).

    Centers are held at float32 precision, the precision they are stored
    with, so that the encoder and decoder project onto identical values.
    """

    def __init__(self, centers):
        c = np.asarray(centers, dtype=np.float64).ravel()
        c = c.astype(np.float32).astype(np.float64)
        if not 2 <= c.size <= MAX_LEVELS:
            raise InputError(f"codebook needs 2..{MAX_LEVELS} levels, got {c.size}", module="quantization")
        if not np.all(np.isfinite(c)):
            raise InputError("codebook centers must be finite", module="quantization")
        if np.any(np.diff(c) <= 1e-9):
            raise InputError("codebook centers must be strictly increasing", module="quantization")
        c.setflags(write=False)
        self.centers = c
        self._mids = (c[:-1] + c[1:]) / 2.0

    @property
    def K(self):
        return self.centers.size

    def __len__(self):
        return self.centers.size

    def __eq__(self, other):
        return isinstance(other, Codebook) and np.array_equal(self.centers, other.centers)

    def __repr__(self):
        return f"Codebook(K={self.K}, range=[{self.centers[0]:.4g}, {self.centers[-1]:.4g}])"

    def indices(self, z):
        """Index of the nearest center for every element (ties go to the smaller one)."""
        z = np.asarray(z, dtype=np.float64)
        if np.any(np.isnan(z)):
            raise NumericalError("cannot quantize NaN", module="quantization")
        return np.searchsorted(self._mids, z, side="left")

    def project(self, z):
        return self.centers[self.indices(z)]

    def to_bytes(self):
        return struct.pack("<H", self.K) + self.centers.astype("<f4").tobytes()

    @classmethod
    def from_bytes(cls, data, block="codebook"):
        data = bytes(data)
        if len(data) < 2:
            raise TruncatedError("codebook level count missing", block=block, offset=0, module="quantization")
        (k,) = struct.unpack_from("<H", data)
        if len(data) != 2 + 4 * k:
            raise TruncatedError(
                f"codebook declares {k} levels but carries {len(data) - 2} bytes of centers",
                block=block, offset=2, module="quantization",
            )
        centers = np.frombuffer(data, dtype="<f4", offset=2, count=k)
        try:
            return cls(centers)
        except InputError as exc:
            raise FormatError(str(exc), block=block, offset=2, module="quantization") from exc

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read codebook {path}: {exc.strerror}", module="quantization") from exc
        return cls.from_bytes(data)


def project(cb, z):
    """Replace every element of ``z`` by its nearest codebook center."""
    return cb.project(z)


def symbol_indices(cb, zq, atol=1e-9):
    """Codebook indices of an already-quantized vector."""
    zq = np.asarray(zq, dtype=np.float64)
    idx = cb.indices(zq)
    bad = np.abs(cb.centers[idx] - zq) > atol
    if np.any(bad):
        pos = int(np.flatnonzero(bad)[0])
        raise InputError(f"element {pos} ({zq.flat[pos]!r}) is not a codebook center", module="quantization")
    return idx


def values(cb, idx):
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= cb.K):
        raise InputError(f"symbol index out of range [0, {cb.K})", module="quantization")
    return cb.centers[idx]


@dataclass
class FitReport:
    iterations: int
    distortion: float
    history: list = field(default_factory=list)
    occupancy: np.ndarray = None
    reseeded: int = 0


def _distortion(samples, centers, mids):
    a = np.searchsorted(mids, samples, side="left")
    d = samples - centers[a]
    return a, d * d


def fit_codebook(samples, K, max_iters=100, seed=0, return_report=False):
    """Lloyd's algorithm in one dimension.

    Centers start at ``K`` evenly spaced quantiles of the distinct sample
    values. A cluster that empties is re-seeded at the sample currently
    farthest from its center. ``seed`` is accepted for interface symmetry;
    the procedure itself is deterministic.
    """
    del seed
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    if not np.all(np.isfinite(x)):
        raise InputError("samples must be finite", module="quantization")
    K = int(K)
    if not 2 <= K <= MAX_LEVELS:
        raise InputError(f"K must be in [2, {MAX_LEVELS}], got {K}", module="quantization")
    distinct = np.unique(x)
    if distinct.size < K:
        raise InputError(f"need at least {K} distinct samples, got {distinct.size}", module="quantization")

    centers = distinct[((np.arange(K) + 0.5) * distinct.size / K).astype(np.int64)]
    mids = (centers[:-1] + centers[1:]) / 2
    assign, sq = _distortion(x, centers, mids)
    history = [float(sq.mean())]
    reseeded = 0
    it = 0
    for it in range(1, max_iters + 1):
        counts = np.bincount(assign, minlength=K)
        sums = np.bincount(assign, weights=x, minlength=K)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz]
        empty = np.flatnonzero(~nz)
        if empty.size:
            far = sq.copy()
            for e in empty:
                j = int(np.argmax(far))
                new[e] = x[j]
                far[x == x[j]] = -1.0
                reseeded += 1
        new.sort()
        mids = (new[:-1] + new[1:]) / 2
        new_assign, sq = _distortion(x, new, mids)
        history.append(float(sq.mean()))
        centers = new
        if np.array_equal(new_assign, assign) and not empty.size:
            break
        assign = new_assign

    cb = Codebook(centers)
    if not return_report:
        return cb
    occ = np.bincount(cb.indices(x), minlength=cb.K)
    rep = FitReport(it, history[-1], history, occ, reseeded)
    return cb, rep


def uniform_codebook(lo, hi, K):
    return Codebook(np.linspace(lo, hi, K))
