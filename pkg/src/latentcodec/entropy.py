"""Canonical Huffman coding of symbol indices and the ``.bpgc`` container.

Bits are packed most-significant-bit first. The container is a sequence of
four blocks (header, codebook, huffman, payload), each followed by its own
CRC-32 so that a corrupted byte is reported against the block it lives in.
See ``docs/FORMATS.md`` for the byte layout.
"""

import heapq
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    DigestMismatchError,
    FormatError,
    InputError,
    TruncatedError,
    UnsupportedVersionError,
)
from .quantization import Codebook

MAGIC = b"BPGC"
VERSION = 1
SIGNAL_TYPES = ("image", "speech")


# --- Huffman -------------------------------------------------------------------


def huffman_lengths(freqs):
    """Optimal prefix-code lengths for ``freqs`` (0 for absent symbols).

    Ties are broken by ``(count, creation order)`` where leaves are created in
    symbol order, which makes the result a pure function of ``freqs``.
    """
    freqs = [int(f) for f in freqs]
    if any(f < 0 for f in freqs):
        raise InputError("frequencies must be nonnegative", module="entropy")
    present = [i for i, f in enumerate(freqs) if f > 0]
    if not present:
        raise InputError("cannot build a code from all-zero counts", module="entropy")
    lengths = [0] * len(freqs)
    if len(present) == 1:
        lengths[present[0]] = 1
        return lengths
    # node ids: leaves are symbol indices, internal nodes numbered from len(freqs)
    heap = [(freqs[i], i) for i in present]
    heapq.heapify(heap)
    parent = {}
    node = len(freqs)
    while len(heap) > 1:
        fa, a = heapq.heappop(heap)
        fb, b = heapq.heappop(heap)
        parent[a] = parent[b] = node
        heapq.heappush(heap, (fa + fb, node))
        node += 1
    root = heap[0][1]
    depth = {root: 0}
    for n in range(node - 1, len(freqs) - 1, -1):
        if n != root:
            depth[n] = depth[parent[n]] + 1
    for s in present:
        lengths[s] = depth[parent[s]] + 1
    return lengths


def canonical_codes(lengths):
    """Canonical code value for each symbol (``None`` where length is 0)."""
    codes = [None] * len(lengths)
    code = 0
    prev = 0
    for length, sym in sorted((l, s) for s, l in enumerate(lengths) if l > 0):
        code <<= length - prev
        codes[sym] = code
        code += 1
        prev = length
    return codes


def kraft_ok(lengths):
    present = [l for l in lengths if l > 0]
    if not present:
        return False
    top = max(present)
    return sum(1 << (top - l) for l in present) <= (1 << top)


class HuffmanTable:
    def __init__(self, code_lengths):
        self.code_lengths = [int(l) for l in code_lengths]
        if any(not 0 <= l <= 255 for l in self.code_lengths):
            raise InputError("code lengths must fit in a byte", module="entropy")
        if not kraft_ok(self.code_lengths):
            raise InputError("code lengths violate the Kraft inequality", module="entropy")
        self.codes = canonical_codes(self.code_lengths)
        # decoder tables: for each length, first code and the symbols in canonical order
        by_len = {}
        for length, sym in sorted((l, s) for s, l in enumerate(self.code_lengths) if l > 0):
            by_len.setdefault(length, []).append(sym)
        self._decode = {}
        for length, syms in by_len.items():
            first = self.codes[syms[0]]
            self._decode[length] = (first, syms)
        self.max_length = max(by_len)

    @classmethod
    def from_frequencies(cls, freqs):
        return cls(huffman_lengths(freqs))

    def __eq__(self, other):
        return isinstance(other, HuffmanTable) and self.code_lengths == other.code_lengths

    def __len__(self):
        return len(self.code_lengths)

    def expected_length(self, freqs):
        freqs = np.asarray(freqs, dtype=np.float64)
        return float(np.dot(freqs, self.code_lengths) / freqs.sum())

    def encoded_bits(self, symbols):
        lens = np.asarray(self.code_lengths)[np.asarray(symbols, dtype=np.int64)]
        return int(lens.sum())

    def to_bytes(self):
        return bytes(self.code_lengths)


def build_table(frequencies):
    return HuffmanTable.from_frequencies(frequencies)


class BitWriter:
    def __init__(self):
        self.buf = bytearray()
        self.acc = 0
        self.nacc = 0
        self.nbits = 0

    def write(self, value, nbits):
        self.acc = (self.acc << nbits) | value
        self.nacc += nbits
        self.nbits += nbits
        while self.nacc >= 8:
            self.nacc -= 8
            self.buf.append((self.acc >> self.nacc) & 0xFF)
        self.acc &= (1 << self.nacc) - 1

    def getvalue(self):
        out = bytes(self.buf)
        if self.nacc:
            out += bytes([(self.acc << (8 - self.nacc)) & 0xFF])
        return out


def encode(table, symbols):
    """Encode ``symbols``; returns ``(payload_bytes, bit_count)``."""
    w = BitWriter()
    codes, lens = table.codes, table.code_lengths
    for s in np.asarray(symbols, dtype=np.int64).ravel().tolist():
        if not 0 <= s < len(lens) or lens[s] == 0:
            raise InputError(f"symbol {s} has no code in the table", module="entropy")
        w.write(codes[s], lens[s])
    return w.getvalue(), w.nbits


def decode(table, payload, n, bit_count=None):
    """Decode ``n`` symbols from ``payload`` (at most ``bit_count`` bits)."""
    payload = bytes(payload)
    total = len(payload) * 8 if bit_count is None else int(bit_count)
    if total > len(payload) * 8:
        raise TruncatedError("bit count exceeds payload size", block="payload", module="entropy")
    out = np.empty(n, dtype=np.int64)
    pos = 0
    dec = table._decode
    maxlen = table.max_length
    for i in range(n):
        code = 0
        length = 0
        while True:
            if pos >= total:
                raise TruncatedError(f"payload ends inside symbol {i}", block="payload", offset=pos // 8, module="entropy")
            code = (code << 1) | ((payload[pos >> 3] >> (7 - (pos & 7))) & 1)
            pos += 1
            length += 1
            entry = dec.get(length)
            if entry is not None:
                first, syms = entry
                k = code - first
                if 0 <= k < len(syms):
                    out[i] = syms[k]
                    break
            if length >= maxlen:
                raise FormatError(f"invalid code at bit {pos - length}", block="payload", offset=(pos - length) // 8, module="entropy")
    return out, pos


def entropy_bits(symbols):
    """Empirical zeroth-order entropy in bits per symbol."""
    _, counts = np.unique(np.asarray(symbols), return_counts=True)
    p = counts / counts.sum()
    return float(-(p * np.log2(p)).sum())


# --- container -------------------------------------------------------------------


@dataclass
class Bitstream:
    """Parsed contents of a ``.bpgc`` file."""

    signal_type: str
    shape: tuple
    gain: float
    latent_dim: int
    n_latents: int
    model_id: bytes
    codebook: Codebook
    table: HuffmanTable
    payload: bytes
    payload_bits: int

    @property
    def n_symbols(self):
        return self.latent_dim * self.n_latents

    def __eq__(self, other):
        if not isinstance(other, Bitstream):
            return NotImplemented
        return (
            self.signal_type == other.signal_type
            and tuple(self.shape) == tuple(other.shape)
            and np.float32(self.gain) == np.float32(other.gain)
            and self.latent_dim == other.latent_dim
            and self.n_latents == other.n_latents
            and self.model_id == other.model_id
            and self.codebook == other.codebook
            and self.table == other.table
            and self.payload == other.payload
            and self.payload_bits == other.payload_bits
        )


def _block(body):
    return body + struct.pack("<I", zlib.crc32(body))


def write_container(bs):
    """Serialize a :class:`Bitstream` to bytes."""
    if bs.signal_type not in SIGNAL_TYPES:
        raise InputError(f"signal_type must be one of {SIGNAL_TYPES}", module="entropy")
    if bs.latent_dim <= 0 or bs.n_latents <= 0:
        raise InputError("bitstream must carry at least one latent element", module="entropy")
    if len(bs.model_id) != 8:
        raise InputError("model_id must be 8 bytes", module="entropy")
    if len(bs.table) != bs.codebook.K:
        raise InputError("huffman table size differs from codebook size", module="entropy")
    if not bs.payload_bits <= 8 * len(bs.payload) < bs.payload_bits + 8:
        raise InputError("payload bit count inconsistent with payload size", module="entropy")
    header = MAGIC + struct.pack("<BBB", VERSION, SIGNAL_TYPES.index(bs.signal_type), len(bs.shape))
    header += b"".join(struct.pack("<I", d) for d in bs.shape)
    header += struct.pack("<fII", bs.gain, bs.latent_dim, bs.n_latents) + bytes(bs.model_id)
    payload = struct.pack("<Q", bs.payload_bits) + bytes(bs.payload)
    return b"".join(
        _block(b) for b in (header, bs.codebook.to_bytes(), bs.table.to_bytes(), payload)
    )


class _Cursor:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, block):
        if self.pos + n > len(self.data):
            raise TruncatedError(f"need {n} bytes, {len(self.data) - self.pos} left", block=block, offset=self.pos, module="entropy")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, block):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), block))

    def check_crc(self, start, block):
        body = self.data[start : self.pos]
        (crc,) = self.unpack("<I", block)
        if zlib.crc32(body) != crc:
            raise DigestMismatchError("checksum mismatch", block=block, offset=start, module="entropy")


def parse_container(data):
    """Parse and validate ``.bpgc`` bytes into a :class:`Bitstream`."""
    data = bytes(data)
    c = _Cursor(data)
    magic = c.take(4, "header")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}", block="header", offset=0, module="entropy")
    version, stype, rank = c.unpack("<BBB", "header")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", block="header", offset=4, module="entropy")
    shape = c.unpack(f"<{rank}I", "header") if rank else ()
    gain, latent_dim, n_latents = c.unpack("<fII", "header")
    model_id = c.take(8, "header")
    c.check_crc(0, "header")
    if stype >= len(SIGNAL_TYPES):
        raise FormatError(f"unknown signal type {stype}", block="header", offset=5, module="entropy")
    if latent_dim == 0 or n_latents == 0:
        raise FormatError("empty payload: latent_dim or latent count is zero", block="header", module="entropy")
    if not np.isfinite(gain) or gain <= 0:
        raise FormatError(f"gain must be positive and finite, got {gain}", block="header", module="entropy")

    start = c.pos
    (k,) = c.unpack("<H", "codebook")
    c.take(4 * k, "codebook")
    c.check_crc(start, "codebook")
    codebook = Codebook.from_bytes(data[start : c.pos - 4], block="codebook")

    start = c.pos
    lengths = list(c.take(k, "huffman"))
    c.check_crc(start, "huffman")
    if not kraft_ok(lengths):
        raise FormatError("code lengths violate the Kraft inequality", block="huffman", offset=start, module="entropy")
    table = HuffmanTable(lengths)

    start = c.pos
    (nbits,) = c.unpack("<Q", "payload")
    if len(data) - c.pos < 4:
        raise TruncatedError("payload block missing checksum", block="payload", offset=c.pos, module="entropy")
    payload = c.take(len(data) - c.pos - 4, "payload")
    c.check_crc(start, "payload")
    if not nbits <= 8 * len(payload) < nbits + 8:
        raise FormatError(f"payload bit count {nbits} inconsistent with {len(payload)} bytes", block="payload", offset=start, module="entropy")
    return Bitstream(
        SIGNAL_TYPES[stype], tuple(shape), float(gain), latent_dim, n_latents, bytes(model_id),
        codebook, table, payload, nbits,
    )


def read_symbols(bs):
    """Decode all symbol indices of a parsed bitstream, requiring exact bit use."""
    symbols, used = decode(bs.table, bs.payload, bs.n_symbols, bs.payload_bits)
    if used != bs.payload_bits:
        raise FormatError(f"payload has {bs.payload_bits - used} unused bits", block="payload", module="entropy")
    return symbols
