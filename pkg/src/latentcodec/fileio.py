"""Reading and writing signal files: 16-bit mono WAV and binary PPM/PGM."""

import wave
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

WAV_RATE = 16000


def _read(path):
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}", module="fileio") from exc


# --- WAV -----------------------------------------------------------------------


def read_wav(path):
    """Return ``(samples in [-1, 1), sample_rate)`` for 16-bit mono PCM."""
    try:
        with wave.open(str(path), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2:
                raise FormatError(
                    f"{path}: need 16-bit mono PCM, got {w.getnchannels()} ch x {8 * w.getsampwidth()} bit",
                    block="wav", module="fileio",
                )
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except FileNotFoundError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}", module="fileio") from exc
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: malformed WAV ({exc})", block="wav", module="fileio") from exc
    pcm = np.frombuffer(raw, dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def to_pcm16(samples):
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, samples, rate=WAV_RATE):
    try:
        with wave.open(str(path), "wb") as w:
            w.setnchannels(1)
            w.setsampwidth(2)
            w.setframerate(int(rate))
            w.writeframes(to_pcm16(samples).tobytes())
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}", module="fileio") from exc


# --- PPM / PGM -----------------------------------------------------------------


def _token(data, pos):
    """Next whitespace-delimited header token, skipping ``#`` comments."""
    n = len(data)
    while pos < n:
        c = data[pos : pos + 1]
        if c.isspace():
            pos += 1
        elif c == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise FormatError("unexpected end of header", block="pnm", offset=start, module="fileio")
    return data[start:pos], start, pos


def parse_pnm(data):
    """Decode binary P6 (RGB) or P5 (gray) bytes to ``(H, W, 3)`` / ``(H, W)`` uint8."""
    data = bytes(data)
    if data[:2] not in (b"P6", b"P5"):
        raise FormatError(f"bad magic {data[:2]!r}, expected P6 or P5", block="pnm", offset=0, module="fileio")
    channels = 3 if data[:2] == b"P6" else 1
    pos = 2
    fields = []
    for name in ("width", "height", "maxval"):
        tok, at, pos = _token(data, pos)
        if not tok.isdigit():
            raise FormatError(f"{name} {tok!r} is not a number", block="pnm", offset=at, module="fileio")
        fields.append((int(tok), at))
    (w, _), (h, at_h), (maxval, at_m) = fields
    if w <= 0 or h <= 0:
        raise FormatError(f"image size {w}x{h} must be positive", block="pnm", offset=at_h, module="fileio")
    if maxval != 255:
        raise FormatError(f"maxval {maxval} unsupported, need 255", block="pnm", offset=at_m, module="fileio")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after header", block="pnm", offset=pos, module="fileio")
    pos += 1
    need = w * h * channels
    have = len(data) - pos
    if have != need:
        raise FormatError(
            f"pixel data is {have} bytes, header implies {need}", block="pnm", offset=pos + min(have, need),
            module="fileio",
        )
    px = np.frombuffer(data, dtype=np.uint8, offset=pos).reshape(h, w, channels)
    return px if channels == 3 else px[:, :, 0]


def read_pnm(path):
    try:
        return parse_pnm(_read(path))
    except FormatError as exc:
        raise FormatError(f"{path}: {exc.reason}", block=exc.block, offset=exc.offset, module="fileio") from exc


def pnm_bytes(pixels):
    px = np.asarray(pixels)
    if px.dtype != np.uint8:
        raise InputError(f"pixels must be uint8, got {px.dtype}", module="fileio")
    if px.ndim == 3 and px.shape[2] == 1:
        px = px[:, :, 0]
    if px.ndim == 2:
        magic = b"P5"
    elif px.ndim == 3 and px.shape[2] == 3:
        magic = b"P6"
    else:
        raise InputError(f"cannot store image of shape {px.shape}", module="fileio")
    head = b"%s\n%d %d\n255\n" % (magic, px.shape[1], px.shape[0])
    return head + np.ascontiguousarray(px).tobytes()


def write_pnm(path, pixels):
    try:
        Path(path).write_bytes(pnm_bytes(pixels))
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}", module="fileio") from exc


def read_image(path):
    """PPM/PGM natively; PNG when Pillow is importable."""
    if str(path).lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError as exc:
            raise InputError("PNG support needs Pillow; use PPM/PGM instead", module="fileio") from exc
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"))
    return read_pnm(path)


def write_image(path, pixels):
    if str(path).lower().endswith(".png"):
        try:
            from PIL import Image
        except ImportError as exc:
            raise InputError("PNG support needs Pillow; use PPM/PGM instead", module="fileio") from exc
        Image.fromarray(np.asarray(pixels)).save(path)
        return
    write_pnm(path, pixels)
