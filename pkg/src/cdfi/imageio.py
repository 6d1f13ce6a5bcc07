"""Image files: binary portable pixmaps (P6) natively, PNG through Pillow if installed.

Images are float arrays shaped (3, H, W) in [0, 1]. Writing clamps and rounds
to 8 bits, so ``read(write(x)) == round(clip(x) * 255) / 255`` exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError, DimensionError, ImageParseError

_WHITESPACE = b" \t\n\r\v\f"


def quantize(image) -> np.ndarray:
    """8-bit values for a (3, H, W) float image."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) image, got {arr.shape}")
    return np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_ppm(image) -> bytes:
    q = quantize(image)
    _, h, w = q.shape
    return b"P6\n%d %d\n255\n" % (w, h) + np.ascontiguousarray(q.transpose(1, 2, 0)).tobytes()


def decode_ppm(blob: bytes, path=None) -> np.ndarray:
    """Parse a P6 file; malformed input raises :class:`ImageParseError` with the byte offset."""
    pos = 0

    def fail(msg, at):
        raise ImageParseError(msg, offset=at, path=path)

    if blob[:2] != b"P6":
        fail("missing P6 magic number", 0)
    pos = 2
    fields = []
    while len(fields) < 3:
        if pos >= len(blob):
            fail("header ends before width, height and maxval", pos)
        c = blob[pos:pos + 1]
        if c in _WHITESPACE:
            pos += 1
        elif c == b"#":
            end = blob.find(b"\n", pos)
            pos = len(blob) if end < 0 else end + 1
        elif c.isdigit():
            start = pos
            while pos < len(blob) and blob[pos:pos + 1].isdigit():
                pos += 1
            fields.append((int(blob[start:pos]), start))
        else:
            fail(f"unexpected byte {c!r} in header", pos)
    if pos >= len(blob) or blob[pos:pos + 1] not in _WHITESPACE:
        fail("header must end with a single whitespace byte", pos)
    pos += 1
    (w, w_at), (h, h_at), (maxval, m_at) = fields
    if w < 1:
        fail("width must be positive", w_at)
    if h < 1:
        fail("height must be positive", h_at)
    if not 1 <= maxval <= 65535:
        fail(f"maxval {maxval} outside 1..65535", m_at)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    need = w * h * 3 * dtype.itemsize
    have = len(blob) - pos
    if have < need:
        fail(f"pixel data truncated: need {need} bytes, found {have}", len(blob))
    if have > need:
        fail(f"{have - need} unexpected bytes after pixel data", pos + need)
    pixels = np.frombuffer(blob, dtype=dtype, count=w * h * 3, offset=pos).reshape(h, w, 3)
    if pixels.max(initial=0) > maxval:
        fail("sample exceeds maxval", pos)
    return (pixels.astype(np.float32) / np.float32(maxval)).transpose(2, 0, 1).copy()


def read_image(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such image")
    if path.suffix.lower() == ".png":
        return _read_png(path)
    return decode_ppm(path.read_bytes(), path=str(path))


def write_image(image, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".png":
        _write_png(image, path)
    else:
        path.write_bytes(encode_ppm(image))
    return path


def _pil():
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise DataError("PNG support needs Pillow (pip install Pillow)") from exc
    return Image


def _read_png(path: Path) -> np.ndarray:
    Image = _pil()
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as exc:
        raise DataError(f"{path}: cannot decode PNG ({exc})") from exc
    return arr.transpose(2, 0, 1).copy()


def _write_png(image, path: Path) -> None:
    Image = _pil()
    Image.fromarray(quantize(image).transpose(1, 2, 0)).save(path)
