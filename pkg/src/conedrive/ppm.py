"""Binary PPM (P6) / PGM (P5) readers and writers, plus crop-and-resize.

PPM is the image interchange format for the whole toolkit: trivially
parseable, byte-exact, no external codecs. Only maxval 255 is supported.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError


def _read_token(data: bytes, pos: int):
    """Next whitespace-delimited token, skipping '#' comments."""
    n = len(data)
    while pos < n:
        ch = data[pos : pos + 1]
        if ch == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < n and not data[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise DataError("malformed PPM/PGM: unexpected end of header")
    return data[start:pos], pos


def _read_netpbm(data: bytes, magic: bytes, channels: int) -> np.ndarray:
    if data[:2] != magic:
        raise DataError(
            f"malformed image: expected magic {magic.decode()}, got {data[:2]!r}"
        )
    pos = 2
    try:
        w_tok, pos = _read_token(data, pos)
        h_tok, pos = _read_token(data, pos)
        max_tok, pos = _read_token(data, pos)
        width, height, maxval = int(w_tok), int(h_tok), int(max_tok)
    except ValueError as exc:
        raise DataError("malformed PPM/PGM header: non-numeric dimension") from exc
    if maxval != 255:
        raise DataError(f"unsupported maxval {maxval}; only 255 is handled")
    if width < 1 or height < 1:
        raise DataError(f"bad image dimensions {width}x{height}")
    pos += 1  # single whitespace byte after maxval
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) != expected:
        raise DataError(
            f"truncated image payload: expected {expected} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width)
    return arr.reshape(height, width, channels)


def read_ppm(path) -> np.ndarray:
    """Read binary P6 into (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        return _read_netpbm(fh.read(), b"P6", 3)


def write_ppm(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 3 or pixels.shape[2] != 3:
        raise DataError(f"write_ppm expects (H, W, 3) uint8, got {pixels.shape}")
    h, w, _ = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read binary P5 into (H, W) uint8."""
    with open(path, "rb") as fh:
        return _read_netpbm(fh.read(), b"P5", 1)


def write_pgm(path, pixels: np.ndarray) -> None:
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim != 2:
        raise DataError(f"write_pgm expects (H, W) uint8, got {pixels.shape}")
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def bilinear_resize(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample of (H, W, C) float data; identity when sizes match."""
    h, w = image.shape[:2]
    if (h, w) == (out_h, out_w):
        return image.copy()
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = image[y0][:, x0] * (1 - wx) + image[y0][:, x1] * wx
    bot = image[y1][:, x0] * (1 - wx) + image[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def default_center_crop(h: int, w: int) -> tuple[int, int, int, int]:
    """Centered square crop of side min(H, W): (x0, y0, width, height)."""
    side = min(h, w)
    return ((w - side) // 2, (h - side) // 2, side, side)


def load_image(path, crop: tuple[int, int, int, int] | None = None,
               target: int = 256) -> np.ndarray:
    """Read a P6 frame, crop, bilinear-resize to target x target, scale to [0,1].

    ``crop`` is (x0, y0, width, height); None means the centered square crop
    of side min(H, W). Returns (3, target, target) float32.
    """
    raw = read_ppm(path)
    h, w, _ = raw.shape
    if crop is None:
        crop = default_center_crop(h, w)
    x0, y0, cw, ch = crop
    if x0 < 0 or y0 < 0 or cw < 1 or ch < 1 or x0 + cw > w or y0 + ch > h:
        raise DataError(
            f"crop rectangle {crop} out of bounds for {w}x{h} frame"
        )
    window = raw[y0 : y0 + ch, x0 : x0 + cw].astype(np.float32) / 255.0
    resized = bilinear_resize(window, target, target)
    return np.ascontiguousarray(resized.transpose(2, 0, 1), dtype=np.float32)


def to_u8(image_chw: np.ndarray) -> np.ndarray:
    """(C, H, W) floats in [0, 1] -> (H, W, C) uint8, round-half-even."""
    clipped = np.clip(image_chw, 0.0, 1.0)
    return np.rint(clipped * 255.0).astype(np.uint8).transpose(1, 2, 0)
