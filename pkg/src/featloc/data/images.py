"""Image file I/O: 16-bit binary PPM (lossless for our quantized floats)
and 8-bit PNG via Pillow."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, UnidentifiedImageError

PPM_MAXVAL = 65535


class UnreadableImage(ValueError):
    """Raised when an image file cannot be decoded."""


def quantize16(image: np.ndarray) -> np.ndarray:
    """Snap a float image in [0,1] onto the 16-bit grid (as float32).

    Images written to 16-bit PPM after this round-trip bit-exactly.
    """
    q = np.round(np.asarray(image, dtype=np.float64) * PPM_MAXVAL)
    return (q / PPM_MAXVAL).astype(np.float32)


def write_image(path, image: np.ndarray):
    """Write an H x W x 3 float image in [0,1]; format chosen by extension."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got {image.shape}")
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        data = np.round(image.astype(np.float64) * PPM_MAXVAL).astype(">u2")
        h, w = image.shape[:2]
        with open(path, "wb") as f:
            f.write(f"P6\n{w} {h}\n{PPM_MAXVAL}\n".encode())
            f.write(data.tobytes())
    elif ext == ".png":
        data = np.round(image.astype(np.float64) * 255.0).astype(np.uint8)
        Image.fromarray(data, mode="RGB").save(path)
    else:
        raise ValueError(f"unsupported image extension {ext!r}")


def _read_ppm16(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # then a single whitespace byte before the pixel payload
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise UnreadableImage(f"{path}: truncated header")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise UnreadableImage(f"{path}: not a binary PPM")
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise UnreadableImage(f"{path}: bad header") from None
    if maxval != PPM_MAXVAL:
        raise UnreadableImage(f"{path}: expected maxval {PPM_MAXVAL}, got {maxval}")
    expected = w * h * 3 * 2
    payload = raw[pos : pos + expected]
    if len(payload) != expected:
        raise UnreadableImage(f"{path}: truncated pixel data")
    data = np.frombuffer(payload, dtype=">u2").reshape(h, w, 3)
    return (data.astype(np.float32) / PPM_MAXVAL).astype(np.float32)


def read_image(path) -> np.ndarray:
    """Read an image file to an H x W x 3 float32 array in [0,1]."""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ppm":
        return _read_ppm16(path)
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise UnreadableImage(f"{path}: {e}") from None
    return arr / 255.0
