"""8-bit image files <-> float tensors in [0, 1].

PNG goes through Pillow; binary PGM/PPM (P5/P6) is handled here directly.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .tensor import Tensor4


class ImageFormatError(ValueError):
    """Unsupported, unreadable or corrupt image file."""

    def __init__(self, path, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = str(path)
        self.reason = reason


def to_uint8(values: np.ndarray) -> np.ndarray:
    """Quantise [0, 1] floats to 8 bits with round-half-up."""
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _read_pnm(path, raw: bytes) -> np.ndarray:
    # header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError(path, "truncated PNM header")
        tokens.append(raw[start:pos])
    pos += 1
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError(path, "malformed PNM header") from None
    if maxval != 255:
        raise ImageFormatError(path, f"only 8-bit PNM is supported (maxval {maxval})")
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    data = raw[pos : pos + count]
    if len(data) != count:
        raise ImageFormatError(path, "truncated PNM pixel data")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, channels)
    return arr


def read_image(path, dtype=np.float64) -> Tensor4:
    """Read an 8-bit grayscale or RGB file as a ``(1, c, h, w)`` tensor, c in {1, 3}."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ImageFormatError(path, f"cannot read file ({exc.strerror})") from None
    if raw[:2] in (b"P5", b"P6"):
        arr = _read_pnm(path, raw)
    else:
        from PIL import Image, UnidentifiedImageError

        try:
            with Image.open(io.BytesIO(raw)) as im:
                im.load()
                if im.mode == "L":
                    arr = np.asarray(im)[:, :, None]
                elif im.mode == "RGB":
                    arr = np.asarray(im)
                elif im.mode in ("RGBA", "P", "LA"):
                    arr = np.asarray(im.convert("RGB"))
                else:
                    raise ImageFormatError(path, f"unsupported image mode {im.mode!r}")
        except (UnidentifiedImageError, OSError, SyntaxError) as exc:
            raise ImageFormatError(path, f"unsupported or corrupt image ({exc})") from None
    chw = np.ascontiguousarray(arr.transpose(2, 0, 1)[None])
    return Tensor4(chw.astype(dtype) / 255.0)


def write_image(path, tensor) -> None:
    """Write a ``(1, c, h, w)`` tensor (c in {1, 3}) as PNG, or PGM/PPM by suffix."""
    data = tensor.data if isinstance(tensor, Tensor4) else np.asarray(tensor)
    if data.ndim == 4:
        if data.shape[0] != 1:
            raise ValueError(f"write_image takes a single image, got batch of {data.shape[0]}")
        data = data[0]
    if data.ndim == 2:
        data = data[None]
    if data.shape[0] not in (1, 3):
        raise ValueError(f"write_image needs 1 or 3 channels, got shape {data.shape}")
    pix = to_uint8(data).transpose(1, 2, 0)
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in (".pgm", ".ppm", ".pnm"):
        magic = b"P5" if pix.shape[2] == 1 else b"P6"
        h, w = pix.shape[:2]
        path.write_bytes(magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(pix).tobytes())
        return
    from PIL import Image

    img = Image.fromarray(np.ascontiguousarray(pix[:, :, 0] if pix.shape[2] == 1 else pix))
    # fixed compression settings keep output byte-identical across runs
    img.save(path, format="PNG", optimize=False, compress_level=6)
