"""Probe post-processing: 8-bit quantization and baseline JPEG distortion.

The JPEG model is the lossy half of a baseline luminance codec: level
shift, 8x8 orthonormal DCT-II, division by the IJG quality-scaled table,
rounding, dequantization and inverse DCT.  Entropy coding is lossless and
therefore omitted.  All rounding is half away from zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .exceptions import DataError, UsageError

# ITU-T T.81 Annex K, table K.1
LUMA_BASE_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.int64)

MNIST_SHAPE = (28, 28)


def round_half_away(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize_png8(img):
    """Snap intensities in [0, 1] to the nearest multiple of 1/255."""
    a = np.asarray(img, dtype=np.float64)
    return round_half_away(np.clip(a, 0.0, 1.0) * 255.0) / 255.0


def jpeg_quant_table(q: int) -> np.ndarray:
    """IJG scaling of the standard luminance table for quality ``q``."""
    if isinstance(q, bool) or int(q) != q or not 1 <= q <= 100:
        raise UsageError(f"JPEG quality must be an integer in 1..100, got {q!r}")
    q = int(q)
    scale = 5000 // q if q < 50 else 200 - 2 * q
    return np.clip((LUMA_BASE_TABLE * scale + 50) // 100, 1, 255)


@lru_cache(maxsize=1)
def dct_matrix() -> np.ndarray:
    """Orthonormal 8-point DCT-II basis, rows indexed by frequency."""
    k = np.arange(8)[:, None]
    n = np.arange(8)[None, :]
    c = np.cos((2 * n + 1) * k * np.pi / 16) * np.sqrt(2.0 / 8)
    c[0] /= np.sqrt(2.0)
    return c


def _to_stack(img, shape):
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 1:
        return a.reshape((1,) + shape), "flat1"
    if a.ndim == 2 and a.shape == shape:
        return a[None], "grid"
    if a.ndim == 2:
        return a.reshape((a.shape[0],) + shape), "flatN"
    if a.ndim == 3:
        return a, "stack"
    raise UsageError(f"cannot interpret array of shape {a.shape} as grayscale images")


def _from_stack(stack, kind, orig_shape):
    if kind == "grid":
        return stack[0]
    if kind in ("flat1", "flatN"):
        return stack.reshape(orig_shape)
    return stack


def block_dct(stack: np.ndarray) -> np.ndarray:
    """Per-block DCT of an ``(n, H, W)`` stack with ``H, W`` multiples of 8."""
    n, h, w = stack.shape
    return _dct_blocks(stack.reshape(n, h // 8, 8, w // 8, 8), dct_matrix()).reshape(n, h, w)


def _dct_blocks(blocks, c):
    # blocks: (n, bh, 8, bw, 8) -> coefficients with the same layout
    return np.einsum("ui,nbicj,vj->nbucv", c, blocks, c)


def _idct_blocks(coef, c):
    return np.einsum("ui,nbucv,vj->nbicj", c, coef, c)


def _pad_edge(stack):
    n, h, w = stack.shape
    ph, pw = (-h) % 8, (-w) % 8
    if ph or pw:
        stack = np.pad(stack, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return stack


def jpeg_coefficients(img, q: int, shape=MNIST_SHAPE) -> np.ndarray:
    """Quantized DCT coefficient indices (integers) for each 8x8 block."""
    stack, _ = _to_stack(img, shape)
    table = jpeg_quant_table(q)
    padded = _pad_edge(stack * 255.0 - 128.0)
    n, h, w = padded.shape
    coef = _dct_blocks(padded.reshape(n, h // 8, 8, w // 8, 8), dct_matrix())
    return round_half_away(coef / table[None, None, :, None, :])


def jpeg_roundtrip(img, q: int, shape=MNIST_SHAPE):
    """Lossy JPEG round trip of grayscale image(s) at quality ``q``.

    Accepts one ``(H, W)`` image, one flat image of ``shape``, an ``(n, H*W)``
    batch or an ``(n, H, W)`` stack and returns the same layout, clamped to
    [0, 1].  Edges are replicated up to a multiple of 8 and cropped after.
    """
    a = np.asarray(img, dtype=np.float64)
    stack, kind = _to_stack(a, shape)
    h, w = stack.shape[1:]
    table = jpeg_quant_table(q)
    idx = jpeg_coefficients(stack, q, (h, w))
    recon = _idct_blocks(idx * table[None, None, :, None, :], dct_matrix())
    n, bh, _, bw, _ = recon.shape
    out = (recon.reshape(n, bh * 8, bw * 8)[:, :h, :w] + 128.0) / 255.0
    return _from_stack(np.clip(out, 0.0, 1.0), kind, a.shape)


@dataclass(frozen=True)
class CompressionConfig:
    codec: str = "png8"
    quality: Optional[int] = None

    def __post_init__(self):
        if self.codec not in ("png8", "jpeg"):
            raise UsageError(f"codec must be 'png8' or 'jpeg', not {self.codec!r}")
        if self.codec == "jpeg":
            jpeg_quant_table(self.quality)

    @property
    def label(self) -> str:
        return "png" if self.codec == "png8" else f"jpeg_q{self.quality}"


def apply_compression(images, cfg: CompressionConfig, shape=MNIST_SHAPE):
    """What a probe looks like after being written to and read from a file.

    PNG keeps the 8-bit values; JPEG encodes the 8-bit image and decodes
    back to 8 bits.
    """
    png = quantize_png8(images)
    if cfg.codec == "png8":
        return png
    return quantize_png8(jpeg_roundtrip(png, cfg.quality, shape))


# ---------------------------------------------------------------------------
# image files
# ---------------------------------------------------------------------------

def to_uint8(img) -> np.ndarray:
    return round_half_away(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255.0).astype(np.uint8)


def write_png(path, img, shape=MNIST_SHAPE):
    """Write an 8-bit grayscale PNG (flat arrays are reshaped to ``shape``)."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(shape)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    Image.fromarray(to_uint8(a)).save(tmp, format="PNG")
    tmp.replace(path)
    return path


def read_image(path) -> np.ndarray:
    """Read any grayscale-convertible image file to a float array in [0, 1]."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
