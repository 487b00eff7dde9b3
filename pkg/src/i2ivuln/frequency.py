"""Orthonormal 2-D DCT, DCT-domain band masks and a JPEG-style quantizer."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .tensor import ShapeError, as_tensor, clamp_pixels

# Annex K luminance quantization table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)


@lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II basis; row ``k`` is the ``k``-th cosine."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    m = np.cos(math.pi * (2 * i + 1) * k / (2 * n)) * math.sqrt(2.0 / n)
    m[0, :] = math.sqrt(1.0 / n)
    m.setflags(write=False)
    return m


def _as_hwc(x: np.ndarray) -> np.ndarray:
    x = as_tensor(x)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3:
        raise ShapeError(f"expected an [H,W,C] tensor, got shape {x.shape}")
    return x


def dct2(x: np.ndarray) -> np.ndarray:
    """Separable orthonormal type-II DCT over the two spatial axes of ``H x W x C``."""
    x = _as_hwc(x)
    dh = dct_matrix(x.shape[0])
    dw = dct_matrix(x.shape[1])
    return np.einsum("ai,ijc,bj->abc", dh, x, dw, optimize=True)


def idct2(coeffs: np.ndarray) -> np.ndarray:
    """Inverse of :func:`dct2` (orthonormal type-III)."""
    coeffs = _as_hwc(coeffs)
    dh = dct_matrix(coeffs.shape[0])
    dw = dct_matrix(coeffs.shape[1])
    return np.einsum("ai,abc,bj->ijc", dh, coeffs, dw, optimize=True)


def band_limit(r: float, n: int) -> int:
    """Number of coefficients kept along an axis of length ``n`` for ratio ``r``."""
    return int(math.ceil(r * n - 1e-9))


@dataclass(frozen=True)
class FrequencyMask:
    """Binary DCT mask keeping a low- or high-frequency corner.

    With 0-based coefficient indices, the low band keeps ``(h, w)`` iff
    ``h + 1 <= ceil(r*H)`` and ``w + 1 <= ceil(r*W)``; the high band keeps the
    mirrored corner, ``h >= H - ceil(r*H)`` and ``w >= W - ceil(r*W)``.
    """

    r: float
    band: str
    height: int
    width: int
    channels: int = 1

    def __post_init__(self):
        if not 0.0 <= self.r <= 1.0:
            raise ValueError(f"mask ratio must lie in [0, 1], got {self.r}")
        if self.band not in ("low", "high"):
            raise ValueError(f"mask band must be 'low' or 'high', got {self.band!r}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    def array(self) -> np.ndarray:
        kh = band_limit(self.r, self.height)
        kw = band_limit(self.r, self.width)
        m = np.zeros(self.shape)
        if self.band == "low":
            m[:kh, :kw, :] = 1.0
        else:
            m[self.height - kh:, self.width - kw:, :] = 1.0
        return m

    @classmethod
    def like(cls, x: np.ndarray, r: float, band: str) -> FrequencyMask:
        x = _as_hwc(x)
        return cls(r=r, band=band, height=x.shape[0], width=x.shape[1], channels=x.shape[2])


def apply_mask(delta: np.ndarray, mask: FrequencyMask) -> np.ndarray:
    """Band-limit ``delta`` by zeroing DCT coefficients outside ``mask``."""
    delta = _as_hwc(delta)
    if delta.shape != mask.shape:
        raise ShapeError(f"mask dims {mask.shape} do not match perturbation dims {delta.shape}")
    return idct2(mask.array() * dct2(delta))


def jpeg_quant_table(quality: int) -> np.ndarray:
    """Luminance table scaled with the libjpeg quality formula."""
    if not 1 <= quality <= 100:
        raise ValueError(f"JPEG quality must be in 1..100, got {quality}")
    scale = 5000 / quality if quality < 50 else 200 - 2 * quality
    table = np.floor((JPEG_LUMA_TABLE * scale + 50) / 100)
    return np.clip(table, 1, 255)


def jpeg_like(x: np.ndarray, quality: int = 75) -> np.ndarray:
    """Lossy stages of baseline JPEG (8x8 DCT, quantize, dequantize), per channel.

    Entropy coding is lossless and therefore omitted.  Output pixels are
    rounded to integers and clamped to ``[0, 255]`` as a decoder would.
    """
    q = jpeg_quant_table(int(quality))
    x = _as_hwc(x)
    h, w, c = x.shape
    ph, pw = -h % 8, -w % 8
    padded = np.pad(x, ((0, ph), (0, pw), (0, 0)), mode="edge") - 128.0
    bh, bw = padded.shape[0] // 8, padded.shape[1] // 8
    # [bh, 8, bw, 8, c] -> [bh, bw, c, 8, 8]
    blocks = padded.reshape(bh, 8, bw, 8, c).transpose(0, 2, 4, 1, 3)
    d = dct_matrix(8)
    coeffs = d @ blocks @ d.T
    coeffs = np.round(coeffs / q) * q
    rec = d.T @ coeffs @ d
    rec = rec.transpose(0, 3, 1, 4, 2).reshape(bh * 8, bw * 8, c)[:h, :w, :]
    return clamp_pixels(np.round(rec + 128.0))
