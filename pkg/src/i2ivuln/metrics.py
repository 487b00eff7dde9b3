"""PSNR, SSIM and the vulnerability index VI = Q_i / Q_o."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, as_tensor, clamp_pixels

PSNR_CAP = 99.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99 for (near-)identical inputs."""
    a = clamp_pixels(a)
    b = clamp_pixels(b)
    if a.shape != b.shape:
        raise ShapeError(f"psnr operands differ in shape: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < peak ** 2 * 10 ** -9.9:
        return PSNR_CAP
    return 10.0 * math.log10(peak ** 2 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    r = (size - 1) / 2
    g = np.exp(-0.5 * ((np.arange(size) - r) / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable correlation over valid window positions of a 2-D image
    n = g.size
    rows = sliding_window_view(img, n, axis=0) @ g
    return sliding_window_view(rows, n, axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03, peak: float = 255.0) -> float:
    """Mean SSIM over valid Gaussian-window positions, averaged over channels."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim operands differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if a.shape[0] < window or a.shape[1] < window:
        raise ShapeError(f"image {a.shape[:2]} is smaller than the {window}x{window} SSIM window")
    g = gaussian_window(window, sigma)
    c1 = (k1 * peak) ** 2
    c2 = (k2 * peak) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx = _filter_valid(x, g)
        my = _filter_valid(y, g)
        sxx = _filter_valid(x * x, g) - mx * mx
        syy = _filter_valid(y * y, g) - my * my
        sxy = _filter_valid(x * y, g) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        scores.append(float(np.mean(num / den)))
    return float(np.mean(scores))


@dataclass(frozen=True)
class QualityPair:
    q_i: float
    q_o: float
    ssim_i: float | None = None
    ssim_o: float | None = None


@dataclass(frozen=True)
class VulnerabilityScore:
    vi: float
    vi_ssim: float | None = None
    # Q_o sat at the PSNR cap: the attack left the output unchanged
    output_capped: bool = False


def score(quality: QualityPair) -> VulnerabilityScore:
    vi = quality.q_i / quality.q_o
    vi_ssim = None
    if quality.ssim_i is not None and quality.ssim_o is not None:
        vi_ssim = quality.ssim_i / quality.ssim_o if quality.ssim_o != 0.0 else math.inf
    return VulnerabilityScore(vi=vi, vi_ssim=vi_ssim, output_capped=quality.q_o >= PSNR_CAP)


def quality_pair(x, x_attacked, y, y_attacked, with_ssim: bool = True) -> QualityPair:
    """Input-side and output-side quality; outputs are clamped to pixel range first."""
    y = clamp_pixels(y)
    y_attacked = clamp_pixels(y_attacked)
    if not with_ssim:
        return QualityPair(psnr(x, x_attacked), psnr(y, y_attacked))
    return QualityPair(
        q_i=psnr(x, x_attacked),
        q_o=psnr(y, y_attacked),
        ssim_i=ssim(clamp_pixels(x), clamp_pixels(x_attacked)),
        ssim_o=ssim(y, y_attacked),
    )


def _predict(model, x: np.ndarray) -> np.ndarray:
    return model.forward(x) if hasattr(model, "forward") else model(x)


def vulnerability_index(model, x: np.ndarray, x_attacked: np.ndarray,
                        with_ssim: bool = True) -> tuple[QualityPair, VulnerabilityScore]:
    """Score one attacked input against ``model`` (an object with ``forward`` or a callable)."""
    x = as_tensor(x)
    x_attacked = as_tensor(x_attacked)
    if x.shape != x_attacked.shape:
        raise ShapeError(f"attacked input shape {x_attacked.shape} differs from original {x.shape}")
    q = quality_pair(x, x_attacked, _predict(model, x), _predict(model, x_attacked), with_ssim)
    return q, score(q)
