"""Dense tensor primitives shared by every other module.

Tensors are plain ``numpy.ndarray`` objects in float64.  Images are laid out
``H x W x C`` and batches ``N x H x W x C``; convolution kernels are
``k x k x Cin x Cout``.
"""

from __future__ import annotations

import numpy as np

PIXEL_MIN = 0.0
PIXEL_MAX = 255.0


class ShapeError(ValueError):
    """Raised when tensor dimensions are inconsistent."""


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator (PCG64).

    PCG64 streams, including ``uniform`` and ``standard_normal`` (ziggurat),
    are specified bit-for-bit by numpy and reproduce across platforms.
    """
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def as_tensor(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _check_conv(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None) -> int:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects input [N,H,W,Cin], got shape {x.shape}")
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"conv2d expects square kernel [k,k,Cin,Cout], got shape {kernel.shape}")
    k = kernel.shape[0]
    if k % 2 != 1:
        raise ShapeError(f"conv2d kernel size must be odd, got {k}")
    if kernel.shape[2] != x.shape[3]:
        raise ShapeError(
            f"conv2d channel mismatch: input has Cin={x.shape[3]}, kernel expects Cin={kernel.shape[2]}"
        )
    if bias is not None and bias.shape != (kernel.shape[3],):
        raise ShapeError(f"conv2d bias must have shape ({kernel.shape[3]},), got {bias.shape}")
    return k


def conv2d_forward(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Stride-1, same-padded (zero fill) 2-D convolution (cross-correlation)."""
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    bias = None if bias is None else as_tensor(bias)
    k = _check_conv(x, kernel, bias)
    p = (k - 1) // 2
    n, h, w, _ = x.shape
    padded = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((n, h, w, kernel.shape[3]))
    for dy in range(k):
        for dx in range(k):
            out += padded[:, dy:dy + h, dx:dx + w, :] @ kernel[dy, dx]
    if bias is not None:
        out += bias
    return out


def conv2d_backward(x: np.ndarray, kernel: np.ndarray, upstream: np.ndarray,
                    need_input_grad: bool = True):
    """Gradients of ``sum(conv2d_forward(x, kernel, b) * upstream)``.

    Returns ``(grad_input, grad_kernel, grad_bias)``; ``grad_input`` is None
    when ``need_input_grad`` is false.
    """
    x = as_tensor(x)
    kernel = as_tensor(kernel)
    upstream = as_tensor(upstream)
    k = _check_conv(x, kernel, None)
    n, h, w, cin = x.shape
    cout = kernel.shape[3]
    if upstream.shape != (n, h, w, cout):
        raise ShapeError(
            f"conv2d upstream gradient must have shape {(n, h, w, cout)}, got {upstream.shape}"
        )
    p = (k - 1) // 2
    padded = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    g2 = upstream.reshape(-1, cout)
    grad_kernel = np.empty_like(kernel)
    grad_padded = np.zeros_like(padded) if need_input_grad else None
    for dy in range(k):
        for dx in range(k):
            window = padded[:, dy:dy + h, dx:dx + w, :]
            grad_kernel[dy, dx] = window.reshape(-1, cin).T @ g2
            if need_input_grad:
                grad_padded[:, dy:dy + h, dx:dx + w, :] += upstream @ kernel[dy, dx].T
    grad_bias = g2.sum(axis=0)
    grad_input = None
    if need_input_grad:
        grad_input = grad_padded[:, p:p + h, p:p + w, :]
    return grad_input, grad_kernel, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(as_tensor(x) > 0.0, as_tensor(upstream), 0.0)


def _resize_axis(x: np.ndarray, new_size: int, axis: int) -> np.ndarray:
    old = x.shape[axis]
    if new_size == old:
        return x
    # half-pixel centres: src = (i + 0.5) * old / new - 0.5, clamped to the edge
    src = (np.arange(new_size) + 0.5) * (old / new_size) - 0.5
    src = np.clip(src, 0.0, old - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, old - 1)
    frac = src - lo
    shape = [1] * x.ndim
    shape[axis] = new_size
    frac = frac.reshape(shape)
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    return a + (b - a) * frac


def bilinear_resize(x: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize of an ``H x W x C`` image (corners not aligned)."""
    if new_h < 1 or new_w < 1:
        raise ValueError(f"resize target must be at least 1x1, got {new_h}x{new_w}")
    x = as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"bilinear_resize expects [H,W,C], got shape {x.shape}")
    out = _resize_axis(x, int(new_h), 0)
    out = _resize_axis(out, int(new_w), 1)
    return out.copy() if out is x else out


def clamp_pixels(x: np.ndarray) -> np.ndarray:
    return np.clip(as_tensor(x), PIXEL_MIN, PIXEL_MAX)
