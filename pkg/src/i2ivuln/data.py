"""Procedural grayscale dataset, task degradations and binary PGM/PPM I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .models import Task
from .tensor import ShapeError, as_tensor, bilinear_resize, clamp_pixels, make_rng

SUPERSAMPLE = 4


def _shapes_layer(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Anti-aliased coverage of one random rotated rectangle or disk, plus its gray level."""
    n = size * SUPERSAMPLE
    yy, xx = np.mgrid[0:n, 0:n] / SUPERSAMPLE
    if rng.uniform() < 0.5:
        cy, cx = rng.uniform(0.0, 1.0, 2) * size
        hh, ww = rng.uniform(0.08, 0.3, 2) * size
        theta = rng.uniform(0.0, np.pi)
        u = (yy - cy) * np.cos(theta) + (xx - cx) * np.sin(theta)
        v = -(yy - cy) * np.sin(theta) + (xx - cx) * np.cos(theta)
        inside = (np.abs(u) < hh) & (np.abs(v) < ww)
    else:
        cy, cx = rng.uniform(0.0, 1.0, 2) * size
        rad = rng.uniform(0.08, 0.35) * size
        inside = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
    cover = inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))
    return cover, rng.uniform(30.0, 225.0)


def synthetic_patch(rng: np.random.Generator, size: int = 48) -> np.ndarray:
    """One ``size x size x 1`` patch with integer gray levels in [0, 255].

    Composition: a random linear gradient, 2-4 anti-aliased rectangles or
    disks, and a band-limited noise texture.
    """
    yy, xx = np.mgrid[0:size, 0:size] / size
    gy, gx = rng.uniform(-60.0, 60.0, 2)
    img = rng.uniform(80.0, 170.0) + gy * (yy - 0.5) + gx * (xx - 0.5)
    for _ in range(rng.integers(2, 5)):
        cover, level = _shapes_layer(rng, size)
        img = img * (1.0 - cover) + level * cover
    coarse = rng.integers(3, 9)
    texture = rng.standard_normal((coarse, coarse, 1))
    texture = bilinear_resize(texture, size, size)[:, :, 0]
    fine = rng.standard_normal((size // 2, size // 2, 1))
    fine = bilinear_resize(fine, size, size)[:, :, 0]
    img = img + rng.uniform(4.0, 14.0) * texture + rng.uniform(0.0, 6.0) * fine
    return np.round(clamp_pixels(img))[:, :, None]


def synthetic_patches(count: int, size: int, rng: np.random.Generator) -> np.ndarray:
    return np.stack([synthetic_patch(rng, size) for _ in range(count)])


def gaussian_psf(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    r = (size - 1) / 2
    g = np.exp(-0.5 * ((np.arange(size) - r) / sigma) ** 2)
    k = np.outer(g, g)
    return k / k.sum()


def blur(img: np.ndarray, psf: np.ndarray) -> np.ndarray:
    """Correlate an ``H x W x C`` image with ``psf`` using edge replication."""
    img = as_tensor(img)
    k = psf.shape[0]
    p = (k - 1) // 2
    padded = np.pad(img, ((p, p), (p, p), (0, 0)), mode="edge")
    h, w = img.shape[:2]
    out = np.zeros_like(img)
    for dy in range(k):
        for dx in range(k):
            out += psf[dy, dx] * padded[dy:dy + h, dx:dx + w, :]
    return out


def downsample_antialiased(img: np.ndarray, factor: int) -> np.ndarray:
    """Integer-factor reduction with a triangle filter stretched by ``factor``.

    Matches the antialiased bilinear reduction of common imaging libraries;
    for ``factor == 2`` the separable taps are ``[1, 3, 3, 1] / 8``.
    """
    img = as_tensor(img)
    taps = np.arange(2 * factor) - (2 * factor - 1) / 2
    k = 1.0 - np.abs(taps) / factor
    k /= k.sum()
    p = factor // 2
    out = img
    for axis in (0, 1):
        pad = [(0, 0)] * 3
        pad[axis] = (p, p)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis] // factor
        acc = 0.0
        for j, kj in enumerate(k):
            idx = np.arange(n) * factor + j
            acc = acc + kj * np.take(padded, idx, axis=axis)
        out = acc
    return out


def degrade(task: Task, clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Degraded model input for one clean ``H x W x C`` image, rounded to integer pixels."""
    clean = as_tensor(clean)
    if task.name == "denoise":
        out = clean + rng.standard_normal(clean.shape) * task.sigma
    elif task.name == "super_resolve":
        h, w = clean.shape[:2]
        if h % task.scale or w % task.scale:
            raise ShapeError(f"image {h}x{w} is not divisible by scale {task.scale}")
        out = bilinear_resize(downsample_antialiased(clean, task.scale), h, w)
    else:
        out = blur(clean, gaussian_psf(task.blur_size, task.blur_sigma))
        if task.blur_noise > 0:
            out = out + rng.standard_normal(clean.shape) * task.blur_noise
    return np.round(clamp_pixels(out))


@dataclass
class Dataset:
    task: Task
    clean: np.ndarray
    degraded: np.ndarray
    n_train: int

    @property
    def train(self) -> tuple[np.ndarray, np.ndarray]:
        return self.degraded[:self.n_train], self.clean[:self.n_train]

    @property
    def val(self) -> tuple[np.ndarray, np.ndarray]:
        return self.degraded[self.n_train:], self.clean[self.n_train:]


def make_dataset(task: Task, count: int, size: int = 48, seed: int = 0,
                 train_fraction: float = 0.9) -> Dataset:
    """``count`` (degraded, clean) pairs, split train/validation by position."""
    rng = make_rng(seed)
    clean = synthetic_patches(count, size, rng)
    degraded = np.stack([degrade(task, c, rng) for c in clean])
    return Dataset(task, clean, degraded, int(round(count * train_fraction)))


# ---------------------------------------------------------------------------
# Netpbm


class NetpbmError(ValueError):
    pass


def write_pgm(path, img: np.ndarray) -> None:
    """Binary P5 (one channel) or P6 (three channels), maxval 255."""
    img = as_tensor(img)
    if img.ndim == 2:
        img = img[:, :, None]
    h, w, c = img.shape
    if c not in (1, 3):
        raise ShapeError(f"netpbm supports 1 or 3 channels, got {c}")
    magic = b"P5" if c == 1 else b"P6"
    pixels = np.round(clamp_pixels(img)).astype(np.uint8)
    Path(path).write_bytes(magic + b"\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def _tokens(data: bytes, count: int, pos: int) -> tuple[list[bytes], int]:
    out = []
    while len(out) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise NetpbmError("unexpected end of header")
        out.append(data[start:pos])
    return out, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary P5/P6 file as a float64 ``H x W x C`` array."""
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"{path}: not a binary PGM/PPM file (magic {magic!r})")
    (w, h, maxval), pos = _tokens(data, 3, 2)
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise NetpbmError(f"{path}: only maxval 255 is supported, got {maxval}")
    c = 1 if magic == b"P5" else 3
    body = data[pos:pos + w * h * c]
    if len(body) != w * h * c:
        raise NetpbmError(f"{path}: expected {w * h * c} pixel bytes, found {len(body)}")
    return np.frombuffer(body, np.uint8).reshape(h, w, c).astype(np.float64)
