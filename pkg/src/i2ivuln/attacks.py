"""Attacks on image-to-image models.

All attacks work on ``N x H x W x C`` batches internally; images in a batch
never interact except in :func:`attack_universal`, where the objective
gradients are averaged.  Per-image randomness is drawn from a stream keyed
by ``(seed, image_id)`` so that an image gets the same noise whether it is
attacked alone or inside a batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .frequency import FrequencyMask, dct_matrix
from .metrics import QualityPair, VulnerabilityScore, score, quality_pair
from .models import ImageToImageModel
from .tensor import ShapeError, as_tensor, clamp_pixels

NORM_FLOOR = 1e-12
DYKSTRA_ITERATIONS = 25


class AttackNumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class AttackBudget:
    epsilon: float = 8.0
    iterations: int = 50
    step: float | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be at least 1, got {self.iterations}")
        if self.step is None:
            object.__setattr__(self, "step", self.epsilon / self.iterations)


@dataclass
class AttackOutcome:
    x_attacked: np.ndarray
    delta: np.ndarray               # x_attacked - x, exactly
    quality: QualityPair
    score: VulnerabilityScore
    iterations_run: int
    loss_trace: list[float] = field(default_factory=list)
    linf_trace: list[float] = field(default_factory=list)
    # perturbation before pixel clamping (band-limited for frequency attacks)
    raw_delta: np.ndarray | None = None


def image_rng(seed: int, image_id: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(image_id)])))


def _batch(x) -> tuple[np.ndarray, bool]:
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], False
    if x.ndim != 4:
        raise ShapeError(f"expected an image [H,W,C] or batch [N,H,W,C], got shape {x.shape}")
    return x, True


def _uniform_noise(shape, bound: float, seed: int, image_ids: Sequence[int]) -> np.ndarray:
    return np.stack([image_rng(seed, i).uniform(-bound, bound, shape) for i in image_ids])


def _image_ids(n: int, image_ids) -> list[int]:
    ids = list(range(n)) if image_ids is None else list(image_ids)
    if len(ids) != n:
        raise ValueError(f"got {len(ids)} image ids for {n} images")
    return ids


def _check_finite(g: np.ndarray, what: str, iteration: int) -> None:
    if not np.all(np.isfinite(g)):
        raise AttackNumericError(f"{what} gradient is not finite at iteration {iteration}")


# ---------------------------------------------------------------------------
# objectives: each returns (per-image values, gradient w.r.t. the attacked batch)


def output_l2(model: ImageToImageModel, x_att: np.ndarray, y_ref: np.ndarray):
    """Per-image ||f(x_att) - f(x)||_2 and its input gradient."""
    trace = model.forward_traced(x_att)
    diff = trace.output - y_ref
    norms = np.sqrt(np.sum(diff ** 2, axis=(1, 2, 3)))
    grad_out = diff / np.maximum(norms, NORM_FLOOR)[:, None, None, None]
    grad, _ = model.backward(trace, grad_out)
    return norms, grad


def fda_layer_objective(phi: np.ndarray):
    """Feature-disruption objective of one activation batch ``[N,H,W,D]``.

    ``log ||phi[phi < C]|| - log ||phi[phi > C]||`` per image, where ``C`` is
    the per-pixel mean over channels.  The split masks are held constant, so
    the gradient flows through the activation values only.
    """
    c = phi.mean(axis=-1, keepdims=True)
    below = phi < c
    above = phi > c
    axes = (1, 2, 3)
    nb = np.sqrt(np.sum(np.where(below, phi, 0.0) ** 2, axis=axes))
    na = np.sqrt(np.sum(np.where(above, phi, 0.0) ** 2, axis=axes))
    value = np.log(np.maximum(nb, NORM_FLOOR)) - np.log(np.maximum(na, NORM_FLOOR))
    # d log||v|| / dv = v / ||v||^2; the floored (empty-set) branch is constant
    gb = np.where(nb > NORM_FLOOR, 1.0 / np.maximum(nb, NORM_FLOOR) ** 2, 0.0)[:, None, None, None]
    ga = np.where(na > NORM_FLOOR, 1.0 / np.maximum(na, NORM_FLOOR) ** 2, 0.0)[:, None, None, None]
    grad = np.where(below, phi * gb, 0.0) - np.where(above, phi * ga, 0.0)
    return value, grad


def fda_objective(model: ImageToImageModel, x_att: np.ndarray, layers: Sequence[int] | None = None):
    """Per-image FDA objective summed over the selected post-ReLU activations."""
    trace = model.forward_traced(x_att)
    selected = range(len(trace.activations)) if layers is None else layers
    if not trace.activations:
        raise ValueError("FDA needs a model with at least one ReLU activation")
    total = np.zeros(x_att.shape[0])
    grads: list[np.ndarray | None] = [None] * len(trace.activations)
    for i in selected:
        value, g = fda_layer_objective(trace.activations[i])
        total += value
        grads[i] = g
    grad, _ = model.backward(trace, None, grads)
    return total, grad


# ---------------------------------------------------------------------------
# projections


def project_linf(delta: np.ndarray, epsilon: float) -> np.ndarray:
    return np.clip(delta, -epsilon, epsilon)


def _mask_batch(delta: np.ndarray, mask: np.ndarray) -> np.ndarray:
    dh = dct_matrix(delta.shape[1])
    dw = dct_matrix(delta.shape[2])
    coeffs = np.einsum("ai,nijc,bj->nabc", dh, delta, dw, optimize=True) * mask
    return np.einsum("ai,nabc,bj->nijc", dh, coeffs, dw, optimize=True)


def project_band_linf(delta: np.ndarray, mask: np.ndarray, epsilon: float,
                      iterations: int = DYKSTRA_ITERATIONS) -> np.ndarray:
    """Project onto {band-limited} and {|d| <= epsilon} (Dykstra), ending band-limited.

    A final uniform rescale makes the result satisfy the L-inf bound exactly
    without leaving the band.
    """
    x = _mask_batch(delta, mask)
    p = np.zeros_like(delta)
    for _ in range(iterations):
        y = project_linf(x + p, epsilon)
        p = x + p - y
        x_new = _mask_batch(y, mask)
        if np.array_equal(x_new, x):
            break
        x = x_new
    peak = np.max(np.abs(x), axis=(1, 2, 3), keepdims=True)
    scale = np.where(peak > epsilon, epsilon / np.maximum(peak, NORM_FLOOR), 1.0)
    return x * scale


# ---------------------------------------------------------------------------
# attacks


def _outcomes(model, x, x_att, raw, iterations, loss_traces, linf_traces,
              with_ssim: bool) -> list[AttackOutcome]:
    y = model.forward(x)
    y_att = model.forward(x_att)
    out = []
    for n in range(x.shape[0]):
        q = quality_pair(x[n], x_att[n], y[n], y_att[n], with_ssim)
        out.append(AttackOutcome(
            x_attacked=x_att[n],
            delta=x_att[n] - x[n],
            quality=q,
            score=score(q),
            iterations_run=iterations,
            loss_trace=[float(t[n]) for t in loss_traces],
            linf_trace=[float(t[n]) for t in linf_traces],
            raw_delta=raw[n],
        ))
    return out


def _unbatch(outcomes: list[AttackOutcome], batched: bool):
    return outcomes if batched else outcomes[0]


def attack_random_uniform(model: ImageToImageModel, x, budget: AttackBudget, seed: int = 0,
                          image_ids=None, with_ssim: bool = True):
    """Single-shot i.i.d. uniform noise in [-epsilon, epsilon] (baseline)."""
    xb, batched = _batch(x)
    ids = _image_ids(xb.shape[0], image_ids)
    raw = _uniform_noise(xb.shape[1:], budget.epsilon, seed, ids)
    x_att = clamp_pixels(xb + raw)
    linf = [np.max(np.abs(x_att - xb), axis=(1, 2, 3))]
    return _unbatch(_outcomes(model, xb, x_att, raw, 1, [], linf, with_ssim), batched)


def _iterate(model, xb, budget, objective, seed, ids, bootstrap: bool,
             mask: np.ndarray | None = None, universal: bool = False):
    """Shared signed-gradient ascent loop.

    Each iteration: step along sgn(grad) -> band-limit (if ``mask``) ->
    L-inf projection -> pixel clamp.  Returns the attacked batch, the last
    pre-clamp perturbation, and per-iteration objective and L-inf traces.
    """
    eps, step = budget.epsilon, budget.step
    shape = (1,) + xb.shape[1:] if universal else xb.shape

    def project(d):
        return project_linf(d, eps) if mask is None else project_band_linf(d, mask, eps)

    if bootstrap:
        noise = _uniform_noise(xb.shape[1:], step, seed, ids[:1] if universal else ids)
        raw = project(noise)
    else:
        raw = np.zeros(shape)
    x_att = clamp_pixels(xb + raw)
    state = raw if universal else x_att - xb
    loss_trace, linf_trace = [], []
    values = None
    for it in range(budget.iterations):
        values, grad = objective(x_att)
        if it > 0:
            loss_trace.append(values)
        _check_finite(grad, "attack objective", it)
        if universal:
            grad = grad.mean(axis=0, keepdims=True)
        raw = project(state + step * np.sign(grad))
        x_att = clamp_pixels(xb + raw)
        state = raw if universal else x_att - xb
        linf_trace.append(np.max(np.abs(x_att - xb), axis=(1, 2, 3)))
    values, _ = objective(x_att)
    loss_trace.append(values)
    return x_att, raw, loss_trace, linf_trace


def attack_ifgsm(model: ImageToImageModel, x, budget: AttackBudget, seed: int = 0,
                 image_ids=None, with_ssim: bool = True):
    """Iterative FGSM maximizing ||f(x_att) - f(x)||_2.

    Starts from a seeded uniform bootstrap in [-step, step] because the
    objective's gradient vanishes at ``x_att == x``.
    """
    return _gradient_attack(model, x, budget, seed, image_ids, with_ssim, None)


def attack_frequency(model: ImageToImageModel, x, budget: AttackBudget, mask: FrequencyMask,
                     seed: int = 0, image_ids=None, with_ssim: bool = True):
    """I-FGSM whose perturbation stays inside a DCT band ``mask``."""
    xb, _ = _batch(x)
    if tuple(xb.shape[1:]) != mask.shape:
        raise ShapeError(f"mask dims {mask.shape} do not match image dims {xb.shape[1:]}")
    return _gradient_attack(model, x, budget, seed, image_ids, with_ssim, mask.array())


def _gradient_attack(model, x, budget, seed, image_ids, with_ssim, mask):
    xb, batched = _batch(x)
    ids = _image_ids(xb.shape[0], image_ids)
    y_ref = model.forward(xb)
    x_att, raw, losses, linf = _iterate(
        model, xb, budget, lambda xa: output_l2(model, xa, y_ref), seed, ids,
        bootstrap=True, mask=mask)
    return _unbatch(_outcomes(model, xb, x_att, raw, budget.iterations, losses, linf, with_ssim), batched)


def attack_fda(model: ImageToImageModel, x, budget: AttackBudget, seed: int = 0,
               image_ids=None, layers: Sequence[int] | None = None, with_ssim: bool = True):
    """Feature disruptive attack over all post-ReLU activations (or ``layers``).

    No random start: the feature objective has a useful gradient at ``x``.
    """
    xb, batched = _batch(x)
    ids = _image_ids(xb.shape[0], image_ids)
    x_att, raw, losses, linf = _iterate(
        model, xb, budget, lambda xa: fda_objective(model, xa, layers), seed, ids, bootstrap=False)
    return _unbatch(_outcomes(model, xb, x_att, raw, budget.iterations, losses, linf, with_ssim), batched)


@dataclass
class UniversalPerturbation:
    delta: np.ndarray
    method: str
    budget: AttackBudget
    loss_trace: list[float]

    def apply(self, x) -> np.ndarray:
        x = as_tensor(x)
        if x.shape[-3:] != self.delta.shape:
            raise ShapeError(f"perturbation shape {self.delta.shape} does not fit images of shape {x.shape}")
        return clamp_pixels(x + self.delta)


def attack_universal(model: ImageToImageModel, images, budget: AttackBudget = AttackBudget(16.0),
                     method: str = "ifgsm", seed: int = 0) -> UniversalPerturbation:
    """One image-agnostic perturbation from batch-averaged objective gradients."""
    if isinstance(images, np.ndarray) and images.ndim == 4:
        xb = as_tensor(images)
    else:
        imgs = [as_tensor(i) for i in images]
        shapes = {i.shape for i in imgs}
        if len(shapes) > 1:
            raise ShapeError(f"universal attack needs images of one shape, got {sorted(shapes)}")
        xb = np.stack(imgs)
    if method == "ifgsm":
        y_ref = model.forward(xb)
        objective = lambda xa: output_l2(model, xa, y_ref)  # noqa: E731
        bootstrap = True
    elif method == "fda":
        objective = lambda xa: fda_objective(model, xa)  # noqa: E731
        bootstrap = False
    else:
        raise ValueError(f"unknown universal attack method {method!r}")
    _, raw, losses, _ = _iterate(model, xb, budget, objective, seed, [0], bootstrap, universal=True)
    return UniversalPerturbation(raw[0], method, budget, [float(np.mean(v)) for v in losses])


def transfer_grid(models: Sequence[ImageToImageModel], deltas: Sequence, images) -> np.ndarray:
    """``grid[s, t]`` = mean VI of model ``t`` under the universal delta of source ``s``.

    ``images`` is one batch shared by all targets, or a list with one batch
    per target model (e.g. each model's own degraded inputs).
    """
    if isinstance(images, np.ndarray):
        batches = [_batch(images)[0]] * len(models)
    else:
        batches = [_batch(b)[0] for b in images]
        if len(batches) != len(models):
            raise ValueError(f"got {len(batches)} image batches for {len(models)} target models")
    grid = np.zeros((len(deltas), len(models)))
    for s, d in enumerate(deltas):
        delta = d.delta if isinstance(d, UniversalPerturbation) else as_tensor(d)
        for t, m in enumerate(models):
            xb = batches[t]
            if delta.shape != xb.shape[1:]:
                raise ShapeError(f"cell ({s}, {t}): delta shape {delta.shape} does not fit images {xb.shape[1:]}")
            x_att = clamp_pixels(xb + delta)
            y, y_att = m.forward(xb), m.forward(x_att)
            vis = [score(quality_pair(xb[n], x_att[n], y[n], y_att[n], False)).vi for n in range(xb.shape[0])]
            grid[s, t] = float(np.mean(vis))
    return grid


ATTACKS = ("random", "ifgsm", "fda", "freq_low", "freq_high")


def run_attack(name: str, model: ImageToImageModel, x, budget: AttackBudget, seed: int = 0,
               image_ids=None, with_ssim: bool = True, r: float = 0.25,
               layers: Sequence[int] | None = None):
    """Dispatch by attack id (one of :data:`ATTACKS`)."""
    if name == "random":
        return attack_random_uniform(model, x, budget, seed, image_ids, with_ssim)
    if name == "ifgsm":
        return attack_ifgsm(model, x, budget, seed, image_ids, with_ssim)
    if name == "fda":
        return attack_fda(model, x, budget, seed, image_ids, layers, with_ssim)
    if name in ("freq_low", "freq_high"):
        xb, _ = _batch(x)
        mask = FrequencyMask.like(xb[0], r, name.split("_")[1])
        return attack_frequency(model, x, budget, mask, seed, image_ids, with_ssim)
    raise ValueError(f"unknown attack {name!r}; expected one of {ATTACKS}")
