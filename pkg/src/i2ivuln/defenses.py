"""Input-transform defenses, geometric self-ensemble and adversarial training.

Evaluation follows a non-adaptive threat model: perturbations are crafted
against the undefended model and the defense is applied at inference.  The
adversarially trained model is the exception, since the defense *is* the
model; it is attacked directly (white box).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import attacks
from .attacks import AttackBudget, image_rng
from .data import Dataset
from .frequency import jpeg_like
from .metrics import psnr, quality_pair, score
from .models import ImageToImageModel, Task, TrainingResult, build_model, train
from .tensor import PIXEL_MAX, ShapeError, as_tensor, bilinear_resize, clamp_pixels


def defend_jpeg(x, quality: int = 75) -> np.ndarray:
    return jpeg_like(x, quality)


def defend_resize(x, rng: np.random.Generator | None = None, scale_range=(0.8, 1.2),
                  scale: float | None = None) -> np.ndarray:
    """Bilinear resize by a random factor from ``scale_range`` and back."""
    x = as_tensor(x)
    h, w = x.shape[:2]
    if h < 8 or w < 8:
        raise ShapeError(f"random resizing needs at least 8x8 inputs, got {h}x{w}")
    if scale is None:
        scale = rng.uniform(*scale_range)
    nh, nw = max(1, round(h * scale)), max(1, round(w * scale))
    return clamp_pixels(bilinear_resize(bilinear_resize(x, nh, nw), h, w))


def defend_bit_reduce(x, bits: int = 5) -> np.ndarray:
    if not 1 <= bits <= 7:
        raise ValueError(f"bit depth must be in 1..7, got {bits}")
    levels = 2 ** bits - 1
    return np.round(clamp_pixels(x) / PIXEL_MAX * levels) / levels * PIXEL_MAX


def dihedral_transforms(h: int, w: int) -> list[tuple[Callable, Callable]]:
    """(forward, inverse) pairs on ``H x W x C`` arrays.

    All 8 dihedral symmetries for square images; for rectangles only the 4
    that keep the shape (identity, 180-degree rotation, two flips).
    """
    def rot(k):
        return (lambda a: np.rot90(a, k, axes=(0, 1)), lambda a: np.rot90(a, -k, axes=(0, 1)))

    def flip_then_rot(k):
        return (lambda a: np.rot90(a[:, ::-1], k, axes=(0, 1)),
                lambda a: np.rot90(a, -k, axes=(0, 1))[:, ::-1])

    if h == w:
        return [rot(k) for k in range(4)] + [flip_then_rot(k) for k in range(4)]
    return [rot(0), rot(2), flip_then_rot(0), flip_then_rot(2)]


def defend_self_ensemble(model, x, transforms: Sequence[tuple[Callable, Callable]] | None = None) -> np.ndarray:
    """Mean of g^-1(f(g(x))) over geometric transforms g (wraps inference)."""
    x = as_tensor(x)
    batched = x.ndim == 4
    xb = x if batched else x[None]
    if transforms is None:
        transforms = dihedral_transforms(xb.shape[1], xb.shape[2])
    out = np.zeros_like(xb)
    for fwd, inv in transforms:
        views = np.stack([np.ascontiguousarray(fwd(img)) for img in xb])
        pred = model.forward(views)
        out += np.stack([inv(p) for p in pred])
    out /= len(transforms)
    return out if batched else out[0]


# ---------------------------------------------------------------------------
# defense specs


@dataclass(frozen=True)
class Defense:
    """Base: identity (no defense)."""

    name: str = "none"
    seed: int = 0

    def transform(self, x: np.ndarray, image_id: int) -> np.ndarray:
        return x

    def predict(self, model, x: np.ndarray, image_ids: Sequence[int]) -> np.ndarray:
        xt = np.stack([self.transform(img, i) for img, i in zip(x, image_ids)])
        return model.forward(xt)

    def params(self) -> dict:
        return {}


@dataclass(frozen=True)
class JpegDefense(Defense):
    name: str = "jpeg"
    quality: int = 75

    def __post_init__(self):
        if not 1 <= self.quality <= 100:
            raise ValueError(f"JPEG quality must be in 1..100, got {self.quality}")

    def transform(self, x, image_id):
        return defend_jpeg(x, self.quality)

    def params(self):
        return {"quality": self.quality}


@dataclass(frozen=True)
class ResizeDefense(Defense):
    name: str = "resize"
    scale_range: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        lo, hi = self.scale_range
        if not 0.5 <= lo <= hi <= 1.5:
            raise ValueError(f"scale range must lie within [0.5, 1.5], got {self.scale_range}")

    def transform(self, x, image_id):
        # one scale per image, so clean and attacked copies are resized alike
        return defend_resize(x, image_rng(self.seed, image_id), self.scale_range)

    def params(self):
        return {"scale_range": list(self.scale_range)}


@dataclass(frozen=True)
class BitReduceDefense(Defense):
    name: str = "bit_reduce"
    bits: int = 5

    def __post_init__(self):
        if not 1 <= self.bits <= 7:
            raise ValueError(f"bit depth must be in 1..7, got {self.bits}")

    def transform(self, x, image_id):
        return defend_bit_reduce(x, self.bits)

    def params(self):
        return {"bits": self.bits}


@dataclass(frozen=True)
class SelfEnsembleDefense(Defense):
    name: str = "self_ensemble"

    def predict(self, model, x, image_ids):
        return defend_self_ensemble(model, x)


@dataclass(frozen=True)
class AdversarialTrainingDefense(Defense):
    """Replaces the model with an adversarially trained one."""

    name: str = "adversarial_training"
    model: ImageToImageModel | None = field(default=None, compare=False, repr=False)
    epsilon: float = 8.0
    mix_ratio: float = 0.5

    def predict(self, model, x, image_ids):
        if self.model is None:
            raise ValueError("adversarial-training defense has no trained model attached")
        return self.model.forward(x)

    def params(self):
        return {"epsilon_train": self.epsilon, "mix_ratio": self.mix_ratio}


# ---------------------------------------------------------------------------
# adversarial training

ADV_TRAIN_ITERATIONS = 5


def adversarial_batch_hook(epsilon: float = 8.0, mix_ratio: float = 0.5, seed: int = 0,
                           iterations: int = ADV_TRAIN_ITERATIONS):
    """Batch hook replacing a ``mix_ratio`` share of each batch by I-FGSM inputs.

    The attack runs against the current weights; targets stay clean.
    """
    if not 0.0 <= mix_ratio <= 1.0:
        raise ValueError(f"mix_ratio must lie in [0, 1], got {mix_ratio}")
    budget = AttackBudget(epsilon, iterations)
    counter = [0]

    def hook(model, xb, yb):
        n_adv = int(round(mix_ratio * xb.shape[0]))
        if n_adv == 0:
            return xb
        ids = range(counter[0], counter[0] + n_adv)
        counter[0] += n_adv
        outs = attacks.attack_ifgsm(model, xb[:n_adv], budget, seed=seed, image_ids=ids, with_ssim=False)
        xb = xb.copy()
        xb[:n_adv] = np.stack([o.x_attacked for o in outs])
        return xb

    return hook


def adversarial_train(task: Task, dataset: Dataset, depth: int = 6, width: int = 16,
                      epsilon: float = 8.0, mix_ratio: float = 0.5, epochs: int = 10,
                      seed: int = 0, model_seed: int = 0, **train_kwargs) -> TrainingResult:
    model = build_model(task, depth, width, seed=model_seed)
    hook = adversarial_batch_hook(epsilon, mix_ratio, seed=seed + 1)
    return train(model, *dataset.train, epochs=epochs, seed=seed, batch_hook=hook, **train_kwargs)


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class DefenseRow:
    image_id: int
    q_i: float
    q_o_defended: float
    q_o_undefended: float
    vi_defended: float
    vi_undefended: float
    clean_psnr_defended: float
    clean_psnr_undefended: float
    ssim_i: float | None = None
    ssim_o_defended: float | None = None
    vi_ssim_defended: float | None = None


@dataclass
class AttackArtifacts:
    """Attacked inputs crafted against the undefended model, reusable across defenses."""

    x: np.ndarray
    x_attacked: np.ndarray
    image_ids: list[int]


def craft(model, attack: str, x, budget: AttackBudget, seed: int = 0, image_ids=None, **kw) -> AttackArtifacts:
    x = as_tensor(x)
    ids = list(range(x.shape[0])) if image_ids is None else list(image_ids)
    outs = attacks.run_attack(attack, model, x, budget, seed=seed, image_ids=ids, with_ssim=False, **kw)
    return AttackArtifacts(x, np.stack([o.x_attacked for o in outs]), ids)


def evaluate_defense(model, defense: Defense, artifacts: AttackArtifacts, targets,
                     attack: str = "ifgsm", budget: AttackBudget | None = None, seed: int = 0,
                     with_ssim: bool = False, x_attacked_defended: np.ndarray | None = None,
                     **attack_kw) -> list[DefenseRow]:
    """One row per image: VI and clean PSNR with and without ``defense``.

    ``artifacts`` are reused bitwise for the undefended column.  For the
    adversarial-training defense the attack is re-run against its model
    (``attack_kw`` are forwarded), unless ``x_attacked_defended`` is given.
    """
    x, x_att, ids = artifacts.x, artifacts.x_attacked, artifacts.image_ids
    targets = as_tensor(targets)
    plain = Defense()
    y_u, y_att_u = plain.predict(model, x, ids), plain.predict(model, x_att, ids)
    if isinstance(defense, AdversarialTrainingDefense) and x_attacked_defended is not None:
        x_att_d = as_tensor(x_attacked_defended)
    elif isinstance(defense, AdversarialTrainingDefense):
        budget = budget or AttackBudget()
        x_att_d = craft(defense.model, attack, x, budget, seed, ids, **attack_kw).x_attacked
    else:
        x_att_d = x_att
    y_d, y_att_d = defense.predict(model, x, ids), defense.predict(model, x_att_d, ids)
    rows = []
    for n, i in enumerate(ids):
        qu = quality_pair(x[n], x_att[n], y_u[n], y_att_u[n], False)
        qd = quality_pair(x[n], x_att_d[n], y_d[n], y_att_d[n], with_ssim)
        sd = score(qd)
        rows.append(DefenseRow(
            image_id=i,
            q_i=qd.q_i,
            q_o_defended=qd.q_o,
            q_o_undefended=qu.q_o,
            vi_defended=sd.vi,
            vi_undefended=score(qu).vi,
            clean_psnr_defended=psnr(y_d[n], targets[n]),
            clean_psnr_undefended=psnr(y_u[n], targets[n]),
            ssim_i=qd.ssim_i,
            ssim_o_defended=qd.ssim_o,
            vi_ssim_defended=sd.vi_ssim,
        ))
    return rows


def make_defense(name: str, seed: int = 0, **params) -> Defense:
    kinds = {
        "none": Defense,
        "jpeg": JpegDefense,
        "resize": ResizeDefense,
        "bit_reduce": BitReduceDefense,
        "self_ensemble": SelfEnsembleDefense,
        "adversarial_training": AdversarialTrainingDefense,
    }
    if name not in kinds:
        raise ValueError(f"unknown defense {name!r}; expected one of {sorted(kinds)}")
    return kinds[name](seed=seed, **params)
