"""Batch experiment runner: datasets, model lifecycle, sweeps and CSV output.

Every output file starts with ``#`` comment lines carrying the tool version,
the config hash and the attack/defense defaults, followed by an RFC-4180 CSV
body.  Rows are sorted by their key, so output bytes do not depend on
evaluation order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import ATTACKS, AttackBudget, UniversalPerturbation, attack_universal, transfer_grid
from .data import Dataset, make_dataset, write_pgm
from .defenses import AttackArtifacts, Defense, adversarial_train, craft, evaluate_defense, make_defense
from .models import TASK_NAMES, ImageToImageModel, Task, build_model, load_weights, save_weights, train

log = logging.getLogger(__name__)

DEFENSES = ("jpeg", "resize", "bit_reduce", "self_ensemble", "adversarial_training")
UNIVERSAL_ATTACKS = ("universal_ifgsm", "universal_fda")
FREQUENCY_ATTACKS = ("freq_low", "freq_high")


class ConfigError(ValueError):
    pass


class DataError(RuntimeError):
    pass


class MissingWeightsError(DataError):
    pass


def _floats(v):
    return [float(x) for x in v]


@dataclass
class ExperimentConfig:
    tasks: list[str] = field(default_factory=lambda: list(TASK_NAMES))
    seed: int = 0
    # models and training
    depth: int = 6
    width: int = 16
    patch_size: int = 32
    train_count: int = 1600
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16
    sigma: float = 15.0
    blur_sigma: float = 1.5
    blur_noise: float = 1.0
    # attacks
    attacks: list[str] = field(default_factory=lambda: ["random", "ifgsm", "fda"])
    epsilons: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0, 8.0, 16.0, 32.0])
    iterations: int = 50
    ratios: list[float] = field(default_factory=lambda: [1 / 8, 2 / 8, 3 / 8, 4 / 8])
    universal_epsilon: float = 16.0
    universal_count: int = 50
    image_count: int = 50
    # defenses
    defenses: list[str] = field(default_factory=list)
    jpeg_quality: int = 75
    resize_min: float = 0.8
    resize_max: float = 1.2
    bits: int = 5
    adv_epsilon: float = 8.0
    adv_mix_ratio: float = 0.5
    # output
    output_dir: str = "runs/default"
    transfer: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for t in self.tasks:
            if t not in TASK_NAMES:
                raise ConfigError(f"unknown task {t!r}; expected one of {TASK_NAMES}")
        known = set(ATTACKS) | set(UNIVERSAL_ATTACKS)
        for a in self.attacks:
            if a not in known:
                raise ConfigError(f"unknown attack {a!r}; expected one of {sorted(known)}")
        for d in self.defenses:
            if d not in DEFENSES:
                raise ConfigError(f"unknown defense {d!r}; expected one of {DEFENSES}")
        if any(e < 0 for e in self.epsilons):
            raise ConfigError("epsilons must be non-negative")
        if any(not 0 <= r <= 1 for r in self.ratios):
            raise ConfigError("ratios must lie in [0, 1]")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        n_val = self.train_count - int(round(self.train_count * 0.9))
        if self.image_count > n_val:
            raise ConfigError(f"image_count={self.image_count} exceeds the {n_val} validation images of train_count={self.train_count}")
        if not 1 <= self.jpeg_quality <= 100:
            raise ConfigError("jpeg_quality must be in 1..100")
        if not 1 <= self.bits <= 7:
            raise ConfigError("bits must be in 1..7")
        if not 0.5 <= self.resize_min <= self.resize_max <= 1.5:
            raise ConfigError("resize range must lie within [0.5, 1.5]")
        if not 0 <= self.adv_mix_ratio <= 1:
            raise ConfigError("adv_mix_ratio must lie in [0, 1]")

    # -- serialization: flat ``key = value`` lines, lists comma-separated

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> ExperimentConfig:
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            default = fields[key].default_factory() if fields[key].default_factory is not dataclasses.MISSING else fields[key].default
            try:
                kwargs[key] = _coerce(raw, default)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def task(self, name: str) -> Task:
        return Task(name, sigma=self.sigma, blur_sigma=self.blur_sigma, blur_noise=self.blur_noise)

    def defense(self, name: str, adv_model: ImageToImageModel | None = None) -> Defense:
        seed = derive_seed(self.seed, "defense", name)
        if name == "jpeg":
            return make_defense(name, seed, quality=self.jpeg_quality)
        if name == "resize":
            return make_defense(name, seed, scale_range=(self.resize_min, self.resize_max))
        if name == "bit_reduce":
            return make_defense(name, seed, bits=self.bits)
        if name == "adversarial_training":
            return make_defense(name, seed, model=adv_model, epsilon=self.adv_epsilon, mix_ratio=self.adv_mix_ratio)
        return make_defense(name, seed)


def _coerce(raw, default):
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError("expected a boolean")
        return s in ("true", "1", "yes")
    if isinstance(default, list):
        items = raw if isinstance(raw, list) else [s.strip() for s in str(raw).split(",") if s.strip()]
        if default and isinstance(default[0], float):
            return [_number(x) for x in items]
        return [str(x) for x in items]
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return _number(raw)
    return str(raw)


def _number(x) -> float:
    if isinstance(x, (int, float)):
        return float(x)
    s = str(x).strip()
    if "/" in s:
        num, den = s.split("/", 1)
        return float(num) / float(den)
    return float(s)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return ExperimentConfig.from_text(text)


def derive_seed(seed: int, *labels) -> int:
    """Stable child seed from a base seed and string labels."""
    words = [int(seed)] + [zlib.crc32(str(l).encode()) for l in labels]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# file headers and CSV


def header_lines(cfg: ExperimentConfig, kind: str) -> list[str]:
    defaults = {
        "iterations": cfg.iterations,
        "step": "epsilon/iterations",
        "universal_epsilon": cfg.universal_epsilon,
        "jpeg_quality": cfg.jpeg_quality,
        "resize_range": [cfg.resize_min, cfg.resize_max],
        "bits": cfg.bits,
        "adv_epsilon": cfg.adv_epsilon,
        "adv_mix_ratio": cfg.adv_mix_ratio,
        "adv_inner_iterations": 5,
    }
    return [
        f"# i2ivuln {__version__} {kind}",
        f"# config_hash {cfg.hash}",
        f"# defaults {json.dumps(defaults, sort_keys=True)}",
    ]


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header: list[str], columns: list[str], rows: list[list]) -> Path:
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\r\n")
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(buf.getvalue().encode())
    return path


class CsvFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_csv(path) -> tuple[list[str], list[dict]]:
    """Return (comment lines, rows as dicts) of a file written by :func:`write_csv`."""
    comments, body = [], []
    lines = Path(path).read_text().splitlines()
    first = None
    for i, line in enumerate(lines, 1):
        if line.startswith("#") and first is None:
            comments.append(line)
        else:
            if first is None:
                first = i
            body.append(line)
    if first is None:
        raise CsvFormatError("missing header row", len(lines) + 1)
    reader = csv.reader(body)
    columns = next(reader)
    rows = []
    for offset, rec in enumerate(reader, 1):
        if len(rec) != len(columns):
            raise CsvFormatError(f"expected {len(columns)} fields, found {len(rec)}", first + offset)
        rows.append(dict(zip(columns, rec)))
    return comments, rows


# ---------------------------------------------------------------------------
# datasets and models


def dataset_for(cfg: ExperimentConfig, task_name: str) -> Dataset:
    # same clean patches for every task; only the degradation differs
    return make_dataset(cfg.task(task_name), cfg.train_count, cfg.patch_size, seed=cfg.seed)


def gen_dataset(task: Task, count: int, seed: int, out_dir, size: int = 32) -> list[Path]:
    """Write ``count`` clean/degraded PGM pairs plus ``manifest.csv``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        ds = make_dataset(task, count, size, seed=seed, train_fraction=1.0)
        paths, rows = [], []
        for i in range(count):
            c, d = out / f"clean_{i:05d}.pgm", out / f"degraded_{i:05d}.pgm"
            write_pgm(c, ds.clean[i])
            write_pgm(d, ds.degraded[i])
            paths += [c, d]
            rows.append([i, c.name, d.name])
        header = [
            f"# i2ivuln {__version__} dataset",
            f"# task {task.name} sigma {task.sigma!r} scale {task.scale} blur_sigma {task.blur_sigma!r} "
            f"blur_size {task.blur_size} blur_noise {task.blur_noise!r} seed {seed} size {size}",
        ]
        paths.append(write_csv(out / "manifest.csv", header, ["index", "clean", "degraded"], rows))
    except OSError as exc:
        raise DataError(f"cannot write dataset under {out}: {exc}") from exc
    return paths


def weights_path(cfg: ExperimentConfig, task_name: str, adversarial: bool = False) -> Path:
    return cfg.out / "models" / f"{task_name}{'_adv' if adversarial else ''}.i2iw"


def train_task(cfg: ExperimentConfig, task_name: str, adversarial: bool = False) -> Path:
    """Train one model on the config's procedural dataset and persist it."""
    ds = dataset_for(cfg, task_name)
    task = cfg.task(task_name)
    kwargs = dict(epochs=cfg.epochs, lr=cfg.lr, batch_size=cfg.batch_size,
                  seed=derive_seed(cfg.seed, "train", task_name))
    model_seed = derive_seed(cfg.seed, "init", task_name)
    if adversarial:
        result = adversarial_train(task, ds, cfg.depth, cfg.width, epsilon=cfg.adv_epsilon,
                                   mix_ratio=cfg.adv_mix_ratio, model_seed=model_seed, **kwargs)
    else:
        result = train(build_model(task, cfg.depth, cfg.width, seed=model_seed), *ds.train, **kwargs)
    path = weights_path(cfg, task_name, adversarial)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(result.model, path)
    write_csv(path.with_suffix(".loss.csv"), header_lines(cfg, f"loss {task_name}"), ["epoch", "loss"],
              [[i + 1, l] for i, l in enumerate(result.epoch_losses)])
    return path


def load_model(cfg: ExperimentConfig, task_name: str, adversarial: bool = False) -> ImageToImageModel:
    path = weights_path(cfg, task_name, adversarial)
    if not path.exists():
        flag = " --adversarial" if adversarial else ""
        raise MissingWeightsError(
            f"no trained weights at {path}; run `i2ivuln train --tasks {task_name}{flag}` with the same config first"
        )
    model = load_weights(path, cfg.task(task_name))
    convs = model.conv_layers
    if len(convs) != cfg.depth or convs[0].cout != cfg.width:
        raise DataError(
            f"{path} holds a depth-{len(convs)} width-{convs[0].cout} model but the config asks for "
            f"depth {cfg.depth} width {cfg.width}; rerun `i2ivuln train` with this config"
        )
    return model


def eval_split(cfg: ExperimentConfig, task_name: str) -> tuple[np.ndarray, np.ndarray]:
    xv, yv = dataset_for(cfg, task_name).val
    return xv[:cfg.image_count], yv[:cfg.image_count]


# ---------------------------------------------------------------------------
# experiment

RESULT_COLUMNS = ["model", "attack", "band", "r", "defense", "epsilon", "image_id",
                  "q_i", "q_o", "vi", "ssim_i", "ssim_o", "vi_ssim", "clean_psnr", "output_capped"]


def attack_variants(cfg: ExperimentConfig) -> list[tuple[str, str, float | None]]:
    """(attack id, band, r) triples; frequency attacks expand over ``ratios``."""
    out = []
    for a in cfg.attacks:
        if a in FREQUENCY_ATTACKS:
            out += [(a, a.split("_")[1], r) for r in cfg.ratios]
        else:
            out.append((a, "", None))
    return out


def _universal_artifacts(cfg, model, task_name, attack, eps, x):
    method = attack.split("_")[1]
    train_x = dataset_for(cfg, task_name).train[0][:cfg.universal_count]
    budget = AttackBudget(eps, cfg.iterations)
    pert = attack_universal(model, train_x, budget, method, seed=derive_seed(cfg.seed, "universal", task_name))
    return AttackArtifacts(x, pert.apply(x), list(range(x.shape[0]))), pert


def sweep(cfg: ExperimentConfig, defenses: list[str] | None = None) -> tuple[list[list], list[list]]:
    """Result rows (sorted by key) and timing rows for attacks x defenses x epsilons."""
    defenses = cfg.defenses if defenses is None else defenses
    rows, timings = [], []
    models = {t: load_model(cfg, t) for t in cfg.tasks} if cfg.attacks else {}
    adv_models = {}
    if "adversarial_training" in defenses and cfg.attacks:
        adv_models = {t: load_model(cfg, t, adversarial=True) for t in cfg.tasks}
    for task_name, model in models.items():
        x, y = eval_split(cfg, task_name)
        ids = list(range(x.shape[0]))
        for attack, band, r in attack_variants(cfg):
            attack_kw = {"r": r} if r is not None else {}
            for eps in cfg.epsilons:
                budget = AttackBudget(eps, cfg.iterations)
                seed = derive_seed(cfg.seed, "attack", task_name, attack, eps)
                t0 = time.perf_counter()
                if attack in UNIVERSAL_ATTACKS:
                    art, _ = _universal_artifacts(cfg, model, task_name, attack, eps, x)
                else:
                    art = craft(model, attack, x, budget, seed, ids, **attack_kw)
                for dname in ["none"] + list(defenses):
                    adv = adv_models.get(task_name)
                    defense = cfg.defense(dname, adv) if dname != "none" else Defense()
                    recrafted = None
                    if dname == "adversarial_training" and attack in UNIVERSAL_ATTACKS:
                        recrafted = _universal_artifacts(cfg, adv, task_name, attack, eps, x)[0].x_attacked
                    drows = evaluate_defense(model, defense, art, y, attack=attack, budget=budget, seed=seed,
                                             with_ssim=True, x_attacked_defended=recrafted, **attack_kw)
                    for dr in drows:
                        rows.append([task_name, attack, band, r, dname, eps, dr.image_id, dr.q_i,
                                     dr.q_o_defended, dr.vi_defended, dr.ssim_i, dr.ssim_o_defended,
                                     dr.vi_ssim_defended, dr.clean_psnr_defended, dr.q_o_defended >= 99.0])
                elapsed = (time.perf_counter() - t0) * 1000.0
                timings.append([task_name, attack, band, r, eps, round(elapsed, 3)])
                log.info("%s %s r=%s eps=%g: %.1fs", task_name, attack, r, eps, elapsed / 1000)
    rows.sort(key=_row_key)
    return rows, timings


def write_results(cfg: ExperimentConfig, rows: list[list], timings: list[list], path: Path) -> Path:
    write_csv(path.with_name(path.stem + "_timings.csv"), header_lines(cfg, "timings (not deterministic)"),
              ["model", "attack", "band", "r", "epsilon", "wall_time_ms"], timings)
    return write_csv(path, header_lines(cfg, "results"), RESULT_COLUMNS, rows)


def run_experiment(cfg: ExperimentConfig) -> dict[str, Path]:
    """Run the sweep and write ``results.csv`` plus figure-shaped aggregates.

    Wall times go to a separate ``results_timings.csv`` so that the result
    files stay byte-identical across runs.
    """
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    rows, timings = sweep(cfg)
    paths = {"results": write_results(cfg, rows, timings, out / "results.csv")}
    paths.update(write_aggregates(cfg, rows, out))
    if cfg.transfer and len(cfg.tasks) >= 2 and cfg.attacks:
        models = {t: load_model(cfg, t) for t in cfg.tasks}
        paths["transfer"] = run_transfer(cfg, models, out / "transfer.csv")
    return paths


def _row_key(r):
    return (r[0], r[1], r[2], -1.0 if r[3] is None else r[3], r[4], r[5], r[6])


def _mean(values):
    return float(np.mean(values)) if values else math.nan


def aggregate(rows: list[list], group: tuple[int, ...], value: int, where=None) -> list[list]:
    cells: dict[tuple, list[float]] = {}
    for r in rows:
        if where is not None and not where(r):
            continue
        cells.setdefault(tuple(r[i] for i in group), []).append(r[value])
    return [list(k) + [_mean(v), len(v)] for k, v in sorted(cells.items(), key=lambda kv: tuple(str(x) for x in kv[0]))]


def write_aggregates(cfg: ExperimentConfig, rows: list[list], out: Path) -> dict[str, Path]:
    col = {c: i for i, c in enumerate(RESULT_COLUMNS)}
    paths = {}
    no_def = lambda r: r[col["defense"]] == "none"  # noqa: E731
    fig2 = aggregate(rows, (col["attack"], col["model"], col["epsilon"]), col["vi"],
                     lambda r: no_def(r) and r[col["band"]] == "")
    paths["fig2"] = write_csv(out / "fig2_attack_model.csv", header_lines(cfg, "fig2 mean VI (attack x model)"),
                              ["attack", "model", "epsilon", "mean_vi", "n"], fig2)
    fig7 = aggregate(rows, (col["band"], col["r"], col["model"], col["epsilon"]), col["vi"],
                     lambda r: no_def(r) and r[col["band"]] != "")
    paths["fig7"] = write_csv(out / "fig7_band_model.csv", header_lines(cfg, "fig7 mean VI (band x model)"),
                              ["band", "r", "model", "epsilon", "mean_vi", "n"], fig7)
    fig9 = aggregate(rows, (col["defense"], col["model"], col["attack"], col["epsilon"]), col["vi"],
                     lambda r: r[col["band"]] == "")
    paths["fig9"] = write_csv(out / "fig9_defense_model.csv", header_lines(cfg, "fig9 mean VI (defense x model)"),
                              ["defense", "model", "attack", "epsilon", "mean_vi", "n"], fig9)
    # clean outputs do not depend on the attack, so every attack cell repeats them
    fig10 = aggregate(rows, (col["defense"], col["model"]), col["clean_psnr"], lambda r: r[col["band"]] == "")
    paths["fig10"] = write_csv(out / "fig10_clean_psnr.csv", header_lines(cfg, "fig10 mean clean PSNR (defense x model)"),
                               ["defense", "model", "mean_clean_psnr", "n_rows"], fig10)
    return paths


def universal_perturbations(cfg: ExperimentConfig, models: dict[str, ImageToImageModel],
                            method: str = "ifgsm") -> dict[str, UniversalPerturbation]:
    budget = AttackBudget(cfg.universal_epsilon, cfg.iterations)
    perts = {}
    for name, model in models.items():
        train_x = dataset_for(cfg, name).train[0][:cfg.universal_count]
        perts[name] = attack_universal(model, train_x, budget, method, seed=derive_seed(cfg.seed, "universal", name))
    return perts


def run_transfer(cfg: ExperimentConfig, models: dict[str, ImageToImageModel], path: Path,
                 method: str = "ifgsm") -> Path:
    perts = universal_perturbations(cfg, models, method)
    names = list(models)
    images = [eval_split(cfg, n)[0] for n in names]
    grid = transfer_grid([models[n] for n in names], [perts[n] for n in names], images)
    rows = [[s] + [float(v) for v in grid[i]] for i, s in enumerate(names)]
    header = header_lines(cfg, f"transfer grid mean VI (rows: source delta, columns: target model; universal {method} eps={cfg.universal_epsilon!r})")
    return write_csv(path, header, ["source"] + names, rows)


# ---------------------------------------------------------------------------
# plot data

FIGURES = {
    "fig2": (("attack", "model", "epsilon"), "vi", lambda r: r["defense"] == "none" and r["band"] == ""),
    "fig7": (("band", "r", "model", "epsilon"), "vi", lambda r: r["defense"] == "none" and r["band"] != ""),
    "fig9": (("defense", "model", "attack", "epsilon"), "vi", lambda r: r["band"] == ""),
}


def plot_aggregates(rows: list[dict]) -> dict[str, list[tuple]]:
    """Mean VI per figure cell, computed from parsed ``results.csv`` rows."""
    out = {}
    for fig, (keys, value, where) in FIGURES.items():
        cells: dict[tuple, list[float]] = {}
        for r in rows:
            if where(r):
                cells.setdefault(tuple(r[k] for k in keys), []).append(float(r[value]))
        out[fig] = [k + (_mean(v), len(v)) for k, v in sorted(cells.items())]
    return out


def emit_plotdata(csv_path, out_dir) -> dict[str, Path]:
    """Write one whitespace-delimited ``.dat`` series file per figure aggregate."""
    comments, rows = read_csv(csv_path)
    for i, r in enumerate(rows):
        for c in ("model", "attack", "band", "r", "defense", "epsilon", "vi"):
            if c not in r:
                raise CsvFormatError(f"missing column {c!r}", 1)
        try:
            float(r["vi"])
            float(r["epsilon"])
        except ValueError as exc:
            raise CsvFormatError(f"non-numeric value ({exc})", len(comments) + 2 + i) from exc
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for fig, cells in plot_aggregates(rows).items():
        keys = FIGURES[fig][0]
        lines = list(comments)
        lines.append(f"# {fig}: mean VI per cell; empty fields written as '-'")
        lines.append("# columns: " + " ".join(keys) + " mean_vi n")
        for cell in cells:
            fields = [str(v) if v != "" else "-" for v in cell[:-2]]
            lines.append(" ".join(fields + [repr(cell[-2]), str(cell[-1])]))
        path = out / f"{fig}.dat"
        path.write_text("\n".join(lines) + "\n")
        paths[fig] = path
    return paths


def read_plotdata(path) -> list[tuple]:
    """Parse a ``.dat`` file back into cell tuples (keys as strings, mean as float)."""
    cells = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        keys = tuple("" if p == "-" else p for p in parts[:-2])
        cells.append(keys + (float(parts[-2]), int(parts[-1])))
    return cells


def save_attack_images(out_dir, outcomes, prefix: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, o in enumerate(outcomes):
        write_pgm(out / f"{prefix}_{i:05d}.pgm", o.x_attacked)


__all__ = [
    "ExperimentConfig", "ConfigError", "DataError", "MissingWeightsError", "CsvFormatError",
    "load_config", "gen_dataset", "train_task", "load_model", "run_experiment", "emit_plotdata",
    "read_csv", "read_plotdata", "run_transfer", "universal_perturbations",
]
