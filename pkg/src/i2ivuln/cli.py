"""Command-line entry point: ``i2ivuln <subcommand> [--config FILE] [--field value ...]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackNumericError
from .data import NetpbmError
from .metrics import vulnerability_index
from .harness import (
    ConfigError,
    CsvFormatError,
    DataError,
    ExperimentConfig,
    emit_plotdata,
    gen_dataset,
    header_lines,
    load_config,
    load_model,
    run_experiment,
    run_transfer,
    eval_split,
    sweep,
    train_task,
    universal_perturbations,
    write_csv,
    write_results,
)
from .models import TASK_NAMES, TrainingDivergedError, WeightFileError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("i2ivuln")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'key = value' file with defaults; flags override it")
    g = p.add_argument_group("config fields")
    for f in dataclasses.fields(ExperimentConfig):
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="VALUE",
                       help="comma-separated list" if "list" in str(f.type) else None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    base = load_config(args.config).to_text() if args.config else ""
    values = {}
    for line in base.splitlines():
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    for f in dataclasses.fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    return ExperimentConfig.from_mapping(values)


def cmd_gen_data(cfg, args):
    if args.task not in TASK_NAMES:
        raise ConfigError(f"unknown task {args.task!r}; expected one of {TASK_NAMES}")
    files = gen_dataset(cfg.task(args.task), args.count, cfg.seed, args.out, cfg.patch_size)
    print(f"wrote {len(files)} files to {args.out}")


def cmd_train(cfg, args):
    for t in cfg.tasks:
        path = train_task(cfg, t, adversarial=args.adversarial)
        print(f"{t}: weights -> {path}")


def cmd_attack(cfg, args):
    rows, timings = sweep(cfg, defenses=[])
    path = write_results(cfg, rows, timings, cfg.out / "attacks.csv")
    print(f"{len(rows)} rows -> {path}")


def cmd_defend(cfg, args):
    rows, timings = sweep(cfg)
    path = write_results(cfg, rows, timings, cfg.out / "defenses.csv")
    print(f"{len(rows)} rows -> {path}")


def cmd_universal(cfg, args):
    models = {t: load_model(cfg, t) for t in cfg.tasks}
    perts = universal_perturbations(cfg, models, args.method)
    rows = []
    for t, pert in perts.items():
        np.save(cfg.out / f"universal_{args.method}_{t}.npy", pert.delta)
        x, _ = eval_split(cfg, t)
        x_att = pert.apply(x)
        for i in range(x.shape[0]):
            q, s = vulnerability_index(models[t], x[i], x_att[i], with_ssim=False)
            rows.append([t, args.method, cfg.universal_epsilon, i, q.q_i, q.q_o, s.vi])
    path = write_csv(cfg.out / f"universal_{args.method}.csv", header_lines(cfg, "universal held-out VI"),
                     ["model", "method", "epsilon", "image_id", "q_i", "q_o", "vi"], rows)
    print(f"{len(rows)} rows -> {path}")


def cmd_transfer(cfg, args):
    models = {t: load_model(cfg, t) for t in cfg.tasks}
    path = run_transfer(cfg, models, cfg.out / f"transfer_{args.method}.csv", args.method)
    print(f"transfer grid -> {path}")


def cmd_report(cfg, args):
    results = Path(args.results) if args.results else cfg.out / "results.csv"
    if not results.exists():
        raise DataError(f"no results file at {results}; run `i2ivuln run-experiment` first")
    paths = emit_plotdata(results, args.out or cfg.out / "plots")
    for name, p in paths.items():
        print(f"{name} -> {p}")


def cmd_run(cfg, args):
    paths = run_experiment(cfg)
    for name, p in paths.items():
        print(f"{name} -> {p}")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="i2ivuln", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"i2ivuln {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        p.set_defaults(func=func)
        return p

    p = add("gen-data", cmd_gen_data, "write clean/degraded PGM pairs and a manifest")
    p.add_argument("--task", default="denoise")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", required=True)
    p = add("train", cmd_train, "train one model per task and save its weights")
    p.add_argument("--adversarial", action="store_true", help="train the adversarially trained twin")
    add("attack", cmd_attack, "attack sweep without defenses -> attacks.csv")
    p = add("universal", cmd_universal, "universal perturbations per model")
    p.add_argument("--method", choices=("ifgsm", "fda"), default="ifgsm")
    p = add("transfer", cmd_transfer, "universal-perturbation transfer grid")
    p.add_argument("--method", choices=("ifgsm", "fda"), default="ifgsm")
    add("defend", cmd_defend, "attack sweep with the configured defenses -> defenses.csv")
    p = add("report", cmd_report, "emit gnuplot-ready .dat files from a results CSV")
    p.add_argument("--results")
    p.add_argument("--out")
    add("run-experiment", cmd_run, "full sweep, aggregates and transfer grid")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        args.func(cfg, args)
    except (DataError, NetpbmError, WeightFileError, CsvFormatError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AttackNumericError, TrainingDivergedError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
