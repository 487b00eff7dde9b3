import math

import numpy as np
import pytest

from i2ivuln.cli import main
from i2ivuln.data import read_pgm
from i2ivuln.harness import (
    ConfigError,
    CsvFormatError,
    ExperimentConfig,
    MissingWeightsError,
    attack_variants,
    emit_plotdata,
    gen_dataset,
    load_model,
    plot_aggregates,
    read_csv,
    read_plotdata,
    run_experiment,
    train_task,
)
from i2ivuln.models import Task

TINY = """
# small but complete sweep
tasks = denoise, super_resolve
train_count = 40
epochs = 1
depth = 3
width = 4
patch_size = 16
image_count = 3
epsilons = 4, 8
iterations = 3
ratios = 1/4
attacks = random, ifgsm, freq_high, universal_ifgsm
defenses = jpeg, self_ensemble, adversarial_training
universal_count = 4
"""


def tiny_config(tmp_path, **overrides) -> ExperimentConfig:
    cfg = ExperimentConfig.from_text(TINY + f"output_dir = {tmp_path / 'run'}\n")
    values = {**{k: v for k, v in vars(cfg).items()}, **overrides}
    return ExperimentConfig(**values)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = tiny_config(tmp_path_factory.mktemp("harness"))
    for t in cfg.tasks:
        train_task(cfg, t)
        train_task(cfg, t, adversarial=True)
    return cfg


def test_config_text_roundtrip():
    cfg = ExperimentConfig.from_text(TINY)
    assert cfg.ratios == [0.25] and cfg.epsilons == [4.0, 8.0]
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash
    assert ExperimentConfig().epsilons == [1, 2, 4, 8, 16, 32]
    assert ExperimentConfig().iterations == 50
    assert ExperimentConfig().ratios == [1 / 8, 2 / 8, 3 / 8, 4 / 8]


def test_config_hash_changes_with_content():
    assert ExperimentConfig(seed=1).hash != ExperimentConfig(seed=2).hash


@pytest.mark.parametrize("text,match", [
    ("tasks = colorize", "unknown task"),
    ("attacks = cw", "unknown attack"),
    ("defenses = median", "unknown defense"),
    ("epochs = many", "bad value"),
    ("flavour = 3", "unknown config key"),
    ("just words", "line 1"),
    ("ratios = 1.5", "ratios"),
    ("image_count = 500", "validation images"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        ExperimentConfig.from_text(text)


def test_attack_variants_expand_ratios():
    cfg = ExperimentConfig(attacks=["ifgsm", "freq_low"], ratios=[0.125, 0.25])
    assert attack_variants(cfg) == [("ifgsm", "", None), ("freq_low", "low", 0.125), ("freq_low", "low", 0.25)]


def test_gen_dataset(tmp_path):
    files = gen_dataset(Task("denoise", sigma=15), 10, 3, tmp_path / "a", size=32)
    assert sum(f.suffix == ".pgm" for f in files) == 20
    assert (tmp_path / "a" / "manifest.csv").exists()
    comments, rows = read_csv(tmp_path / "a" / "manifest.csv")
    assert len(rows) == 10 and any("sigma 15 " in c for c in comments)
    gen_dataset(Task("denoise", sigma=15), 10, 3, tmp_path / "b", size=32)
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    resid = np.concatenate([
        (read_pgm(tmp_path / "a" / r["degraded"]) - read_pgm(tmp_path / "a" / r["clean"])).ravel() for r in rows
    ])
    assert 13.5 <= resid.std() <= 16.5


def test_missing_weights_names_train(tmp_path):
    cfg = tiny_config(tmp_path)
    with pytest.raises(MissingWeightsError, match="i2ivuln train"):
        load_model(cfg, "denoise")


def test_architecture_mismatch_detected(trained, tmp_path):
    cfg = ExperimentConfig(**{**vars(trained), "depth": 4})
    with pytest.raises(MissingWeightsError.__mro__[1], match="depth 4"):
        load_model(cfg, "denoise")


def test_empty_attack_list_header_only(tmp_path):
    cfg = tiny_config(tmp_path, attacks=[])
    paths = run_experiment(cfg)
    comments, rows = read_csv(paths["results"])
    assert rows == [] and comments[0].startswith("# i2ivuln")


@pytest.fixture(scope="module")
def experiment(trained):
    paths = run_experiment(trained)
    first = {k: p.read_bytes() for k, p in paths.items()}
    return trained, paths, first


def test_row_count_and_columns(experiment):
    cfg, paths, _ = experiment
    _, rows = read_csv(paths["results"])
    n_attacks = len(attack_variants(cfg))
    assert len(rows) == len(cfg.tasks) * n_attacks * (len(cfg.defenses) + 1) * len(cfg.epsilons) * cfg.image_count
    for r in rows:
        assert float(r["vi"]) == float(r["q_i"]) / float(r["q_o"])
        assert float(r["q_i"]) <= 99.0 and float(r["q_o"]) <= 99.0


def test_rows_sorted_by_key(experiment):
    _, paths, _ = experiment
    _, rows = read_csv(paths["results"])
    keys = [(r["model"], r["attack"], r["band"], float(r["r"] or -1), r["defense"], float(r["epsilon"]), int(r["image_id"]))
            for r in rows]
    assert keys == sorted(keys)


def test_headers_carry_version_hash_defaults(experiment):
    cfg, paths, _ = experiment
    for p in paths.values():
        head = p.read_text().splitlines()[:3]
        assert head[0].startswith("# i2ivuln 0.1.0")
        assert head[1] == f"# config_hash {cfg.hash}"
        assert '"jpeg_quality": 75' in head[2] and '"bits": 5' in head[2]


def test_rerun_is_byte_identical(experiment):
    cfg, _, first = experiment
    second = run_experiment(cfg)
    for k, p in second.items():
        assert p.read_bytes() == first[k], k


def test_transfer_matrix_shape(experiment):
    cfg, paths, _ = experiment
    _, rows = read_csv(paths["transfer"])
    assert [r["source"] for r in rows] == cfg.tasks
    assert all(math.isfinite(float(r[t])) for r in rows for t in cfg.tasks)


def test_plotdata_roundtrip(experiment, tmp_path):
    _, paths, _ = experiment
    dats = emit_plotdata(paths["results"], tmp_path)
    _, rows = read_csv(paths["results"])
    expected = plot_aggregates(rows)
    for fig, path in dats.items():
        text = path.read_text()
        assert "# columns:" in text
        parsed = read_plotdata(path)
        assert len(parsed) == len(expected[fig])
        for a, b in zip(parsed, expected[fig]):
            assert a[:-2] == b[:-2]
            assert abs(a[-2] - b[-2]) <= 1e-9 and a[-1] == b[-1]


def test_plotdata_matches_aggregate_csv(experiment):
    _, paths, _ = experiment
    _, fig2 = read_csv(paths["fig2"])
    _, rows = read_csv(paths["results"])
    agg = {c[:3]: c[3] for c in plot_aggregates(rows)["fig2"]}
    for r in fig2:
        assert abs(agg[(r["attack"], r["model"], r["epsilon"])] - float(r["mean_vi"])) <= 1e-9


def test_plotdata_single_row(experiment, tmp_path):
    _, paths, _ = experiment
    lines = paths["results"].read_text().splitlines()
    row = next(ln for ln in lines if ln.startswith("denoise,ifgsm,,,none,"))
    src = tmp_path / "one.csv"
    src.write_text("\n".join(lines[:4] + [row]) + "\n")
    dats = emit_plotdata(src, tmp_path / "out")
    points = {fig: read_plotdata(p) for fig, p in dats.items()}
    assert len(points["fig2"]) == 1 and len(points["fig9"]) == 1 and points["fig7"] == []
    assert points["fig2"][0][-1] == 1


def test_plotdata_malformed_csv_reports_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("# comment\nmodel,attack,band,r,defense,epsilon,vi\nsr,ifgsm,,,none,8,1.5\nsr,ifgsm,,none\n")
    with pytest.raises(CsvFormatError, match="line 4"):
        emit_plotdata(p, tmp_path)
    p.write_text("model,attack,band,r,defense,epsilon,vi\nsr,ifgsm,,,none,8,abc\n")
    with pytest.raises(CsvFormatError, match="line 2"):
        emit_plotdata(p, tmp_path)


# ---------------------------------------------------------------------------
# CLI


def test_cli_exit_codes(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY + f"output_dir = {tmp_path / 'cli'}\n")
    assert main(["attack", "--config", str(cfg), "--epsilons", "x"]) == 2
    assert main(["attack", "--config", str(cfg)]) == 3
    assert "i2ivuln train" in capsys.readouterr().err
    assert main(["report", "--config", str(cfg)]) == 3
    assert main(["attack", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_cli_gen_data(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--count", "10", "--patch-size", "16",
                 "--output-dir", str(tmp_path)]) == 0
    assert len(list((tmp_path / "d").glob("*.pgm"))) == 20
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--task", "colorize"]) == 2


def test_cli_full_flow(trained, tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(trained.to_text())
    base = ["--config", str(cfg)]
    assert main(["attack", *base, "--attacks", "ifgsm", "--epsilons", "8"]) == 0
    assert (trained.out / "attacks.csv").exists()
    assert main(["defend", *base, "--attacks", "ifgsm", "--epsilons", "8", "--defenses", "jpeg,bit_reduce"]) == 0
    assert main(["universal", *base]) == 0
    assert (trained.out / "universal_ifgsm_denoise.npy").exists()
    assert main(["transfer", *base, "--method", "fda"]) == 0
    assert main(["run-experiment", *base, "--attacks", "random", "--defenses", ""]) == 0
    assert main(["report", *base, "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "fig2.dat").exists()


def test_cli_numeric_failure_exit(tmp_path, monkeypatch):
    import i2ivuln.cli as cli
    from i2ivuln.attacks import AttackNumericError

    def boom(cfg, args):
        raise AttackNumericError("gradient is not finite at iteration 3")

    monkeypatch.setattr(cli, "cmd_attack", boom)
    cfg = tmp_path / "c.cfg"
    cfg.write_text(TINY + f"output_dir = {tmp_path / 'n'}\n")
    assert cli.main(["attack", "--config", str(cfg)]) == 4
