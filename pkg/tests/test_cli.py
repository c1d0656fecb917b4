import json

import numpy as np
import pytest

from openset_al.active_learning import ALTrace
from openset_al.cli import ExperimentConfig, main, manifest_hash, resolve_config
from openset_al.embedding_space import load_dataset
from openset_al.evaluation import parse_curve_csv
from openset_al.exceptions import ConfigError
from openset_al.open_set import parse_score_dump
from openset_al.pseudo_label import parse_pseudo_labels

SMALL = """
# a small, fast experiment
preset = separable
n_classes = 6
per_class_count = 40
seeds = 0
budgets = 0.05, 0.1
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text(SMALL)
    return p


def _run(*args):
    return main([str(a) for a in args])


class TestConfig:
    def test_precedence(self, cfg_file):
        env = {"OPENSET_AL_N_CLASSES": "8", "OPENSET_AL_SIGMA": "3.5"}
        cfg = resolve_config(cfg_file, env=env, overrides={"sigma": "7"})
        assert cfg.n_classes == 8 and cfg.sigma == 7.0 and cfg.per_class_count == 40

    def test_ranges(self):
        cfg = ExperimentConfig.from_mapping({"k_candidates": "2-4,9"})
        assert cfg.k_candidates == (2, 3, 4, 9)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"sigmaa": "1"})

    @pytest.mark.parametrize(
        "raw",
        [{"budgets": "1.5"}, {"measures": "cosine"}, {"strategies": "greedy"}, {"sigma": "-1"}, {"data_dir": "x"}],
    )
    def test_invalid_values(self, raw):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping(raw)

    def test_hash_depends_on_seed_and_config(self):
        a = ExperimentConfig()
        assert manifest_hash(a, 0) != manifest_hash(a, 1)
        assert manifest_hash(a, 0) != manifest_hash(ExperimentConfig(sigma=3.0), 0)
        assert manifest_hash(a, 0) == manifest_hash(ExperimentConfig(out="elsewhere"), 0)


class TestExitCodes:
    def test_usage_error(self, capsys):
        assert _run("frobnicate") == 1

    def test_bad_config(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("sigma = banana\n")
        assert _run("gen", "--config", p, "--out", tmp_path / "o") == 1

    def test_non_empty_out_without_force(self, tmp_path, cfg_file):
        out = tmp_path / "o"
        out.mkdir()
        (out / "keep.txt").write_text("x")
        assert _run("gen", "--config", cfg_file, "--out", out) == 1
        assert _run("gen", "--config", cfg_file, "--out", out, "--force") == 0

    def test_missing_data_files(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text(f"data_dir = {tmp_path / 'nowhere'}\nsigma = 1\n")
        assert _run("novelty", "--config", p, "--out", tmp_path / "o") == 2

    def test_pool_smaller_than_grid(self, tmp_path, cfg_file):
        env_cfg = tmp_path / "k.cfg"
        env_cfg.write_text(SMALL + "k_candidates = 2-500\n")
        assert _run("pseudo", "--config", env_cfg, "--out", tmp_path / "o") == 2


class TestGen:
    def test_three_seeds(self, tmp_path, cfg_file):
        out = tmp_path / "g"
        cfg_file.write_text(SMALL.replace("seeds = 0", "seeds = 0,1,2"))
        assert _run("gen", "--config", cfg_file, "--out", out) == 0
        dirs = sorted(p.name for p in out.iterdir())
        assert dirs == ["seed_0", "seed_1", "seed_2"]
        manifest = json.loads((out / "seed_1" / "manifest.json").read_text())
        assert set(manifest["counts"]) == {"train", "observed", "test"}
        split = load_dataset(out / "seed_1")
        assert len(split.observed) == manifest["counts"]["observed"]
        assert sorted(split.novel_classes) == manifest["novel_classes"]
        assert manifest["manifest_hash"] in (out / "seed_1" / "train.csv").read_text().splitlines()[0]

    def test_jsonl(self, tmp_path, cfg_file):
        out = tmp_path / "g"
        cfg_file.write_text(SMALL + "format = jsonl\n")
        assert _run("gen", "--config", cfg_file, "--out", out) == 0
        assert len(load_dataset(out / "seed_0").train) > 0

    def test_read_back_as_data_dir(self, tmp_path, cfg_file):
        assert _run("gen", "--config", cfg_file, "--out", tmp_path / "g") == 0
        p = tmp_path / "real.cfg"
        p.write_text(f"data_dir = {tmp_path / 'g' / 'seed_0'}\nsigma = 20\n")
        assert _run("novelty", "--config", p, "--out", tmp_path / "n") == 0


class TestNovelty:
    def test_report_schema(self, tmp_path, cfg_file):
        out = tmp_path / "n"
        assert _run("novelty", "--config", cfg_file, "--out", out) == 0
        report = json.loads((out / "novelty_report.json").read_text())
        assert set(report["metrics"]) == {"nn_distance", "density", "entropy"}
        for row in report["metrics"].values():
            assert set(row) == {"auroc", "aupr", "f1", "open_set_accuracy"}
        ids, s, y = parse_score_dump((out / "scores_density_seed0.csv").read_text())
        assert len(ids) == len(s) == len(y) > 0
        roc = parse_curve_csv((out / "roc_entropy_seed0.csv").read_text())
        assert tuple(roc[-1]) == (1.0, 1.0)

    def test_zero_noise_nn_distance(self, tmp_path, cfg_file):
        cfg_file.write_text(SMALL + "std = 0\n")
        out = tmp_path / "n"
        assert _run("novelty", "--config", cfg_file, "--out", out) == 0
        report = json.loads((out / "novelty_report.json").read_text())
        assert report["metrics"]["nn_distance"]["auroc"] == 1.0


class TestAL:
    def test_curve_counts(self, tmp_path, cfg_file):
        cfg_file.write_text(SMALL.replace("budgets = 0.05, 0.1", "budgets = 0.02, 0.05, 0.1"))
        out = tmp_path / "a"
        assert _run("al", "--config", cfg_file, "--out", out) == 0
        for family in ("novel_acc", "combined_acc"):
            pts = [parse_curve_csv((out / "curves" / f"{family}_{s}.csv").read_text()) for s in ("uldr", "random", "fnn", "kde")]
            assert sum(len(p) for p in pts) == 12
        rows = (out / "al_curves.csv").read_text().splitlines()
        assert rows[1] == "strategy,budget,novel_acc,combined_acc,n_seeds" and len(rows) == 2 + 12

    def test_traces_round_trip(self, tmp_path, cfg_file):
        out = tmp_path / "a"
        assert _run("al", "--config", cfg_file, "--out", out) == 0
        text = (out / "traces" / "uldr_b0.1_seed0.jsonl").read_text()
        header = json.loads(text.splitlines()[0])
        trace = ALTrace.from_jsonl(text)
        assert len(trace.steps) == header["budget_count"]

    def test_full_budget_agrees(self, tmp_path, cfg_file):
        cfg_file.write_text(SMALL.replace("budgets = 0.05, 0.1", "budgets = 1.0"))
        out = tmp_path / "a"
        assert _run("al", "--config", cfg_file, "--out", out) == 0
        cells = json.loads((out / "al_report.json").read_text())["cells"]
        assert len({(c["novel_acc"], c["combined_acc"]) for c in cells}) == 1

    def test_budget_zero_baseline(self, tmp_path, cfg_file):
        cfg_file.write_text(SMALL.replace("budgets = 0.05, 0.1", "budgets = 0"))
        out = tmp_path / "a"
        assert _run("al", "--config", cfg_file, "--out", out) == 0
        cells = json.loads((out / "al_report.json").read_text())["cells"]
        assert len({c["combined_acc"] for c in cells}) == 1
        assert all(c["novel_acc"] == 0.0 for c in cells)


class TestPseudo:
    def test_three_blob(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("preset = three_blob\nfraction_known = 0.1\nk_candidates = 2-6\n")
        out = tmp_path / "p"
        assert _run("pseudo", "--config", p, "--out", out) == 0
        report = json.loads((out / "pseudo_report.json").read_text())
        row = report["per_seed"]["0"]
        assert set(row["recall_at_m"]) == {"1", "2", "4", "8"}
        mapping = parse_pseudo_labels((out / "pseudo_labels_seed0.csv").read_text())
        assert len(set(mapping.values())) == row["k"]


@pytest.mark.parametrize("command", ["gen", "novelty", "al", "pseudo"])
def test_byte_identical_reruns(tmp_path, cfg_file, command):
    outs = [tmp_path / "r1", tmp_path / "r2"]
    for out in outs:
        assert _run(command, "--config", cfg_file, "--out", out) == 0
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


def test_seed_flag_overrides(tmp_path, cfg_file):
    out = tmp_path / "s"
    assert _run("gen", "--config", cfg_file, "--seed", 7, "--out", out) == 0
    assert [p.name for p in out.iterdir()] == ["seed_7"]


def test_emitted_vectors_round_trip(tmp_path, cfg_file):
    from openset_al.synthetic import generate_mixture
    from openset_al.cli import resolve_config as rc

    assert _run("gen", "--config", cfg_file, "--out", tmp_path / "g") == 0
    back = load_dataset(tmp_path / "g" / "seed_0")
    orig = generate_mixture(rc(cfg_file, env={}).mixture(0))
    assert np.array_equal(back.train.vectors, orig.train.vectors)
    assert back.observed.ids == orig.observed.ids
