"""Command-line experiment harness.

Subcommands ``gen``, ``novelty``, ``al`` and ``pseudo`` share one typed,
flat ``key = value`` configuration. Values come from the defaults, then
the ``--config`` file, then ``OPENSET_AL_<KEY>`` environment variables,
then command-line flags; later sources win.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ._csvio import write_csv
from .active_learning import ALConfig, QueryStrategy, StrategyKind, run_active_learning
from .embedding_space import DatasetSplit, load_dataset, save_dataset
from .evaluation import (
    aupr,
    auroc,
    closed_accuracy,
    f1_at_threshold,
    format_curve_csv,
    open_set_accuracy,
    pr_curve_points,
    recall_at_m,
    roc_curve_points,
)
from .exceptions import ConfigError, DataError, InvariantViolation, OracleError
from .kernel import KernelParams, score_set
from .open_set import NOVEL, NoveltyMeasure, calibrate_threshold, format_score_dump, novelty_scores
from .pseudo_label import format_pseudo_labels, generate_pseudo_labels, silhouette_score
from .synthetic import PRESET_SIGMA, PRESETS, generate_mixture, preset

log = logging.getLogger("openset_al")

ENV_PREFIX = "OPENSET_AL_"
FORMATS = ("csv", "jsonl")


# --------------------------------------------------------------------------
# configuration


def _int_list(text: str) -> tuple[int, ...]:
    """``"2-5,8"`` -> ``(2, 3, 4, 5, 8)``."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        lo, sep, hi = part.partition("-")
        if sep:
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(",") if p.strip())


def _str_list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


def _opt(parse):
    return lambda text: None if text.strip().lower() in ("", "none") else parse(text)


def _limit(text: str):
    text = text.strip()
    return "all" if text == "all" else int(text)


_PARSERS = {
    "data_dir": _opt(str),
    "data_format": str,
    "preset": str,
    "n_classes": _opt(int),
    "dim": _opt(int),
    "per_class_count": _opt(int),
    "spread": _opt(float),
    "std": _opt(float),
    "fraction_known": _opt(float),
    "train_fraction": _opt(float),
    "sigma": _opt(float),
    "neighbor_limit": _limit,
    "measures": _str_list,
    "strategies": _str_list,
    "budgets": _float_list,
    "seeds": _int_list,
    "calibration_fraction": float,
    "k_candidates": _opt(_int_list),
    "n_init": int,
    "recall_m": _int_list,
    "eval_every": _opt(int),
    "format": str,
    "out": str,
}

_MIXTURE_KEYS = {
    "n_classes": "n_classes",
    "dim": "dim",
    "per_class_count": "per_class_count",
    "spread": "class_center_spread",
    "std": "within_class_std",
    "fraction_known": "fraction_known",
    "train_fraction": "train_fraction",
}


@dataclass(frozen=True)
class ExperimentConfig:
    data_dir: str | None = None
    data_format: str = "csv"
    preset: str = "separable"
    n_classes: int | None = None
    dim: int | None = None
    per_class_count: int | None = None
    spread: float | None = None
    std: float | None = None
    fraction_known: float | None = None
    train_fraction: float | None = None
    sigma: float | None = None
    neighbor_limit: int | str = "all"
    measures: tuple = ("nn_distance", "density", "entropy")
    strategies: tuple = ("uldr", "random", "fnn", "kde")
    budgets: tuple = (0.02, 0.05, 0.1)
    seeds: tuple = (0,)
    calibration_fraction: float = 0.2
    k_candidates: tuple | None = None
    n_init: int = 5
    recall_m: tuple = (1, 2, 4, 8)
    eval_every: int | None = None
    format: str = "csv"
    out: str = "results"

    def __post_init__(self):
        if self.data_format not in FORMATS or self.format not in FORMATS:
            raise ConfigError(f"formats must be one of {FORMATS}")
        if self.data_dir is None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.data_dir is not None and self.sigma is None:
            raise ConfigError("sigma is required when reading embeddings from data_dir")
        if self.sigma is not None and not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        KernelParams(1.0, self.neighbor_limit)
        for m in self.measures:
            _enum(NoveltyMeasure, m, "measure")
        for s in self.strategies:
            _enum(StrategyKind, s, "strategy")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if any(not 0.0 <= b <= 1.0 for b in self.budgets):
            raise ConfigError(f"budgets are fractions of the observed pool in [0, 1], got {self.budgets}")
        if not 0.0 < self.calibration_fraction < 1.0:
            raise ConfigError("calibration_fraction must be in (0, 1)")
        if self.k_candidates is not None and (not self.k_candidates or min(self.k_candidates) < 2):
            raise ConfigError("k_candidates must be integers >= 2")
        if self.n_init < 1:
            raise ConfigError("n_init must be positive")
        if not self.recall_m or min(self.recall_m) < 1:
            raise ConfigError("recall_m values must be positive")
        if self.eval_every is not None and self.eval_every < 1:
            raise ConfigError("eval_every must be positive")

    @classmethod
    def from_mapping(cls, raw: dict) -> "ExperimentConfig":
        values = {}
        for key, text in raw.items():
            if key not in _PARSERS:
                raise ConfigError(f"unknown config key {key!r}")
            try:
                values[key] = _PARSERS[key](text) if isinstance(text, str) else text
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from None
        return cls(**values)

    @property
    def kernel_sigma(self) -> float:
        return self.sigma if self.sigma is not None else PRESET_SIGMA[self.preset]

    def params(self) -> KernelParams:
        return KernelParams(self.kernel_sigma, self.neighbor_limit)

    def mixture(self, seed: int):
        overrides = {_MIXTURE_KEYS[k]: getattr(self, k) for k in _MIXTURE_KEYS if getattr(self, k) is not None}
        return preset(self.preset, seed, **overrides)

    def resolved(self) -> dict:
        """Every setting that influences results, as plain JSON values."""
        d = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}
        d["sigma"] = self.kernel_sigma
        d.pop("out")
        if self.data_dir is None:
            mix = self.mixture(0).to_dict()
            d.update({k: mix[v] for k, v in _MIXTURE_KEYS.items()})
        return d


def _enum(enum_cls, value, what):
    try:
        return enum_cls(value)
    except ValueError:
        raise ConfigError(f"unknown {what} {value!r}; choose from {[e.value for e in enum_cls]}") from None


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{n}: expected 'key = value'")
        raw[key.strip()] = value.strip()
    return raw


def resolve_config(config_path=None, env=None, overrides=None) -> ExperimentConfig:
    raw = read_config_file(config_path) if config_path else {}
    env = os.environ if env is None else env
    for key in _PARSERS:
        if ENV_PREFIX + key.upper() in env:
            raw[key] = env[ENV_PREFIX + key.upper()]
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return ExperimentConfig.from_mapping(raw)


def manifest_hash(cfg: ExperimentConfig, seed: int | None = None) -> str:
    payload = json.dumps({"config": cfg.resolved(), "seed": seed}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# --------------------------------------------------------------------------
# output


class OutputWriter:
    """The one place files are written for an output directory."""

    def __init__(self, root, force: bool = False):
        self.root = Path(root)
        if self.root.exists() and not self.root.is_dir():
            raise ConfigError(f"output path {self.root} is not a directory")
        if self.root.is_dir() and any(self.root.iterdir()) and not force:
            raise ConfigError(f"output directory {self.root} is not empty; pass --force to overwrite")
        self.root.mkdir(parents=True, exist_ok=True)
        self.written: list[str] = []

    def path(self, rel) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def text(self, rel, content: str) -> None:
        self.path(rel).write_text(content, encoding="utf-8")
        self.written.append(str(rel))

    def json(self, rel, obj) -> None:
        self.text(rel, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _tag(h: str) -> str:
    return f"manifest_hash={h}"


def _mean(values) -> float:
    return math.fsum(values) / len(values)


# --------------------------------------------------------------------------
# data


def load_split(cfg: ExperimentConfig, seed: int) -> DatasetSplit:
    if cfg.data_dir is not None:
        return load_dataset(cfg.data_dir, cfg.data_format)
    return generate_mixture(cfg.mixture(seed))


def _require_truth(split: DatasetSplit):
    for name, pool in (("observed", split.observed), ("test", split.test)):
        if not pool.has_truth:
            raise DataError(f"the {name} set needs ground-truth labels for evaluation")


def calibration_mask(is_novel, fraction: float, seed: int) -> np.ndarray:
    """Stratified held-out mask: ``fraction`` of each of the novel and known groups."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 1])))
    mask = np.zeros(is_novel.size, dtype=bool)
    for group in (np.flatnonzero(is_novel), np.flatnonzero(~is_novel)):
        if group.size < 2:
            raise DataError("calibration needs at least two novel and two known observed examples")
        n_cal = min(group.size - 1, max(1, int(math.floor(fraction * group.size + 0.5))))
        mask[rng.permutation(group)[:n_cal]] = True
    return mask


def budget_count(fraction: float, pool_size: int) -> int:
    return int(math.floor(fraction * pool_size + 0.5))


# --------------------------------------------------------------------------
# subcommands


def cmd_gen(cfg: ExperimentConfig, out: OutputWriter) -> dict:
    if cfg.data_dir is not None:
        raise ConfigError("gen draws synthetic data; unset data_dir")
    for seed in cfg.seeds:
        h = manifest_hash(cfg, seed)
        mix = cfg.mixture(seed)
        split = generate_mixture(mix)
        sub = f"seed_{seed}"
        files = save_dataset(split, out.path(sub), cfg.format, comment=_tag(h))
        out.written += [f"{sub}/{f}" for f in files.values()]
        out.json(f"{sub}/manifest.json", {
            "manifest_hash": h,
            "seed": seed,
            "mixture": mix.to_dict(),
            "sigma": cfg.kernel_sigma,
            "format": cfg.format,
            "files": files,
            "counts": {"train": len(split.train), "observed": len(split.observed), "test": len(split.test)},
            "known_classes": sorted(split.known_classes),
            "novel_classes": sorted(split.novel_classes),
        })
        log.info("seed %d: wrote %s", seed, sub)
    return {"datasets": len(cfg.seeds)}


def cmd_novelty(cfg: ExperimentConfig, out: OutputWriter) -> dict:
    params = cfg.params()
    per_seed = {}
    thresholds = {}
    for seed in cfg.seeds:
        h = manifest_hash(cfg, seed)
        split = load_split(cfg, seed)
        _require_truth(split)
        obs = split.observed
        X, truth, is_novel = obs.vectors, obs.reveal_labels(), obs.reveal_is_novel()
        cal = calibration_mask(is_novel, cfg.calibration_fraction, seed)
        ev = ~cal
        s = score_set(X, split.train, params)
        closed_pred = s.classes[s.top]
        rows, deltas = {}, {}
        for m in cfg.measures:
            scores = novelty_scores(X, split.train, params, m)
            delta = calibrate_threshold(scores[cal], is_novel[cal])
            pred = np.where(scores > delta, NOVEL, closed_pred)
            rows[m] = {
                "auroc": auroc(scores[ev], is_novel[ev]),
                "aupr": aupr(scores[ev], is_novel[ev]),
                "f1": f1_at_threshold(scores[ev], is_novel[ev], delta),
                "open_set_accuracy": open_set_accuracy(pred[ev], truth[ev], is_novel[ev]),
            }
            deltas[m] = delta
            tag = _tag(h)
            ids = [obs.ids[i] for i in np.flatnonzero(ev)]
            out.text(f"scores_{m}_seed{seed}.csv", format_score_dump(ids, scores[ev], is_novel[ev], tag))
            out.text(f"roc_{m}_seed{seed}.csv", format_curve_csv(roc_curve_points(scores[ev], is_novel[ev]), tag))
            out.text(f"pr_{m}_seed{seed}.csv", format_curve_csv(pr_curve_points(scores[ev], is_novel[ev]), tag))
        per_seed[str(seed)] = {"manifest_hash": h, "metrics": rows}
        thresholds[str(seed)] = deltas
        log.info("seed %d: %s", seed, {m: round(r["auroc"], 4) for m, r in rows.items()})
    mean = {
        m: {k: _mean([per_seed[str(s)]["metrics"][m][k] for s in cfg.seeds]) for k in per_seed[str(cfg.seeds[0])]["metrics"][m]}
        for m in cfg.measures
    }
    report = {
        "manifest_hash": manifest_hash(cfg),
        "config": cfg.resolved(),
        "metrics": mean,
        "per_seed": per_seed,
        "thresholds": thresholds,
    }
    out.json("novelty_report.json", report)
    return report


def cmd_al(cfg: ExperimentConfig, out: OutputWriter) -> dict:
    params = cfg.params()
    cells = {}
    for seed in cfg.seeds:
        h = manifest_hash(cfg, seed)
        split = load_split(cfg, seed)
        _require_truth(split)
        gamma = len(split.observed)
        for strategy in cfg.strategies:
            for frac in cfg.budgets:
                b = budget_count(frac, gamma)
                al_cfg = ALConfig(b, QueryStrategy(strategy, seed), params, cfg.eval_every)
                trace, C = run_active_learning(split, al_cfg)
                header = {"manifest_hash": h, "seed": seed, "strategy": strategy, "budget": frac, "budget_count": b}
                out.text(f"traces/{strategy}_b{frac:g}_seed{seed}.jsonl", trace.to_jsonl(header))
                final = trace.snapshots[-1]
                cells.setdefault((strategy, frac), []).append(
                    {"seed": seed, "budget_count": b, "novel_acc": final.novel_acc, "combined_acc": final.combined_acc,
                     "novel_queried": sum(s.was_novel for s in trace.steps), "final_centers": len(C)}
                )
        log.info("seed %d done", seed)

    curve_rows, summary = [], []
    for strategy in cfg.strategies:
        for frac in cfg.budgets:
            runs = cells[(strategy, frac)]
            novel = _mean([r["novel_acc"] for r in runs])
            combined = _mean([r["combined_acc"] for r in runs])
            curve_rows.append((strategy, repr(frac), repr(novel), repr(combined), len(runs)))
            summary.append({"strategy": strategy, "budget": frac, "novel_acc": novel, "combined_acc": combined, "runs": runs})
    tag = _tag(manifest_hash(cfg))
    out.text("al_curves.csv", write_csv(("strategy", "budget", "novel_acc", "combined_acc", "n_seeds"), curve_rows, tag))
    for strategy in cfg.strategies:
        for family in ("novel_acc", "combined_acc"):
            pts = [(r["budget"], r[family]) for r in summary if r["strategy"] == strategy]
            out.text(f"curves/{family}_{strategy}.csv", format_curve_csv(pts, tag))
    report = {"manifest_hash": manifest_hash(cfg), "config": cfg.resolved(), "cells": summary}
    out.json("al_report.json", report)
    return report


def default_k_candidates(pool_size: int) -> tuple[int, ...]:
    return tuple(range(2, max(2, min(25, pool_size // 2)) + 1))


def cmd_pseudo(cfg: ExperimentConfig, out: OutputWriter) -> dict:
    params = cfg.params()
    per_seed = {}
    for seed in cfg.seeds:
        h = manifest_hash(cfg, seed)
        split = load_split(cfg, seed)
        pool = split.observed
        cands = cfg.k_candidates or default_k_candidates(len(pool))
        if max(cands) > len(pool):
            raise DataError(f"observed pool of {len(pool)} is smaller than the candidate grid (max k {max(cands)})")
        mapping, k, clustering = generate_pseudo_labels(pool, cands, seed, n_init=cfg.n_init, return_clustering=True)
        out.text(f"pseudo_labels_seed{seed}.csv", format_pseudo_labels(mapping, _tag(h)))
        row = {"manifest_hash": h, "k": k, "silhouette": silhouette_score(pool.vectors, clustering.assignment)}
        if split.test.has_truth:
            truth = split.test.reveal_labels()
            novel = split.test.reveal_is_novel()
            row["recall_at_m"] = {
                str(m): recall_at_m(split.test.vectors, truth, m, query_mask=novel) for m in cfg.recall_m
            }
            known = ~novel
            s = score_set(split.test.vectors[known], split.train, params)
            row["known_accuracy"] = closed_accuracy(truth[known], s.classes[s.top], split.vocabulary)
        per_seed[str(seed)] = row
        log.info("seed %d: k=%d silhouette=%.4f", seed, k, row["silhouette"])
    report = {"manifest_hash": manifest_hash(cfg), "config": cfg.resolved(), "per_seed": per_seed}
    out.json("pseudo_report.json", report)
    return report


COMMANDS = {"gen": cmd_gen, "novelty": cmd_novelty, "al": cmd_al, "pseudo": cmd_pseudo}


# --------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="openset-al", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "gen": "write synthetic train/observed/test files",
        "novelty": "score the observed set and report novelty-detection metrics",
        "al": "run active-learning query loops and accuracy-vs-budget curves",
        "pseudo": "cluster the observed set into pseudo-labels",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="run a single seed (overrides 'seeds')")
        p.add_argument("--out", help="output directory (overrides 'out')")
        p.add_argument("--force", action="store_true", help="write into a non-empty output directory")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
        overrides = {"out": args.out, "seeds": None if args.seed is None else (args.seed,)}
        cfg = resolve_config(args.config, overrides=overrides)
        writer = OutputWriter(cfg.out, force=args.force)
        COMMANDS[args.command](cfg, writer)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, OracleError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    print(f"{args.command}: wrote {len(writer.written)} files to {writer.root}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
