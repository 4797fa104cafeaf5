"""Sensor-bias case study: train a set of runs per seed, score every run under every test condition.

Layout under ``StudyConfig.out``::

    seed_<s>/corpus/          synthetic corpus for that seed
    seed_<s>/foundation/      pretrained backbone shared by the seed's runs
    seed_<s>/runs/<name>/     one completion checkpoint per run
    report.json, cells.csv, trends.csv, rmse.png, ratios.png, timing.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..core import MetricReport
from ..errors import ConfigurationError
from ..net.checkpoint import load_foundation
from ..sensors import BiasSpec
from .config import RunConfig, SplitSpec
from .corpus import ensure_corpus
from .evaluation import evaluate
from .training import pretrain_foundation, train

log = logging.getLogger(__name__)

REPORT_SCHEMA = "depthprompt-study/1"
FOOTER = ("Synthetic desk-scale study. Absolute numbers are not comparable to published "
          "benchmark tables; only orderings and degradation ratios are meant to carry over.")


@dataclass(frozen=True)
class StudyRun:
    name: str
    variant: str
    train_spec: BiasSpec

    def to_dict(self) -> dict:
        return {"name": self.name, "variant": self.variant, "train_spec": self.train_spec.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "StudyRun":
        return cls(d["name"], d["variant"], BiasSpec.from_dict(d["train_spec"]))


def default_conditions(matched: int = 100, sparse_fraction: float = 0.05,
                       near: tuple = (0.0, 3.0), far: tuple = (3.0, math.inf)):
    """Runs and test specs of the default study.

    ``matched`` random samples is the training density; the sparsity shift
    keeps ``sparse_fraction`` of it. Range shift trains inside ``near`` and
    tests inside ``far``.
    """
    m = BiasSpec(sample_count=matched)
    near_spec = BiasSpec(sample_count=matched, range_window=near)
    runs = [
        StudyRun("full", "full", m),
        StudyRun("no_prompt", "no_prompt", m),
        StudyRun("no_pretrain", "no_pretrain", m),
        StudyRun("no_ls", "no_ls", m),
        StudyRun("no_spn", "no_spn", m),
        StudyRun("rda", "rda", m),
        StudyRun("full_near", "full", near_spec),
        StudyRun("no_pretrain_near", "no_pretrain", near_spec),
    ]
    tests = {
        "matched": m,
        "sparse": BiasSpec(sample_count=max(1, int(round(matched * sparse_fraction)))),
        "grid": BiasSpec(pattern="grid", grid_stride=4),
        "lines": BiasSpec(pattern="line", line_count=4),
        "near": near_spec,
        "far": BiasSpec(sample_count=matched, range_window=far),
    }
    return runs, tests


def trend_conditions(matched: int = 100, sparse_fraction: float = 0.05):
    """The smallest study that decides the three headline trends."""
    runs, tests = default_conditions(matched, sparse_fraction)
    keep = {"full", "no_prompt", "rda", "full_near", "no_pretrain_near"}
    return [r for r in runs if r.name in keep], {k: tests[k] for k in ("matched", "sparse", "far")}


def _default_runs():
    return default_conditions()[0]


def _default_tests():
    return default_conditions()[1]


@dataclass(frozen=True)
class StudyConfig:
    base: RunConfig = field(default_factory=RunConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    runs: tuple = field(default_factory=lambda: tuple(_default_runs()))
    tests: dict = field(default_factory=_default_tests)
    out: str = "study"

    def __post_init__(self):
        names = [r.name for r in self.runs]
        if len(set(names)) != len(names):
            raise ConfigurationError("run names must be unique")
        if not self.seeds:
            raise ConfigurationError("a study needs at least one seed")

    def seed_dir(self, seed: int) -> Path:
        return Path(self.out) / f"seed_{seed}"

    def checkpoint(self, seed: int, run: str) -> Path:
        return self.seed_dir(seed) / "runs" / run

    def run_config(self, seed: int, run: Optional[StudyRun] = None) -> RunConfig:
        # scene seeds move with the study seed so corpora are independent draws
        splits = {k: SplitSpec(v.seed + 1000 * seed, v.count) for k, v in self.base.splits.items()}
        d = self.seed_dir(seed)
        cfg = self.base.with_(corpus=str(d / "corpus"), splits=splits, seed=seed,
                              foundation_checkpoint=str(d / "foundation"))
        if run is not None:
            cfg = cfg.with_(variant=run.variant, train_spec=run.train_spec,
                            checkpoint=str(self.checkpoint(seed, run.name)))
        return cfg

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "seeds": list(self.seeds),
            "runs": [r.to_dict() for r in self.runs],
            "tests": {k: v.to_dict() for k, v in sorted(self.tests.items())},
        }

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict, out: str = "study") -> "StudyConfig":
        kw = {"out": d.get("out", out)}
        if "base" in d:
            kw["base"] = RunConfig.from_dict(d["base"])
        if "seeds" in d:
            kw["seeds"] = tuple(int(s) for s in d["seeds"])
        if "runs" in d:
            kw["runs"] = tuple(StudyRun.from_dict(r) for r in d["runs"])
        if "tests" in d:
            kw["tests"] = {k: BiasSpec.from_dict(v) for k, v in d["tests"].items()}
        return cls(**kw)


# ------------------------------------------------------------------ report


@dataclass
class StudyCell:
    seed: int
    run: str
    variant: str
    train_spec: BiasSpec
    test: str
    test_spec: BiasSpec
    metrics: MetricReport

    def to_dict(self) -> dict:
        return {"seed": self.seed, "run": self.run, "variant": self.variant,
                "train_spec": self.train_spec.to_dict(), "test": self.test,
                "test_spec": self.test_spec.to_dict(), "metrics": self.metrics.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "StudyCell":
        return cls(int(d["seed"]), d["run"], d["variant"], BiasSpec.from_dict(d["train_spec"]), d["test"],
                   BiasSpec.from_dict(d["test_spec"]), MetricReport.from_dict(d["metrics"]))


@dataclass
class StudyReport:
    config: dict
    cells: list
    trends: dict
    provenance: dict
    note: str = FOOTER

    def __post_init__(self):
        for c in self.cells:
            if c.metrics.n_valid <= 0:
                raise ConfigurationError(f"cell {c.run}/{c.test} (seed {c.seed}) has no valid pixel")

    def rmse(self, seed: int, run: str, test: str) -> float:
        for c in self.cells:
            if (c.seed, c.run, c.test) == (seed, run, test):
                return c.metrics.rmse
        raise KeyError((seed, run, test))

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "config": self.config, "provenance": self.provenance,
                "cells": [c.to_dict() for c in self.cells], "trends": self.trends, "note": self.note}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "StudyReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ConfigurationError(f"unexpected report schema {d.get('schema')!r}")
        return cls(d["config"], [StudyCell.from_dict(c) for c in d["cells"]], d["trends"], d["provenance"],
                   d.get("note", FOOTER))

    @classmethod
    def from_json(cls, text: str) -> "StudyReport":
        return cls.from_dict(json.loads(text))


# ------------------------------------------------------------------ trends

# (name, description, per-seed predicate over an rmse lookup)
TRENDS = {
    "sparsity_prompt": (
        "full degrades less than no_prompt from matched to sparse (RMSE ratio)",
        lambda r: r("full", "sparse") / r("full", "matched") < r("no_prompt", "sparse") / r("no_prompt", "matched"),
    ),
    "range_pretrain": (
        "near-trained full beats near-trained no_pretrain on the far window",
        lambda r: r("full_near", "far") < r("no_pretrain_near", "far"),
    ),
    "sparsity_rda": (
        "rda beats full on the sparse test",
        lambda r: r("rda", "sparse") < r("full", "sparse"),
    ),
    "diagonal": (
        "full scores best on its own training condition among the random/grid/line tests",
        lambda r: all(r("full", "matched") <= r("full", t) for t in ("sparse", "grid", "lines")),
    ),
}


def compute_trends(report_cells: list, seeds, min_hold: Optional[int] = None) -> dict:
    """Per-seed truth value of every trend whose cells are present, plus the hold count."""
    table = {(c.seed, c.run, c.test): c.metrics.rmse for c in report_cells}
    seeds = list(seeds)
    need = min_hold if min_hold is not None else max(1, len(seeds) - 1)
    out = {}
    for name, (desc, pred) in TRENDS.items():
        per_seed = {}
        for s in seeds:
            try:
                per_seed[str(s)] = bool(pred(lambda run, test: table[(s, run, test)]))
            except KeyError:
                break
        else:
            held = sum(per_seed.values())
            out[name] = {"description": desc, "per_seed": per_seed, "held": held,
                         "required": need, "passed": held >= need}
    return out


# ------------------------------------------------------------------ runner


def missing_checkpoints(cfg: StudyConfig) -> list[str]:
    gaps = []
    for s in cfg.seeds:
        for r in cfg.runs:
            if not (cfg.checkpoint(s, r.name) / "manifest.json").is_file():
                gaps.append(f"seed {s}: {r.name} ({r.variant}) at {cfg.checkpoint(s, r.name)}")
    return gaps


def train_study(cfg: StudyConfig, *, skip_existing: bool = True) -> dict:
    """Train every (seed, run) pair; returns wall-clock seconds per stage."""
    timing = {}
    for s in cfg.seeds:
        base = cfg.run_config(s)
        t0 = time.perf_counter()
        corpus = ensure_corpus(base.corpus, base.scene, base.splits)
        fpath = Path(base.foundation_checkpoint)
        needs_foundation = any(r.variant != "no_pretrain" for r in cfg.runs)
        foundation = None
        if needs_foundation:
            if skip_existing and (fpath / "manifest.json").is_file():
                foundation, _ = load_foundation(fpath)
            else:
                foundation = pretrain_foundation(base, corpus, out=str(fpath))
        timing[f"seed_{s}/prepare"] = time.perf_counter() - t0
        for r in cfg.runs:
            if skip_existing and (cfg.checkpoint(s, r.name) / "manifest.json").is_file():
                continue
            t0 = time.perf_counter()
            train(cfg.run_config(s, r), corpus, foundation)
            timing[f"seed_{s}/train/{r.name}"] = time.perf_counter() - t0
            log.info("seed %d run %s trained in %.1fs", s, r.name, timing[f"seed_{s}/train/{r.name}"])
    return timing


def run_bias_study(cfg: StudyConfig, *, write: bool = True, timing: Optional[dict] = None) -> StudyReport:
    """Evaluate every trained run under every test spec and assemble the report.

    All checkpoints must exist (see :func:`train_study`); gaps are listed in
    the raised ConfigurationError.
    """
    gaps = missing_checkpoints(cfg)
    if gaps:
        raise ConfigurationError("missing checkpoints:\n  " + "\n  ".join(gaps))
    timing = dict(timing or {})
    cells = []
    for s in cfg.seeds:
        base = cfg.run_config(s)
        corpus = ensure_corpus(base.corpus, base.scene, base.splits)
        for r in cfg.runs:
            t0 = time.perf_counter()
            for tname in sorted(cfg.tests):
                spec = cfg.tests[tname]
                rep = evaluate(cfg.checkpoint(s, r.name), spec, corpus)
                cells.append(StudyCell(s, r.name, r.variant, r.train_spec, tname, spec, rep))
            timing[f"seed_{s}/evaluate/{r.name}"] = time.perf_counter() - t0
    provenance = {
        "config_digest": cfg.digest(),
        "seeds": list(cfg.seeds),
        "run_config_digests": {f"{s}/{r.name}": cfg.run_config(s, r).digest() for s in cfg.seeds for r in cfg.runs},
    }
    report = StudyReport(cfg.to_dict(), cells, compute_trends(cells, cfg.seeds), provenance)
    if write:
        write_report(report, cfg.out, timing)
    return report


# ------------------------------------------------------------------ output


def write_report(report: StudyReport, out, timing: Optional[dict] = None) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "run", "variant", "train", "test", "rmse", "mae", "delta1", "n_valid"])
        for c in report.cells:
            w.writerow([c.seed, c.run, c.variant, c.train_spec.label(), c.test,
                        repr(c.metrics.rmse), repr(c.metrics.mae), repr(c.metrics.delta1), c.metrics.n_valid])
    with open(out / "trends.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        seeds = report.provenance["seeds"]
        w.writerow(["trend", *[f"seed_{s}" for s in seeds], "held", "required", "passed"])
        for name, t in report.trends.items():
            w.writerow([name, *[t["per_seed"].get(str(s)) for s in seeds], t["held"], t["required"], t["passed"]])
    if timing is not None:
        stamp = {"finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                 "seconds": {k: round(v, 3) for k, v in timing.items()}}
        (out / "timing.json").write_text(json.dumps(stamp, indent=2, sort_keys=True))
    plot_report(report, out)


def _mean_table(report: StudyReport):
    runs = list(dict.fromkeys(c.run for c in report.cells))
    tests = list(dict.fromkeys(c.test for c in report.cells))
    acc = {}
    for c in report.cells:
        acc.setdefault((c.run, c.test), []).append(c.metrics.rmse)
    table = np.array([[np.mean(acc.get((r, t), [np.nan])) for t in tests] for r in runs])
    return runs, tests, table


def plot_report(report: StudyReport, out) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out)
    runs, tests, table = _mean_table(report)
    fig, ax = plt.subplots(figsize=(1.2 * len(tests) + 3, 4))
    width = 0.8 / len(runs)
    x = np.arange(len(tests))
    for i, r in enumerate(runs):
        ax.bar(x + i * width - 0.4 + width / 2, table[i], width, label=r)
    ax.set_xticks(x, tests)
    ax.set_ylabel("RMSE (mean over seeds)")
    ax.legend(fontsize=7, ncol=2)
    fig.text(0.01, 0.01, FOOTER, fontsize=6, wrap=True)
    fig.tight_layout(rect=(0, 0.06, 1, 1))
    fig.savefig(out / "rmse.png", dpi=100)
    plt.close(fig)

    if "matched" in tests:
        j = tests.index("matched")
        ratios = table / table[:, j:j + 1]
        fig, ax = plt.subplots(figsize=(1.2 * len(tests) + 3, 4))
        im = ax.imshow(ratios, cmap="viridis")
        ax.set_xticks(range(len(tests)), tests)
        ax.set_yticks(range(len(runs)), runs)
        for (a, b), v in np.ndenumerate(ratios):
            ax.text(b, a, f"{v:.2f}", ha="center", va="center", fontsize=7, color="w")
        fig.colorbar(im, ax=ax, label="RMSE / matched RMSE")
        fig.text(0.01, 0.01, FOOTER, fontsize=6, wrap=True)
        fig.tight_layout(rect=(0, 0.06, 1, 1))
        fig.savefig(out / "ratios.png", dpi=100)
        plt.close(fig)
