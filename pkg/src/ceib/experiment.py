"""Experiment configuration and the per-run work behind the CLI commands.

A run is one ``(replicate, seed)`` pair. Synthetic tasks draw a fresh
dataset per seed, so there the replicate equals the seed; IHDP runs pair
each selected replicate file with every training seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import baselines
from .data import ObservationalDataset, SplitSpec
from .estimation import cluster_composition_report
from .generators import (IHDP_DEFAULT_X2, IHDP_N_COVARIATES, LinearGaussianConfig, TwinsSimConfig,
                         gen_linear_gaussian, gen_twins_style, load_ihdp, true_ace)
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .objective import TrainConfig
from .pipeline import Fit, baseline_estimates, ceib_estimates, fit_ceib, model_config_for

log = logging.getLogger(__name__)

REPORT_VERSION = 1
TASKS = ("linear_gaussian", "twins_sim", "ihdp")
_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"p1", "p2", "seed"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"seed"}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str
    seeds: list[int]
    generator: dict = field(default_factory=dict)
    x2_columns: list[int] | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    mask_fraction: float = 0.5
    baselines: list[str] = field(default_factory=lambda: ["ols1", "ols2", "knn"])
    output_dir: str = "runs"

    def __post_init__(self):
        # YAML 1.1 reads "1e-3" as a string
        for section in (self.generator, self.model, self.train, self.split):
            for k, v in section.items():
                section[k] = _numeric(v)
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}; expected one of {', '.join(TASKS)}")
        if not self.seeds:
            raise ConfigError("seed list must be nonempty")
        self.seeds = [int(s) for s in self.seeds]
        if not 0.0 <= float(self.mask_fraction) <= 1.0:
            raise ConfigError("mask_fraction must lie in [0, 1]")
        unknown = set(self.model) - _MODEL_KEYS
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        unknown = set(self.train) - _TRAIN_KEYS
        if unknown:
            raise ConfigError(f"unknown train keys: {sorted(unknown)}")
        unknown = set(self.split) - {"train_frac", "val_frac", "test_frac"}
        if unknown:
            raise ConfigError(f"unknown split keys: {sorted(unknown)}")
        bad = [b for b in self.baselines if b not in baselines.BASELINES]
        if bad:
            raise ConfigError(f"unknown baselines: {bad}")
        self._check_columns()
        try:
            TrainConfig(**self.train)
            SplitSpec(**self.split)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def _check_columns(self):
        cols = self.x2_columns
        if self.task == "linear_gaussian":
            if cols is not None:
                raise ConfigError("linear_gaussian blocks are set by generator.p1 / generator.p2")
            return
        if self.task == "twins_sim":
            gen = {k: v for k, v in self.generator.items() if k != "seed"}
            width = gen.get("p_extra", 5) + 10 * gen.get("replications", 3)
        else:
            if "path" not in self.generator:
                raise ConfigError("ihdp task needs generator.path")
            width = IHDP_N_COVARIATES
        if cols is not None:
            if any(not 0 <= int(c) < width for c in cols) or len(set(cols)) != len(cols):
                raise ConfigError(f"x2_columns must be distinct indices below {width}")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "task" not in raw or "seeds" not in raw:
            raise ConfigError("config needs 'task' and 'seeds'")
        return cls(**raw)

    @classmethod
    def load(cls, path, overrides=()) -> tuple["ExperimentConfig", list[str]]:
        try:
            raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        for item in overrides:
            apply_override(raw, item)
        return cls.from_dict(raw), list(overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())

    # derived pieces

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(**self.split, seed=seed)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(**self.train, seed=seed)

    def runs(self) -> list[tuple[int, int]]:
        if self.task == "ihdp":
            reps = self.generator.get("replicates", list(range(1, 11)))
            if isinstance(reps, int):
                reps = list(range(1, reps + 1))
            return [(int(r), s) for r in reps for s in self.seeds]
        return [(s, s) for s in self.seeds]


def _numeric(v):
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            return v
    return v


def apply_override(raw: dict, item: str) -> None:
    """Apply ``dotted.key=value`` in place; the value is parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, value = item.split("=", 1)
    parts = key.strip().split(".")
    node = raw
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {item!r} descends into a scalar")
    node[parts[-1]] = yaml.safe_load(value)


def config_hash(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def model_relevant(cfg: ExperimentConfig) -> dict:
    """The config subset a checkpoint depends on."""
    d = cfg.to_dict()
    return {k: d[k] for k in ("task", "generator", "x2_columns", "model", "train", "split")}


def load_data(cfg: ExperimentConfig, replicate: int) -> ObservationalDataset:
    gen = {k: v for k, v in cfg.generator.items() if k != "seed"}
    try:
        if cfg.task == "linear_gaussian":
            return gen_linear_gaussian(LinearGaussianConfig(**gen, seed=replicate))
        if cfg.task == "twins_sim":
            if cfg.x2_columns is not None:
                gen["x2_columns"] = cfg.x2_columns
            return gen_twins_style(TwinsSimConfig(**gen, seed=replicate))
    except TypeError as exc:
        raise ConfigError(f"bad generator parameters: {exc}") from exc
    pattern = gen.get("pattern", "ihdp_npci_{}.csv")
    path = Path(gen["path"]) / pattern.format(replicate)
    return load_ihdp(path, cfg.x2_columns if cfg.x2_columns is not None else IHDP_DEFAULT_X2)


def run_name(replicate: int, seed: int) -> str:
    return f"r{replicate}_s{seed}"


def checkpoint_path(out: Path, replicate: int, seed: int) -> Path:
    return out / "checkpoints" / f"{run_name(replicate, seed)}.json"


def train_one(cfg: ExperimentConfig, replicate: int, seed: int, out: Path, resume: bool = False) -> Path:
    ck = checkpoint_path(out, replicate, seed)
    trace_path = out / "traces" / f"{run_name(replicate, seed)}.csv"
    if resume and ck.exists() and trace_path.exists():
        log.info("skip %s: outputs exist", run_name(replicate, seed))
        return ck
    ds = load_data(cfg, replicate)
    fit = fit_ceib(ds, cfg.train_config(seed), cfg.split_spec(seed),
                   model_cfg=model_config_for(ds, **cfg.model, seed=seed))
    ck.parent.mkdir(parents=True, exist_ok=True)
    trace_path.parent.mkdir(parents=True, exist_ok=True)
    fit.trace.to_csv(trace_path)
    save_checkpoint(fit.model, ck, extra={"config": model_relevant(cfg),
                                          "config_hash": config_hash(model_relevant(cfg)),
                                          "replicate": replicate, "seed": seed,
                                          "best_epoch": fit.trace.best_epoch})
    log.info("trained %s best_epoch=%d", run_name(replicate, seed), fit.trace.best_epoch)
    return ck


def restore_fit(cfg: ExperimentConfig, replicate: int, seed: int, ck: Path) -> Fit:
    """Rebuild splits and scaler deterministically and attach the saved model."""
    from .data import split_dataset, standardize
    from .estimation import fit_equivalence_classes
    from .objective import TrainingTrace

    model, extra = load_checkpoint(ck)
    if extra.get("config") != model_relevant(cfg):
        raise ConfigError(f"{ck}: checkpoint was trained under a different config")
    if (extra.get("replicate"), extra.get("seed")) != (replicate, seed):
        raise ConfigError(f"{ck}: checkpoint belongs to another run")
    ds = load_data(cfg, replicate)
    raw = dict(zip(("train", "val", "test"), split_dataset(ds, cfg.split_spec(seed))))
    scaler, std_list = standardize(raw["train"], raw["val"], raw["test"])
    std = dict(zip(("train", "val", "test"), std_list))
    return Fit(model, TrainingTrace(), scaler, raw, std, fit_equivalence_classes(model, std["train"]))


SPLIT_METRIC = {"train": "eps_within", "test": "eps_out"}


def evaluate_one(cfg: ExperimentConfig, replicate: int, seed: int, ck: Path) -> dict:
    fit = restore_fit(cfg, replicate, seed, ck)
    rows = []
    has_truth = fit.raw["test"].ground_truth is not None
    for split, metric in SPLIT_METRIC.items():
        mask_seed = seed * 1000 + replicate
        est = ceib_estimates(fit, split, cfg.mask_fraction, mask_seed)
        est = {"CEIB": est["full"], "CEIB-partial": est["partial"]}
        est.update(baseline_estimates(fit, split, cfg.baselines, cfg.mask_fraction, mask_seed))
        truth = true_ace(fit.raw[split]) if has_truth else float("nan")
        for method, value in est.items():
            rows.append({"replicate": replicate, "seed": seed, "split": split, "method": method,
                         "metric": metric, "ace": value, "true_ace": truth,
                         "value": abs(truth - value) if has_truth else float("nan")})
    comps = {name: cluster_composition_report(fit.clusters, name).to_dict(orient="list")
             for name in fit.raw["train"].attributes}
    return {"rows": rows, "clusters": {"counts": fit.clusters.counts.tolist(), "compositions": comps},
            "replicate": replicate, "seed": seed, "checkpoint": str(ck)}


def summary_rows(rows: list[dict]) -> list[dict]:
    """One row per (method, metric): mean and standard error over runs."""
    from .metrics import summarize

    keys = list(dict.fromkeys((r["method"], r["metric"]) for r in rows))
    out = []
    for method, metric in keys:
        vals = [r["value"] for r in rows if r["method"] == method and r["metric"] == metric]
        if not np.all(np.isfinite(vals)):
            continue
        s = summarize(vals, method, metric)
        out.append({"method": method, "metric": metric, "mean": s.mean, "stderr": s.stderr,
                    "runs": len(vals)})
    return out


def next_version_dir(base: Path) -> Path:
    base.mkdir(parents=True, exist_ok=True)
    taken = [int(p.name[1:]) for p in base.glob("v[0-9][0-9][0-9]") if p.is_dir()]
    path = base / f"v{max(taken, default=0) + 1:03d}"
    path.mkdir()
    return path
