"""Split, standardize, train and score one CEIB run."""

from __future__ import annotations

from dataclasses import dataclass

from . import baselines
from .data import ObservationalDataset, Scaler, SplitSpec, impute_x2_mean, mask_x2, split_dataset, standardize
from .estimation import ClusterTable, ace, ace_partial, fit_equivalence_classes
from .generators import true_ace
from .metrics import eps_ace
from .model import CEIBModel, ModelConfig
from .objective import TrainConfig, TrainingTrace, train


@dataclass
class Fit:
    model: CEIBModel
    trace: TrainingTrace
    scaler: Scaler
    raw: dict[str, ObservationalDataset]
    std: dict[str, ObservationalDataset]
    clusters: ClusterTable


def model_config_for(ds: ObservationalDataset, **overrides) -> ModelConfig:
    overrides.setdefault("outcome", "bernoulli" if ds.binary_outcome else "gaussian")
    return ModelConfig(p1=ds.p1, p2=ds.p2, **overrides)


def fit_ceib(ds: ObservationalDataset, train_cfg: TrainConfig, split: SplitSpec | None = None,
             model_cfg: ModelConfig | None = None, **model_overrides) -> Fit:
    split = split or SplitSpec(seed=train_cfg.seed)
    raw = dict(zip(("train", "val", "test"), split_dataset(ds, split)))
    scaler, std_list = standardize(raw["train"], raw["val"], raw["test"])
    std = dict(zip(("train", "val", "test"), std_list))
    if model_cfg is None:
        model_overrides.setdefault("seed", train_cfg.seed)
        model_cfg = model_config_for(ds, **model_overrides)
    model, trace = train(std["train"], std["val"], model_cfg, train_cfg)
    clusters = fit_equivalence_classes(model, std["train"])
    return Fit(model, trace, scaler, raw, std, clusters)


def ceib_estimates(fit: Fit, split: str, mask_fraction: float = 0.0, mask_seed: int = 0) -> dict:
    """Full-covariate and partial-covariate ACE on one split (original scale)."""
    ds = fit.std[split]
    out = {"full": ace(fit.model, ds, fit.scaler)}
    masked = mask_x2(ds, mask_fraction, mask_seed) if mask_fraction > 0 else ds
    out["partial"] = ace_partial(fit.model, fit.clusters, masked, fit.scaler)
    return out


def baseline_estimates(fit: Fit, split: str, methods=("ols1", "ols2", "knn"),
                       mask_fraction: float = 0.0, mask_seed: int = 0) -> dict:
    """Baselines on raw covariates; masked ``x2`` rows are mean-imputed from train."""
    train_ds = fit.raw["train"]
    ds = fit.raw[split]
    if mask_fraction > 0:
        ds = impute_x2_mean(mask_x2(ds, mask_fraction, mask_seed), train_ds)
    within = split == "train" and mask_fraction == 0
    out = {}
    for name in methods:
        if name == "lr" and not train_ds.binary_outcome:
            continue
        fn = baselines.BASELINES[name]
        if name == "knn":
            out[name] = fn(train_ds, train_ds if within else ds, eval_is_train=within).ace
        else:
            out[name] = fn(train_ds, ds).ace
    return out


def split_true_ace(fit: Fit, split: str) -> float:
    return true_ace(fit.raw[split])


def errors(fit: Fit, split: str, mask_fraction: float = 0.0, mask_seed: int = 0,
           methods=("ols1", "ols2", "knn")) -> dict:
    """eps_ACE per method on one split; needs ground truth."""
    truth = split_true_ace(fit, split)
    est = ceib_estimates(fit, split, mask_fraction, mask_seed)
    res = {"CEIB": eps_ace(truth, est["full"]), "CEIB-partial": eps_ace(truth, est["partial"])}
    for name, value in baseline_estimates(fit, split, methods, mask_fraction, mask_seed).items():
        res[name] = eps_ace(truth, value)
    return res
