"""Variational information estimates for information curves, and the
lambda / latent-size sweep."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, fields, replace

import numpy as np
import torch

from .data import ObservationalDataset, SplitSpec
from .estimation import deterministic_latents
from .generators import true_ace
from .metrics import eps_ace
from .model import CEIBModel, to_tensor
from .objective import (TrainConfig, TrainingDivergence, bernoulli_entropy, entropy_of_y,
                        evaluate_loss)

log = logging.getLogger(__name__)


@dataclass
class CurvePoint:
    lam: float
    latent_dims: int
    k1: int
    k2: int
    compression: float
    izy: float
    izt: float
    seed: int
    val_total: float
    eps_ace: float = float("nan")
    failed: bool = False


def _mean_latent(model: CEIBModel, ds: ObservationalDataset) -> torch.Tensor:
    v1, v2, _, _ = deterministic_latents(model, ds)
    return torch.as_tensor(np.concatenate([v1, v2], axis=1))


@torch.no_grad()
def estimate_izt(model: CEIBModel, ds: ObservationalDataset) -> float:
    """``H(T)`` minus the treatment head's cross-entropy, clipped at zero."""
    t = ds.t.astype(float)
    h_t = bernoulli_entropy(float(t.mean()))
    logits = model.treatment_logit(_mean_latent(model, ds))
    ce = torch.nn.functional.binary_cross_entropy_with_logits(logits, to_tensor(t)).item()
    return float(min(max(h_t - ce, 0.0), h_t))


@torch.no_grad()
def estimate_izy(model: CEIBModel, ds: ObservationalDataset) -> float:
    """``h(y)`` minus the outcome head's mean negative log-likelihood.

    Not clipped: a Gaussian head that fits worse than the marginal gives a
    negative value.
    """
    from .objective import outcome_nll

    binary = model.config.outcome == "bernoulli"
    h_y = entropy_of_y(ds.y, binary=binary)
    nll = outcome_nll(model, _mean_latent(model, ds), to_tensor(ds.t.astype(float)),
                      to_tensor(ds.y)).mean().item()
    return float(h_y - nll)


def _run_point(ds, base_model: dict, base_train: TrainConfig, lam: float, dims: dict,
               seed: int, split: SplitSpec | None) -> CurvePoint:
    from .pipeline import ceib_estimates, fit_ceib

    tcfg = replace(base_train, lam=lam, seed=seed)
    overrides = {**base_model, **dims, "seed": seed}
    fit = fit_ceib(ds, tcfg, split or SplitSpec(seed=seed), **overrides)
    val = fit.std["val"]
    parts = evaluate_loss(fit.model, val, lam, tcfg.temp_end, seed + 2, tcfg.t_weight)
    err = float("nan")
    if ds.ground_truth is not None:
        err = eps_ace(true_ace(fit.raw["test"]), ceib_estimates(fit, "test")["full"])
    c = fit.model.config
    return CurvePoint(lam=lam, latent_dims=c.latent_dim, k1=c.k1, k2=c.k2,
                      compression=parts.kl1 + parts.kl2,
                      izy=estimate_izy(fit.model, val), izt=estimate_izt(fit.model, val),
                      seed=seed, val_total=parts.total, eps_ace=err)


def sweep(ds: ObservationalDataset, base_model: dict, base_train: TrainConfig,
          lam_grid, dim_grid, seeds, split: SplitSpec | None = None,
          workers: int = 1) -> list[CurvePoint]:
    """Train once per ``(lam, dims, seed)`` and score on the validation split.

    ``dim_grid`` entries are dicts of model-config overrides such as
    ``{"d1": 2, "d2": 2}`` or ``{"k1": 6, "k2": 6}``. A point whose training
    diverges is returned with ``failed=True`` instead of aborting the sweep.
    """
    if not lam_grid or not dim_grid or not seeds:
        raise ValueError("sweep grids must be nonempty")
    jobs = [(lam, dims, seed) for lam in lam_grid for dims in dim_grid for seed in seeds]

    def run(job):
        lam, dims, seed = job
        try:
            return _run_point(ds, base_model, base_train, lam, dims, seed, split)
        except TrainingDivergence as exc:
            log.warning("sweep point lam=%s dims=%s seed=%s diverged: %s", lam, dims, seed, exc)
            d1 = dims.get("d1", base_model.get("d1", 3))
            d2 = dims.get("d2", base_model.get("d2", 3)) if ds.p2 else 0
            nan = float("nan")
            return CurvePoint(lam, d1 + d2, dims.get("k1", base_model.get("k1", 4)),
                              dims.get("k2", base_model.get("k2", 4)), nan, nan, nan, seed, nan,
                              failed=True)

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            points = list(pool.map(_sweep_worker, [(ds, base_model, base_train, j, split) for j in jobs]))
    else:
        points = [run(j) for j in jobs]
    return sorted(points, key=lambda p: (p.lam, p.latent_dims, p.k1, p.k2, p.seed))


def _sweep_worker(args):
    ds, base_model, base_train, (lam, dims, seed), split = args
    return sweep(ds, base_model, base_train, [lam], [dims], [seed], split)[0]


CURVE_FIELDS = [f.name for f in fields(CurvePoint)]


def write_curve_csv(points: list[CurvePoint], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
        w.writeheader()
        for p in points:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in asdict(p).items()})
