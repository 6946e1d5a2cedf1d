"""Classical ACE baselines: OLS-1, OLS-2, kNN matching, logistic regression."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .data import ObservationalDataset

LOGISTIC_RIDGE = 1e-4


@dataclass
class BaselineEstimate:
    method: str
    ace: float
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.ace):
            raise ValueError(f"{self.method}: non-finite ACE estimate")


def _covariates(ds: ObservationalDataset) -> np.ndarray:
    if not ds.fully_observed:
        raise ValueError("baselines need fully observed covariates; impute x2 first")
    return np.hstack([ds.x1, ds.x2])


def _lstsq(design: np.ndarray, y: np.ndarray):
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    return coef, {"rank_deficient": bool(rank < design.shape[1]),
                  "residual_variance": float(resid.var())}


def ols1(ds_train: ObservationalDataset, ds_eval: ObservationalDataset | None = None) -> BaselineEstimate:
    """Single regression of ``y`` on ``[x, t, 1]``; the ACE is the ``t`` coefficient."""
    x = _covariates(ds_train)
    design = np.column_stack([x, ds_train.t, np.ones(ds_train.n)])
    coef, diag = _lstsq(design, ds_train.y)
    return BaselineEstimate("OLS-1", float(coef[-2]), diag)


def ols2(ds_train: ObservationalDataset, ds_eval: ObservationalDataset) -> BaselineEstimate:
    """Separate regressions per arm, effect averaged over ``ds_eval``."""
    x = _covariates(ds_train)
    preds, diag = [], {}
    for arm in (0, 1):
        rows = ds_train.t == arm
        if not rows.any():
            raise ValueError(f"OLS-2 needs both arms; arm {arm} is empty")
        design = np.column_stack([x[rows], np.ones(rows.sum())])
        coef, d = _lstsq(design, ds_train.y[rows])
        diag.update({f"arm{arm}_{k}": v for k, v in d.items()})
        xe = _covariates(ds_eval)
        preds.append(np.column_stack([xe, np.ones(ds_eval.n)]) @ coef)
    return BaselineEstimate("OLS-2", float(np.mean(preds[1] - preds[0])), diag)


def _nearest_mean(train_x, train_y, query, k, chunk=512):
    out = np.empty(len(query))
    for s in range(0, len(query), chunk):
        q = query[s:s + chunk]
        d2 = ((q[:, None, :] - train_x[None, :, :]) ** 2).sum(-1)
        # stable sort: equal distances resolve to the lower training index
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[s:s + chunk] = train_y[nn].mean(1)
    return out


def knn_ace(ds_train: ObservationalDataset, ds_eval: ObservationalDataset, k_neighbors: int = 5,
            eval_is_train: bool | None = None) -> BaselineEstimate:
    """k-nearest-neighbour imputation of the missing potential outcome.

    Distances are Euclidean on covariates standardized with training
    statistics. When ``ds_eval`` is the training set, the factual outcome is
    the row's own ``y``; otherwise both arms are imputed from neighbours.
    """
    if eval_is_train is None:
        eval_is_train = ds_eval is ds_train
    xt = _covariates(ds_train)
    mean, sd = xt.mean(0), xt.std(0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    xt = (xt - mean) / sd
    xe = (_covariates(ds_eval) - mean) / sd
    y_hat = {}
    for arm in (0, 1):
        rows = ds_train.t == arm
        if rows.sum() < k_neighbors:
            raise ValueError(f"arm {arm} has fewer than {k_neighbors} training rows")
        y_hat[arm] = _nearest_mean(xt[rows], ds_train.y[rows], xe, k_neighbors)
    if eval_is_train:
        for arm in (0, 1):
            own = ds_eval.t == arm
            y_hat[arm][own] = ds_eval.y[own]
    return BaselineEstimate("kNN", float(np.mean(y_hat[1] - y_hat[0])),
                            {"k_neighbors": k_neighbors, "within_sample": bool(eval_is_train)})


def _fit_logistic(design: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    n, p = design.shape
    penalized = np.ones(p)
    penalized[-1] = 0.0  # intercept

    def fun(w):
        s = design @ w
        nll = np.mean(np.logaddexp(0.0, s) - y * s)
        return nll + 0.5 * ridge * np.sum(penalized * w * w)

    def grad(w):
        s = design @ w
        return design.T @ (expit(s) - y) / n + ridge * penalized * w

    res = minimize(fun, np.zeros(p), jac=grad, method="L-BFGS-B",
                   options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-14})
    return res.x


def logistic_ace(ds_train: ObservationalDataset, ds_eval: ObservationalDataset,
                 ridge: float = LOGISTIC_RIDGE) -> BaselineEstimate:
    """Logistic regression of binary ``y`` on ``[x, t, 1]`` with a small ridge."""
    if not ds_train.binary_outcome:
        raise ValueError("logistic baseline needs a binary outcome")
    x = _covariates(ds_train)
    w = _fit_logistic(np.column_stack([x, ds_train.t, np.ones(ds_train.n)]), ds_train.y, ridge)
    xe = _covariates(ds_eval)
    base = xe @ w[:-2] + w[-1]
    effect = expit(base + w[-2]) - expit(base)
    acc = float(np.mean((expit(np.column_stack([x, ds_train.t, np.ones(ds_train.n)]) @ w) > 0.5)
                        == ds_train.y))
    return BaselineEstimate("LR", float(effect.mean()),
                            {"train_accuracy": acc,
                             "large_coefficients": bool(np.abs(w).max() > 15)})


BASELINES = {
    "ols1": ols1,
    "ols2": ols2,
    "knn": knn_ace,
    "lr": logistic_ace,
}
