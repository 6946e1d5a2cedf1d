"""Synthetic data generators with known potential outcomes, and the IHDP loader."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import DataError, ObservationalDataset, Regime, make_dataset


def _default_loading(p: int, dz: int, offset: int = 0) -> list[list[float]]:
    # column j measures confounder (j + offset) mod dz
    a = np.zeros((p, dz))
    for j in range(p):
        a[j, (j + offset) % dz] = 1.0
    return a.tolist()


@dataclass
class LinearGaussianConfig:
    """Structural equations::

        z ~ N(0, I_dz)
        x1 = A1 z + e1,  x2 = A2 z + e2
        t ~ Bern(sigmoid(w.z + b))      (Bern(0.5) when randomized)
        y = t (beta1.z + intercept1) + (1 - t)(beta0.z + intercept0) + e_y

    ``attribute_bins > 0`` adds a categorical ``severity`` attribute that
    bins the first confounder at standard-normal quantiles.
    """

    n: int = 2000
    dz: int = 2
    p1: int = 4
    p2: int = 2
    A1: list | None = None
    A2: list | None = None
    w: list | None = None
    b: float = 0.0
    beta0: list | None = None
    beta1: list | None = None
    intercept0: float = 0.0
    intercept1: float = 0.0
    outcome_sd: float = 0.1
    covariate_sd: float = 0.2
    regime: str = "observational"
    attribute_bins: int = 0
    seed: int = 0

    def __post_init__(self):
        if min(self.n, self.dz, self.p1) < 1 or self.p2 < 0:
            raise DataError("dimensions must be positive")
        if self.outcome_sd < 0 or self.covariate_sd < 0:
            raise DataError("noise sds must be nonnegative")
        Regime(self.regime)
        if self.A1 is None:
            self.A1 = _default_loading(self.p1, self.dz)
        if self.A2 is None:
            self.A2 = _default_loading(self.p2, self.dz, offset=self.p1)
        if self.w is None:
            self.w = [1.0] * self.dz
        if self.beta0 is None:
            self.beta0 = [1.0] * self.dz
        if self.beta1 is None:
            self.beta1 = [2.0] * self.dz
        shapes = {
            "A1": (np.shape(self.A1), (self.p1, self.dz)),
            "A2": (np.shape(self.A2) if self.p2 else (0, self.dz), (self.p2, self.dz)),
            "w": (np.shape(self.w), (self.dz,)),
            "beta0": (np.shape(self.beta0), (self.dz,)),
            "beta1": (np.shape(self.beta1), (self.dz,)),
        }
        for name, (got, want) in shapes.items():
            if tuple(got) != want:
                raise DataError(f"{name} has shape {got}, expected {want}")

    def closed_form_ace(self) -> float:
        # E[z] = 0, so the population ACE is the intercept gap
        return float(self.intercept1 - self.intercept0)


def gen_linear_gaussian(cfg: LinearGaussianConfig) -> ObservationalDataset:
    rng = np.random.default_rng(cfg.seed)
    A1 = np.asarray(cfg.A1, float)
    A2 = np.asarray(cfg.A2, float).reshape(cfg.p2, cfg.dz)
    z = rng.standard_normal((cfg.n, cfg.dz))
    x1 = z @ A1.T + cfg.covariate_sd * rng.standard_normal((cfg.n, cfg.p1))
    x2 = z @ A2.T + cfg.covariate_sd * rng.standard_normal((cfg.n, cfg.p2))
    if Regime(cfg.regime) is Regime.RANDOMIZED:
        prop = np.full(cfg.n, 0.5)
    else:
        prop = expit(z @ np.asarray(cfg.w, float) + cfg.b)
    t = (rng.random(cfg.n) < prop).astype(int)
    mu0 = z @ np.asarray(cfg.beta0, float) + cfg.intercept0
    mu1 = z @ np.asarray(cfg.beta1, float) + cfg.intercept1
    y = np.where(t == 1, mu1, mu0) + cfg.outcome_sd * rng.standard_normal(cfg.n)

    attributes = {}
    if cfg.attribute_bins > 0:
        from scipy.stats import norm

        edges = norm.ppf(np.arange(1, cfg.attribute_bins) / cfg.attribute_bins)
        attributes["severity"] = np.digitize(z[:, 0], edges)
    return make_dataset(
        x1, x2, t, y, regime=cfg.regime,
        ground_truth=np.column_stack([mu0, mu1]),
        attributes=attributes,
        meta={"generator": "linear_gaussian", "regime": cfg.regime,
              "propensity": prop, "confounder": z},
    )


@dataclass
class TwinsSimConfig:
    """Twins-style proxy simulation.

    ``z`` (gestation bucket) is uniform on 0..9 and hidden. It is observed only
    through ``replications`` noisy one-hot copies whose bits flip with
    probability ``flip_prob``. Outcomes are Bernoulli with
    ``logit = a z/10 + b t + c``.
    """

    n: int = 4000
    p_extra: int = 5
    flip_prob: float = 0.05
    replications: int = 3
    a: float = 2.0
    b: float = 1.0
    c: float = -2.0
    w_o_var: float = 0.1
    w_h_mean: float = 5.0
    w_h_var: float = 0.1
    x2_columns: Sequence[int] = (0, 1, 2)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_prob < 0.5:
            raise DataError("flip probability must lie in [0, 0.5)")
        if self.replications < 1:
            raise DataError("need at least one proxy replication")
        width = self.p_extra + 10 * self.replications
        if len(set(self.x2_columns)) != len(self.x2_columns) or any(
                not 0 <= j < width for j in self.x2_columns):
            raise DataError("x2_columns out of range")
        self.x2_columns = tuple(int(j) for j in self.x2_columns)

    def exact_ace(self) -> float:
        zs = np.arange(10) / 10.0
        return float(np.mean(expit(self.a * zs + self.b + self.c) - expit(self.a * zs + self.c)))


def gen_twins_style(cfg: TwinsSimConfig) -> ObservationalDataset:
    rng = np.random.default_rng(cfg.seed)
    z = rng.integers(0, 10, size=cfg.n)
    x_extra = rng.standard_normal((cfg.n, cfg.p_extra))
    w_o = rng.normal(0.0, np.sqrt(cfg.w_o_var), size=cfg.p_extra)
    w_h = rng.normal(cfg.w_h_mean, np.sqrt(cfg.w_h_var))
    prop = expit(x_extra @ w_o + w_h * (z / 10.0 - 0.1))
    t = (rng.random(cfg.n) < prop).astype(int)

    onehot = np.eye(10)[z]
    proxies = np.tile(onehot, (1, cfg.replications))
    flips = rng.random(proxies.shape) < cfg.flip_prob
    proxies = np.where(flips, 1.0 - proxies, proxies)

    mu0 = expit(cfg.a * z / 10.0 + cfg.c)
    mu1 = expit(cfg.a * z / 10.0 + cfg.b + cfg.c)
    y0 = (rng.random(cfg.n) < mu0).astype(float)
    y1 = (rng.random(cfg.n) < mu1).astype(float)
    y = np.where(t == 1, y1, y0)

    x = np.column_stack([x_extra, proxies])
    mask = np.zeros(x.shape[1], dtype=bool)
    mask[list(cfg.x2_columns)] = True
    return make_dataset(
        x[:, ~mask], x[:, mask], t, y,
        ground_truth=np.column_stack([mu0, mu1]),
        attributes={"gestation": z},
        meta={"generator": "twins_style", "w_o": w_o, "w_h": float(w_h),
              "propensity": prop, "proxy_columns": list(range(cfg.p_extra, x.shape[1])),
              "x2_columns": list(cfg.x2_columns)},
    )


IHDP_N_COVARIATES = 25
# b.marr, mom.lths, mom.hs in the usual IHDP column order
IHDP_DEFAULT_X2 = (8, 9, 10)


def load_ihdp(path, x2_columns: Sequence[int] = IHDP_DEFAULT_X2) -> ObservationalDataset:
    """Load one IHDP replicate CSV.

    Expected layout (header optional): ``treatment, y_factual, y_cfactual,
    mu0, mu1, x1 .. x25``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"{path}: expected an IHDP replicate CSV with columns "
            "treatment, y_factual, y_cfactual, mu0, mu1, x1..x25")
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().split(",")
    has_header = pd.to_numeric(pd.Series(first), errors="coerce").isna().any()
    raw = pd.read_csv(path, header=0 if has_header else None, float_precision="round_trip")
    values = raw.to_numpy(float)
    n_cov = values.shape[1] - 5
    if n_cov != IHDP_N_COVARIATES:
        raise DataError(f"expected {IHDP_N_COVARIATES} covariates, found {n_cov}")
    t = values[:, 0]
    if not np.isin(t, (0.0, 1.0)).all():
        raise DataError("non-binary treatment column")
    x = values[:, 5:]
    mask = np.zeros(n_cov, dtype=bool)
    mask[list(x2_columns)] = True
    return make_dataset(
        x[:, ~mask], x[:, mask], t.astype(int), values[:, 1],
        ground_truth=values[:, 3:5],
        meta={"generator": "ihdp", "source": str(path), "x2_columns": list(x2_columns),
              "y_cfactual": values[:, 2]},
    )


def load_ihdp_replicates(directory, pattern: str = "ihdp_npci_*.csv",
                         x2_columns: Sequence[int] = IHDP_DEFAULT_X2) -> list[ObservationalDataset]:
    directory = Path(directory)
    files = sorted(directory.glob(pattern),
                   key=lambda p: (len(p.stem), p.stem))
    if not files:
        raise FileNotFoundError(f"no files matching {pattern} in {directory}")
    return [load_ihdp(f, x2_columns) for f in files]


def true_ace(ds: ObservationalDataset) -> float:
    if ds.ground_truth is None:
        raise DataError("true ACE needs ground-truth potential outcomes")
    return float(np.mean(ds.mu1 - ds.mu0))
