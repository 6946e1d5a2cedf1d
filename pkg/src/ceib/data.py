"""Observational datasets with an always-observed and a maskable covariate block."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np
import pandas as pd


class Regime(str, enum.Enum):
    OBSERVATIONAL = "observational"
    RANDOMIZED = "randomized"


class DataError(ValueError):
    """Raised for malformed datasets or impossible splits."""


@dataclass(frozen=True)
class ObservationalDataset:
    """Covariates split into blocks ``x1`` (always observed) and ``x2``
    (maskable), binary treatment ``t`` and outcome ``y``.

    Rows of ``x2`` whose ``x2_observed`` flag is false hold NaN.
    ``ground_truth`` is an ``(n, 2)`` array of noiseless potential-outcome
    means ``(mu0, mu1)`` when the generating process is known.
    """

    x1: np.ndarray
    x2: np.ndarray
    t: np.ndarray
    y: np.ndarray
    x2_observed: np.ndarray
    regime: Regime = Regime.OBSERVATIONAL
    ground_truth: np.ndarray | None = None
    attributes: Mapping[str, np.ndarray] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x1.shape[0]

    @property
    def p1(self) -> int:
        return self.x1.shape[1]

    @property
    def p2(self) -> int:
        return self.x2.shape[1]

    @property
    def fully_observed(self) -> bool:
        return bool(self.x2_observed.all())

    @property
    def binary_outcome(self) -> bool:
        return bool(np.isin(self.y, (0.0, 1.0)).all())

    @property
    def mu0(self) -> np.ndarray:
        if self.ground_truth is None:
            raise DataError("dataset has no ground truth")
        return self.ground_truth[:, 0]

    @property
    def mu1(self) -> np.ndarray:
        if self.ground_truth is None:
            raise DataError("dataset has no ground truth")
        return self.ground_truth[:, 1]

    def subset(self, idx: np.ndarray) -> "ObservationalDataset":
        idx = np.asarray(idx)
        return replace(
            self,
            x1=self.x1[idx],
            x2=self.x2[idx],
            t=self.t[idx],
            y=self.y[idx],
            x2_observed=self.x2_observed[idx],
            ground_truth=None if self.ground_truth is None else self.ground_truth[idx],
            attributes={k: v[idx] for k, v in self.attributes.items()},
        )


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def make_dataset(
    x1,
    x2,
    t,
    y,
    regime: Regime | str = Regime.OBSERVATIONAL,
    ground_truth=None,
    attributes: Mapping[str, object] | None = None,
    meta: Mapping[str, object] | None = None,
    x2_observed=None,
) -> ObservationalDataset:
    """Validate inputs and build an immutable :class:`ObservationalDataset`.

    ``x2_observed`` defaults to all-true; passing it is only meant for
    round-tripping masked test data from disk.
    """
    x1 = np.array(x1, dtype=float, copy=True)
    x2 = np.array(x2, dtype=float, copy=True)
    t_raw = np.asarray(t)
    y = np.array(y, dtype=float, copy=True).reshape(-1)
    if x1.ndim != 2:
        raise DataError("x1 must be a 2-d array")
    n = x1.shape[0]
    if x2.ndim == 1 and x2.size == 0:
        x2 = np.zeros((n, 0))
    if x2.ndim != 2:
        raise DataError("x2 must be a 2-d array")
    if x1.shape[1] < 1:
        raise DataError("x1 needs at least one column")
    t_flat = t_raw.reshape(-1)
    if not (x2.shape[0] == n and t_flat.shape[0] == n and y.shape[0] == n):
        raise DataError(
            f"dimension mismatch: x1 {x1.shape}, x2 {x2.shape}, t {t_flat.shape}, y {y.shape}"
        )
    if not np.isin(t_flat, (0, 1)).all():
        raise DataError("non-binary treatment")
    t = t_flat.astype(np.int64)

    if x2_observed is None:
        x2_observed = np.ones(n, dtype=bool)
    else:
        x2_observed = np.array(x2_observed, dtype=bool).reshape(-1)
        if x2_observed.shape[0] != n:
            raise DataError("x2_observed length mismatch")

    if np.isnan(x1).any() or np.isnan(y).any():
        raise DataError("NaN in numeric field")
    if np.isnan(x2[x2_observed]).any():
        raise DataError("NaN in observed rows of x2")

    if ground_truth is not None:
        ground_truth = np.array(ground_truth, dtype=float, copy=True)
        if ground_truth.shape != (n, 2):
            raise DataError(f"ground_truth must have shape ({n}, 2)")
        if np.isnan(ground_truth).any():
            raise DataError("NaN in ground truth")
        _freeze(ground_truth)

    attrs = {}
    for name, col in (attributes or {}).items():
        col = np.array(col, copy=True).reshape(-1)
        if col.shape[0] != n:
            raise DataError(f"attribute {name!r} length mismatch")
        attrs[name] = _freeze(col)

    return ObservationalDataset(
        x1=_freeze(x1),
        x2=_freeze(x2),
        t=_freeze(t),
        y=_freeze(y),
        x2_observed=_freeze(x2_observed),
        regime=Regime(regime),
        ground_truth=ground_truth,
        attributes=attrs,
        meta=dict(meta or {}),
    )


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train_frac, self.val_frac, self.test_frac)
        if min(fracs) <= 0:
            raise DataError("split fractions must be positive")
        if abs(sum(fracs) - 1.0) > 1e-9:
            raise DataError("split fractions must sum to 1")


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Disjoint index sets; val/test get ``floor(n * frac)`` rows, train the rest."""
    if n < 5:
        raise DataError("need at least 5 rows to split")
    n_val = int(np.floor(n * spec.val_frac))
    n_test = int(np.floor(n * spec.test_frac))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"n={n} too small for three nonempty parts")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(ds: ObservationalDataset, spec: SplitSpec):
    return tuple(ds.subset(idx) for idx in split_indices(ds.n, spec))


def mask_x2(ds: ObservationalDataset, fraction: float, seed: int) -> ObservationalDataset:
    """Hide the ``x2`` block for ``floor(fraction * n)`` uniformly chosen rows."""
    if not 0.0 <= fraction <= 1.0:
        raise DataError("mask fraction must lie in [0, 1]")
    n_mask = int(np.floor(fraction * ds.n))
    observed = ds.x2_observed.copy()
    if n_mask:
        chosen = np.random.default_rng(seed).choice(ds.n, size=n_mask, replace=False)
        observed[chosen] = False
    x2 = ds.x2.copy()
    x2[~observed] = np.nan
    return replace(ds, x2=_freeze(x2), x2_observed=_freeze(observed))


@dataclass(frozen=True)
class Scaler:
    """Per-column affine maps fitted on a training split."""

    x1_mean: np.ndarray
    x1_scale: np.ndarray
    x2_mean: np.ndarray
    x2_scale: np.ndarray
    y_mean: float = 0.0
    y_scale: float = 1.0

    def transform(self, ds: ObservationalDataset) -> ObservationalDataset:
        return replace(
            ds,
            x1=_freeze((ds.x1 - self.x1_mean) / self.x1_scale),
            x2=_freeze((ds.x2 - self.x2_mean) / self.x2_scale),
            y=_freeze((ds.y - self.y_mean) / self.y_scale),
        )

    def inverse_y(self, y):
        return np.asarray(y) * self.y_scale + self.y_mean

    def inverse_effect(self, effect):
        """Map an arm difference back to the original outcome scale."""
        return np.asarray(effect) * self.y_scale


def _column_stats(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if a.shape[1] == 0:
        return np.zeros(0), np.ones(0)
    with np.errstate(over="ignore"):
        mean = np.nanmean(a, axis=0)
        sd = np.nanstd(a, axis=0)
    if not (np.isfinite(mean).all() and np.isfinite(sd).all()):
        raise DataError("covariate scale overflows float64")
    # zero-variance columns pass through untouched
    const = ~(sd > 1e-12)
    mean = np.where(const, 0.0, mean)
    sd = np.where(const, 1.0, sd)
    return mean, sd


def standardize(train: ObservationalDataset, *others: ObservationalDataset,
                standardize_y: bool | None = None):
    """Fit a :class:`Scaler` on ``train`` and apply it to every dataset.

    ``y`` is standardized only for continuous outcomes unless
    ``standardize_y`` says otherwise. Returns ``(scaler, [train, *others])``.
    """
    if train.n == 0:
        raise DataError("empty training set")
    x1_mean, x1_scale = _column_stats(train.x1)
    x2_mean, x2_scale = _column_stats(train.x2[train.x2_observed])
    if standardize_y is None:
        standardize_y = not train.binary_outcome
    y_mean, y_scale = 0.0, 1.0
    if standardize_y:
        with np.errstate(over="ignore"):
            y_mean = float(train.y.mean())
            y_scale = float(train.y.std())
        if not (np.isfinite(y_mean) and np.isfinite(y_scale)):
            raise DataError("outcome scale overflows float64")
        if not y_scale > 1e-12:
            y_mean, y_scale = 0.0, 1.0
    scaler = Scaler(x1_mean, x1_scale, x2_mean, x2_scale, y_mean, y_scale)
    return scaler, [scaler.transform(d) for d in (train, *others)]


def impute_x2_mean(ds: ObservationalDataset, reference: ObservationalDataset) -> ObservationalDataset:
    """Fill masked ``x2`` rows with the per-column mean of ``reference``."""
    if ds.fully_observed:
        return ds
    fill = reference.x2[reference.x2_observed].mean(axis=0)
    x2 = ds.x2.copy()
    x2[~ds.x2_observed] = fill
    return replace(ds, x2=_freeze(x2), x2_observed=_freeze(np.ones(ds.n, dtype=bool)))


# -- CSV round trip ---------------------------------------------------------

def to_frame(ds: ObservationalDataset) -> pd.DataFrame:
    cols: dict[str, np.ndarray] = {}
    for j in range(ds.p1):
        cols[f"x1_{j}"] = ds.x1[:, j]
    for j in range(ds.p2):
        cols[f"x2_{j}"] = ds.x2[:, j]
    cols["t"] = ds.t
    cols["y"] = ds.y
    if ds.ground_truth is not None:
        cols["mu0"] = ds.mu0
        cols["mu1"] = ds.mu1
    for name, col in ds.attributes.items():
        cols[f"attr_{name}"] = col
    return pd.DataFrame(cols)


def write_csv(ds: ObservationalDataset, path, mask_path=None) -> None:
    """Write the dataset CSV and, if given, the parallel 0/1 mask CSV."""
    to_frame(ds).to_csv(path, index=False, float_format="%.17g", encoding="utf-8")
    if mask_path is not None:
        pd.DataFrame({"x2_observed": ds.x2_observed.astype(int)}).to_csv(
            mask_path, index=False, encoding="utf-8")


def read_csv(path, mask_path=None, regime: Regime | str = Regime.OBSERVATIONAL) -> ObservationalDataset:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    x1 = df[[c for c in df.columns if c.startswith("x1_")]].to_numpy(float)
    x2 = df[[c for c in df.columns if c.startswith("x2_")]].to_numpy(float)
    gt = df[["mu0", "mu1"]].to_numpy(float) if {"mu0", "mu1"} <= set(df.columns) else None
    attrs = {c[len("attr_"):]: df[c].to_numpy() for c in df.columns if c.startswith("attr_")}
    observed = None
    if mask_path is not None:
        observed = pd.read_csv(mask_path)["x2_observed"].to_numpy().astype(bool)
    return make_dataset(x1, x2.reshape(len(df), -1), df["t"].to_numpy(), df["y"].to_numpy(),
                        regime=regime, ground_truth=gt, attributes=attrs, x2_observed=observed)
