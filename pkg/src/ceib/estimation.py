"""Specific and average causal effects, latent equivalence classes, and
effect estimation when the second covariate block is missing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import torch

from .data import ObservationalDataset, Scaler
from .model import CEIBModel, to_tensor


@torch.no_grad()
def sce(model: CEIBModel, z) -> np.ndarray:
    """Arm difference ``mu1(z) - mu0(z)`` per row of ``z`` (standardized scale)."""
    mu0, mu1 = model.predict_both_arms(torch.as_tensor(z, dtype=torch.float64))
    return (mu1 - mu0).numpy()


@torch.no_grad()
def deterministic_latents(model: CEIBModel, ds: ObservationalDataset):
    """Responsibility-weighted latents and posteriors for fully observed rows."""
    if not ds.fully_observed:
        raise ValueError("dataset has masked x2 rows; use ace_partial")
    post1, post2 = model.encode(to_tensor(ds.x1), to_tensor(ds.x2) if ds.p2 else None)
    v1 = post1.mean_latent()
    v2 = post2.mean_latent() if post2 is not None else v1.new_zeros(ds.n, 0)
    return v1.numpy(), v2.numpy(), post1, post2


def _effect_scale(scaler: Scaler | None) -> float:
    return 1.0 if scaler is None else float(scaler.y_scale)


def ace(model: CEIBModel, ds: ObservationalDataset, scaler: Scaler | None = None) -> float:
    """Average SCE over the rows of ``ds``, on the original outcome scale."""
    v1, v2, _, _ = deterministic_latents(model, ds)
    return float(np.mean(sce(model, np.concatenate([v1, v2], axis=1)))) * _effect_scale(scaler)


@dataclass
class ClusterTable:
    """Hard equivalence classes over joint components ``(c1, c2)``.

    Cluster ids are ``c1 * k2 + c2``. Centroids of empty clusters are NaN.
    """

    k1: int
    k2: int
    counts: np.ndarray
    v1_centroids: np.ndarray
    v2_centroids: np.ndarray
    assignments: np.ndarray
    compositions: dict[str, pd.DataFrame] = field(default_factory=dict)

    @property
    def n_clusters(self) -> int:
        return self.k1 * self.k2

    def split_id(self, cid: int) -> tuple[int, int]:
        return divmod(int(cid), self.k2)

    def largest(self, candidates=None) -> int:
        """Largest cluster among ``candidates``; ties go to the lowest id."""
        ids = np.arange(self.n_clusters) if candidates is None else np.asarray(candidates)
        return int(ids[np.argmax(self.counts[ids])])

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for cid in range(self.n_clusters):
            c1, c2 = self.split_id(cid)
            row = {"cluster": cid, "c1": c1, "c2": c2, "count": int(self.counts[cid])}
            row.update({f"v1_{j}": self.v1_centroids[cid, j] for j in range(self.v1_centroids.shape[1])})
            row.update({f"v2_{j}": self.v2_centroids[cid, j] for j in range(self.v2_centroids.shape[1])})
            rows.append(row)
        return pd.DataFrame(rows)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path, assignments=None) -> "ClusterTable":
        df = pd.read_csv(path, float_precision="round_trip").sort_values("cluster")
        k1, k2 = int(df["c1"].max()) + 1, int(df["c2"].max()) + 1
        v1 = df[[c for c in df.columns if c.startswith("v1_")]].to_numpy(float)
        v2 = df[[c for c in df.columns if c.startswith("v2_")]].to_numpy(float)
        return cls(k1, k2, df["count"].to_numpy(int), v1, v2,
                   np.asarray(assignments if assignments is not None else [], dtype=int))


def _composition(assign: np.ndarray, values: np.ndarray, n_clusters: int) -> pd.DataFrame:
    cats = np.unique(values)
    table = np.zeros((n_clusters, len(cats)))
    for j, cat in enumerate(cats):
        table[:, j] = np.bincount(assign[values == cat], minlength=n_clusters)
    counts = table.sum(1, keepdims=True)
    with np.errstate(invalid="ignore"):
        props = np.where(counts > 0, table / np.where(counts > 0, counts, 1), np.nan)
    df = pd.DataFrame(props, columns=[str(c) for c in cats])
    df.insert(0, "count", counts[:, 0].astype(int))
    df.insert(0, "cluster", np.arange(n_clusters).astype(str))
    marginal = np.bincount(np.searchsorted(cats, values), minlength=len(cats)) / len(values)
    df.loc[len(df)] = ["marginal", len(values), *marginal]
    return df


def fit_equivalence_classes(model: CEIBModel, train_ds: ObservationalDataset) -> ClusterTable:
    v1, v2, post1, post2 = deterministic_latents(model, train_ds)
    k1 = model.config.k1
    k2 = model.config.k2 if post2 is not None else 1
    c1 = post1.hard_assignment().numpy()
    c2 = post2.hard_assignment().numpy() if post2 is not None else np.zeros_like(c1)
    assign = c1 * k2 + c2
    n_clusters = k1 * k2
    counts = np.bincount(assign, minlength=n_clusters)
    v1c = np.full((n_clusters, v1.shape[1]), np.nan)
    v2c = np.full((n_clusters, v2.shape[1]), np.nan)
    for cid in np.flatnonzero(counts):
        members = assign == cid
        v1c[cid] = v1[members].mean(0)
        v2c[cid] = v2[members].mean(0)
    comps = {name: _composition(assign, np.asarray(col), n_clusters)
             for name, col in train_ds.attributes.items()}
    return ClusterTable(k1, k2, counts, v1c, v2c, assign, comps)


IMPUTATION_RULES = ("class_mean", "largest_cluster")


@torch.no_grad()
def assign_partial(model: CEIBModel, clusters: ClusterTable, x1_rows, rule: str = "class_mean"):
    """Map rows with only ``x1`` observed to an equivalence class.

    The block-1 component ``c1*`` is the argmax responsibility; the assigned
    cluster is the largest nonempty joint cluster sharing ``c1*``. The imputed
    latent is ``(v1 of the row, v2)`` where ``v2`` is, under ``rule``:

    - ``"class_mean"``: the mean ``v2`` over every training member with
      component ``c1*`` (count-weighted average of the joint centroids);
    - ``"largest_cluster"``: the ``v2`` centroid of the assigned cluster.

    Returns ``(cluster_ids, z, fallback)`` where ``fallback`` marks rows for
    which no nonempty cluster shares ``c1*`` and the globally largest cluster
    was used instead.
    """
    if rule not in IMPUTATION_RULES:
        raise ValueError(f"unknown imputation rule {rule!r}")
    x1 = to_tensor(np.atleast_2d(x1_rows))
    post1 = model.encoder1(x1)
    v1 = post1.mean_latent().numpy()
    c1 = post1.hard_assignment().numpy()
    ids = np.empty(len(c1), dtype=int)
    v2 = np.empty((len(c1), clusters.v2_centroids.shape[1]))
    fallback = np.zeros(len(c1), dtype=bool)
    global_best = clusters.largest()
    for a in np.unique(c1):
        candidates = a * clusters.k2 + np.arange(clusters.k2)
        candidates = candidates[clusters.counts[candidates] > 0]
        rows = c1 == a
        if len(candidates):
            ids[rows] = clusters.largest(candidates)
            if rule == "class_mean":
                w = clusters.counts[candidates].astype(float)
                v2[rows] = (w[:, None] * clusters.v2_centroids[candidates]).sum(0) / w.sum()
            else:
                v2[rows] = clusters.v2_centroids[ids[rows]]
        else:
            ids[rows] = global_best
            fallback[rows] = True
            v2[rows] = clusters.v2_centroids[global_best]
    return ids, np.concatenate([v1, v2], axis=1), fallback


def ace_partial(model: CEIBModel, clusters: ClusterTable, ds: ObservationalDataset,
                scaler: Scaler | None = None, rule: str = "class_mean") -> float:
    """ACE over all rows; rows with masked ``x2`` get a cluster-imputed latent."""
    obs = ds.x2_observed
    effects = np.empty(ds.n)
    if obs.any():
        full = ds.subset(np.flatnonzero(obs))
        v1, v2, _, _ = deterministic_latents(model, full)
        effects[obs] = sce(model, np.concatenate([v1, v2], axis=1))
    if (~obs).any():
        _, z, _ = assign_partial(model, clusters, ds.x1[~obs], rule)
        effects[~obs] = sce(model, z)
    return float(np.mean(effects)) * _effect_scale(scaler)


def cluster_composition_report(clusters: ClusterTable, attribute: str) -> pd.DataFrame:
    """Per-cluster category proportions with a trailing ``marginal`` row."""
    if attribute not in clusters.compositions:
        raise KeyError(f"unknown attribute {attribute!r}")
    return clusters.compositions[attribute].copy()


def max_total_variation(report: pd.DataFrame, min_share: float = 0.0) -> float:
    """Largest total-variation distance between a cluster's composition and
    the marginal, over clusters holding at least ``min_share`` of the units."""
    cats = [c for c in report.columns if c not in ("cluster", "count")]
    marginal = report.loc[report["cluster"] == "marginal", cats].to_numpy(float)[0]
    body = report[report["cluster"] != "marginal"]
    total = body["count"].sum()
    keep = (body["count"] > 0) & (body["count"] >= min_share * total)
    props = body.loc[keep, cats].to_numpy(float)
    if len(props) == 0:
        return 0.0
    return float(0.5 * np.abs(props - marginal).sum(1).max())
