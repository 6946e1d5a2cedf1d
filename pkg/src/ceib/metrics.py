"""Absolute ACE error and mean +/- standard error over replicates."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd


def eps_ace(true_ace: float, est_ace: float) -> float:
    if not (math.isfinite(true_ace) and math.isfinite(est_ace)):
        raise ValueError("eps_ace needs finite inputs")
    return abs(true_ace - est_ace)


@dataclass
class ReplicateSummary:
    method: str
    metric: str
    values: list[float]
    mean: float
    stderr: float

    def __str__(self) -> str:
        return f"{self.mean:.2f} ± {self.stderr:.2f}"


def summarize(values, method: str = "", metric: str = "") -> ReplicateSummary:
    """Mean and standard error ``sd / sqrt(R)`` with the ``R - 1`` denominator."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError("cannot summarize an empty list")
    # sorted sum keeps the result independent of input order
    arr = np.sort(np.asarray(vals))
    mean = float(math.fsum(arr) / len(arr))
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return ReplicateSummary(method, metric, vals, mean, stderr)


def summary_table(summaries: list[ReplicateSummary]) -> pd.DataFrame:
    """Methods as rows, one ``mean``/``stderr`` column pair per metric."""
    methods = list(dict.fromkeys(s.method for s in summaries))
    metrics = list(dict.fromkeys(s.metric for s in summaries))
    rows = []
    for m in methods:
        row: dict = {"method": m}
        for met in metrics:
            hit = [s for s in summaries if s.method == m and s.metric == met]
            row[f"{met}_mean"] = hit[0].mean if hit else np.nan
            row[f"{met}_stderr"] = hit[0].stderr if hit else np.nan
        rows.append(row)
    return pd.DataFrame(rows)
