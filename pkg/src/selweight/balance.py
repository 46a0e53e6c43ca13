"""Covariate summaries and standardized differences between samples.

Continuous covariates are summarized by (weighted) mean and SD; categorical
covariates by per-level proportions. The standardized difference divides
the convenience-minus-representative mean gap by the representative-sample
standard deviation of that column, per indicator level for categoricals.
"""

import numpy as np

from .data_model import DataTable
from .weights import PropensityWeights


def _weight_vector(table: DataTable, weights: PropensityWeights | None) -> np.ndarray:
    if weights is None:
        return np.ones(table.n)
    if weights.n != table.n:
        raise ValueError("weight length does not match table")
    return weights.values


def _columns_for_balance(table: DataTable, variables):
    """(label, values) pairs: continuous as-is, one indicator per level."""
    out = []
    for name in variables:
        var = table.var(name)
        col = table.column(name)
        if var.is_categorical:
            for code, level in enumerate(var.levels):
                out.append((f"{name}={level}", (col == code).astype(np.float64)))
        else:
            out.append((name, col.astype(np.float64)))
    return out


def weighted_mean_sd(values: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    total = w.sum()
    mean = float((w * values).sum() / total)
    var = float((w * (values - mean) ** 2).sum() / total)
    return mean, float(np.sqrt(max(var, 0.0)))


def covariate_summary(
    table: DataTable, variables=None, weights: PropensityWeights | None = None
):
    """Rows of (covariate, mean, sd) with proportions for indicator levels."""
    if variables is None:
        variables = [v.name for v in table.schema]
    w = _weight_vector(table, weights)
    rows = []
    for label, values in _columns_for_balance(table, variables):
        mean, sd = weighted_mean_sd(values, w)
        rows.append({"covariate": label, "mean": mean, "sd": sd})
    return rows


def standardized_difference(
    conv: DataTable,
    rep: DataTable,
    weights: PropensityWeights | None = None,
    variables=None,
):
    """Per-covariate d = (weighted conv mean - rep mean) / rep SD.

    The denominator is the representative sample's SD (ddof=1); columns that
    are constant in the representative sample get d = NaN and are flagged
    undefined.
    """
    if variables is None:
        variables = [v.name for v in conv.schema]
    w = _weight_vector(conv, weights)
    conv_cols = dict(_columns_for_balance(conv, variables))
    rows = []
    for label, rep_values in _columns_for_balance(rep, variables):
        conv_values = conv_cols[label]
        conv_mean = float((w * conv_values).sum() / w.sum())
        rep_mean = float(rep_values.mean())
        rep_sd = float(rep_values.std(ddof=1))
        if rep_sd == 0.0:
            rows.append(
                {"covariate": label, "d": float("nan"), "undefined": True,
                 "conv_mean": conv_mean, "rep_mean": rep_mean}
            )
            continue
        rows.append(
            {
                "covariate": label,
                "d": (conv_mean - rep_mean) / rep_sd,
                "undefined": False,
                "conv_mean": conv_mean,
                "rep_mean": rep_mean,
            }
        )
    return rows
