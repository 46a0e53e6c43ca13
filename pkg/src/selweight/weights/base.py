"""Shared types for membership models and propensity weights."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from ..design import DesignMatrix
from ..data_model import DataTable
from ..errors import DataError

LOGISTIC = "logistic"
CBPS = "cbps"
ENTROPY_BALANCING = "entropy_balancing"
RANDOM_FOREST = "random_forest"
METHODS = (LOGISTIC, CBPS, ENTROPY_BALANCING, RANDOM_FOREST)

SUM_TO_ONE = "sum_to_one"
MEAN_ONE = "mean_one"
RAW = "raw"
NORMALIZATIONS = (SUM_TO_ONE, MEAN_ONE, RAW)

TRIM_LO = 0.01
TRIM_HI = 0.99


@dataclass
class MembershipModel:
    """A fitted probability-of-convenience-membership model.

    ``parameters`` is the method-specific payload: the coefficient vector
    for logistic/cbps, dual multipliers plus base weights for entropy
    balancing, the tree ensemble for random forest. ``design`` is the fitted
    design recipe for methods that have one.
    """

    method: str
    parameters: dict
    design: DesignMatrix | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> str:
        """Serialize for audit: method tag, arrays, design spec, diagnostics.

        Random-forest ensembles are not embedded; the stored config and seed
        reproduce them exactly on refit.
        """
        payload = {"method": self.method, "diagnostics": _plain(self.diagnostics)}
        params = {k: _plain(v) for k, v in self.parameters.items() if k not in ("forest",)}
        if self.method == RANDOM_FOREST:
            params["trees_embedded"] = False
        payload["parameters"] = params
        if self.design is not None:
            payload["design"] = {
                "expansion": self.design.expansion,
                "columns": list(self.design.column_names),
                "variables": [
                    {
                        "name": v.name,
                        "kind": v.kind,
                        "levels": list(v.levels) if v.levels else None,
                        "reference": v.reference,
                    }
                    for v in self.design.builder.variables
                ],
            }
        return json.dumps(payload, indent=2, sort_keys=True)


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


@dataclass(frozen=True)
class MembershipProbabilities:
    """Per-combined-row membership probabilities, strictly inside (0, 1)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).copy()
        if np.any(v < 0.0) or np.any(v > 1.0) or not np.all(np.isfinite(v)):
            raise DataError("membership probabilities must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class PropensityWeights:
    """Per-convenience-row weights with their normalization convention."""

    values: np.ndarray
    normalization: str = RAW

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).copy()
        if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
            raise DataError("propensity weights must be positive and finite")
        if self.normalization not in NORMALIZATIONS:
            raise DataError(f"unknown normalization {self.normalization!r}")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def rescaled(self, normalization: str) -> "PropensityWeights":
        v = self.values
        if normalization == SUM_TO_ONE:
            v = v / v.sum()
        elif normalization == MEAN_ONE:
            v = v / v.mean()
        elif normalization != RAW:
            raise DataError(f"unknown normalization {normalization!r}")
        return PropensityWeights(v, normalization)


def trim_probabilities(
    p: MembershipProbabilities, lo: float = TRIM_LO, hi: float = TRIM_HI
) -> MembershipProbabilities:
    """Replace exact 0 with ``lo`` and exact 1 with ``hi``.

    Interior values pass through untouched, even below ``lo`` or above
    ``hi``: only the degenerate endpoints are trimmed.
    """
    v = p.values.copy()
    v[v == 0.0] = lo
    v[v == 1.0] = hi
    return MembershipProbabilities(v)


def weights_from_probabilities(
    p: MembershipProbabilities, normalization: str = SUM_TO_ONE
) -> PropensityWeights:
    """w_i proportional to (1 - p_i) / p_i, then normalized."""
    v = p.values
    if np.any(v <= 0.0) or np.any(v >= 1.0):
        raise DataError("probabilities must be strictly inside (0, 1); trim first")
    return PropensityWeights((1.0 - v) / v, RAW).rescaled(normalization)


def probabilities_from_weights(w: np.ndarray, n_C: int, n_R: int) -> np.ndarray:
    """Invert w proportional to (1-p)/p so mean p matches n_C/(n_C + n_R).

    Used to give entropy balancing a probability scale for diagnostics; the
    scalar k in p = 1/(1 + k w) is solved so the average probability over
    the convenience rows equals the combined-sample membership rate.
    """
    target = n_C / (n_C + n_R)

    def mean_p(log_k):
        return float(np.mean(1.0 / (1.0 + np.exp(log_k) * w))) - target

    lo, hi = -40.0, 40.0
    if mean_p(lo) < 0 or mean_p(hi) > 0:
        raise DataError("cannot calibrate probability scale for these weights")
    log_k = brentq(mean_p, lo, hi, xtol=1e-13)
    return 1.0 / (1.0 + np.exp(log_k) * w)


def logistic_probabilities(model: MembershipModel, table: DataTable | None) -> np.ndarray:
    gamma = np.asarray(model.parameters["gamma"], dtype=np.float64)
    if table is None:
        X = model.design.values
    else:
        X = model.design.builder.build(table)
    return expit(X @ gamma)
