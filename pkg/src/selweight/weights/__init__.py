"""Propensity-weight estimation: four membership-model families plus the
probability-to-weight plumbing shared by all of them."""

from dataclasses import dataclass, field

import numpy as np

from ..data_model import CombinedSample, DataTable
from ..design import MAIN_EFFECTS, ORTHOGONAL_POLY2, SECOND_ORDER, build_design_matrix
from ..errors import DataError, ExtremeWeightsError
from .base import (
    CBPS,
    ENTROPY_BALANCING,
    LOGISTIC,
    MEAN_ONE,
    METHODS,
    NORMALIZATIONS,
    RANDOM_FOREST,
    RAW,
    SUM_TO_ONE,
    TRIM_HI,
    TRIM_LO,
    MembershipModel,
    MembershipProbabilities,
    PropensityWeights,
    logistic_probabilities,
    probabilities_from_weights,
    trim_probabilities,
    weights_from_probabilities,
)
from .cbps import fit_cbps
from .entropy import entropy_balance_from_tables, fit_entropy_balancing, moment_columns
from .forest import Forest, ForestConfig, feature_matrix, fit_random_forest, forest_probabilities
from .logistic import fit_logistic_irls, fit_logistic_stepwise

__all__ = [
    "CBPS",
    "ENTROPY_BALANCING",
    "LOGISTIC",
    "MEAN_ONE",
    "METHODS",
    "NORMALIZATIONS",
    "RANDOM_FOREST",
    "RAW",
    "SUM_TO_ONE",
    "Forest",
    "ForestConfig",
    "MembershipModel",
    "MembershipProbabilities",
    "PropensityWeights",
    "WeightConfig",
    "WeightEstimate",
    "entropy_balance_from_tables",
    "estimate_weights",
    "feature_matrix",
    "fit_cbps",
    "fit_entropy_balancing",
    "fit_logistic_irls",
    "fit_logistic_stepwise",
    "fit_random_forest",
    "moment_columns",
    "predict_probability",
    "trim_probabilities",
    "weights_from_probabilities",
]


def predict_probability(model: MembershipModel, table: DataTable | None = None) -> MembershipProbabilities:
    """Membership probabilities from a fitted model.

    With ``table=None`` the fitted rows are used. Logistic and CBPS models
    evaluate expit(x'gamma); random forests average leaf proportions (out of
    bag on the fitted rows) and are endpoint-trimmed; entropy balancing has
    no per-row model, so its weights are inverted onto a probability scale
    for diagnostics only (fitted convenience rows, no new-row prediction).
    """
    if model.method in (LOGISTIC, CBPS):
        return MembershipProbabilities(logistic_probabilities(model, table))
    if model.method == RANDOM_FOREST:
        return trim_probabilities(MembershipProbabilities(forest_probabilities(model, table)))
    if model.method == ENTROPY_BALANCING:
        if table is not None:
            raise DataError("entropy balancing has no new-row probability model")
        params = model.parameters
        if "n_C" not in params or "n_R" not in params:
            raise DataError("entropy-balancing model lacks sample sizes for the probability scale")
        return MembershipProbabilities(
            probabilities_from_weights(params["weights"], params["n_C"], params["n_R"])
        )
    raise DataError(f"unknown method {model.method!r}")


@dataclass(frozen=True)
class WeightConfig:
    """How to estimate propensity weights from a combined sample.

    The defaults follow each method's usual recipe: logistic runs forward
    stepwise AIC over a second-order expansion (set ``stepwise=False`` for a
    plain main-effects fit), CBPS balances second-order orthogonal
    polynomial terms, entropy balancing matches moments up to degree 3, and
    the forest takes raw features.
    """

    method: str = LOGISTIC
    stepwise: bool = True
    expansion: str | None = None
    eb_degree: int = 3
    forest: ForestConfig = field(default_factory=ForestConfig)
    normalization: str = SUM_TO_ONE
    max_weight_ratio: float | None = 1e6

    def __post_init__(self):
        if self.method not in METHODS:
            raise DataError(f"unknown weight method {self.method!r}")
        if self.normalization not in NORMALIZATIONS:
            raise DataError(f"unknown normalization {self.normalization!r}")


@dataclass
class WeightEstimate:
    """A fitted membership model with the propensity weights it implies."""

    model: MembershipModel
    weights: PropensityWeights
    probabilities: MembershipProbabilities | None  # combined rows; None for EB


def estimate_weights(
    combined: CombinedSample,
    covariates=None,
    config: WeightConfig = WeightConfig(),
) -> WeightEstimate:
    """Estimate membership probabilities and convert them to weights.

    ``covariates`` selects the shared covariate set entering the weight
    model (default: every schema variable). Convenience rows must precede
    representative rows, as :func:`selweight.data_model.combine` arranges.
    """
    table = combined.data
    if covariates is None:
        covariates = [v.name for v in table.schema]
    covariates = list(covariates)
    C = combined.membership.astype(np.float64)
    conv = combined.convenience_rows
    any_continuous = any(not table.var(v).is_categorical for v in covariates)

    if config.method == LOGISTIC:
        if config.stepwise:
            design = build_design_matrix(table, covariates, config.expansion or SECOND_ORDER)
            model = fit_logistic_stepwise(design, C)
        else:
            design = build_design_matrix(table, covariates, config.expansion or MAIN_EFFECTS)
            model = fit_logistic_irls(design, C)
    elif config.method == CBPS:
        expansion = config.expansion or (ORTHOGONAL_POLY2 if any_continuous else MAIN_EFFECTS)
        design = build_design_matrix(table, covariates, expansion)
        model = fit_cbps(design, C)
    elif config.method == ENTROPY_BALANCING:
        conv_table = table.take(conv)
        rep_table = table.take(combined.representative_rows)
        model = entropy_balance_from_tables(
            conv_table.select(covariates), rep_table.select(covariates), covariates, config.eb_degree
        )
    else:
        model = fit_random_forest(table, C, config.forest, variables=covariates)

    if config.method == ENTROPY_BALANCING:
        probabilities = None
        weights = PropensityWeights(model.parameters["weights"], SUM_TO_ONE).rescaled(
            config.normalization
        )
    else:
        # RF arrives pre-trimmed from predict_probability; the second pass
        # only catches logistic/CBPS probabilities that saturate to 0/1
        probabilities = trim_probabilities(predict_probability(model))
        conv_p = MembershipProbabilities(probabilities.values[conv])
        weights = weights_from_probabilities(conv_p, config.normalization)

    if config.max_weight_ratio is not None:
        ratio = float(weights.values.max() / weights.values.min())
        if ratio > config.max_weight_ratio:
            raise ExtremeWeightsError(
                f"weight ratio {ratio:.3g} exceeds the {config.max_weight_ratio:g} guard"
            )
    return WeightEstimate(model=model, weights=weights, probabilities=probabilities)
