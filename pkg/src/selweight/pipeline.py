"""One-shot analysis: combine, estimate weights, fit the outcome, variances.

This is the unit of work the CLI runs once, the bootstrap runs per
replicate, and the simulation runs per draw.
"""

from dataclasses import dataclass, field

import numpy as np

from .data_model import DataTable, as_pseudopopulation, combine
from .errors import DataError
from .outcome import (
    DESIGN,
    PROPOSED,
    OutcomeSpec,
    VarianceEstimate,
    WeightedFit,
    design_variance,
    fit_weighted_glm,
    outcome_design,
    proposed_variance,
    stacked_components,
)
from .weights import CBPS, LOGISTIC, WeightConfig, WeightEstimate, estimate_weights


@dataclass
class AnalysisResult:
    """Weights, outcome fit, and the requested variance estimates."""

    weight_estimate: WeightEstimate
    fit: WeightedFit
    variances: dict[str, VarianceEstimate] = field(default_factory=dict)

    @property
    def beta(self) -> np.ndarray:
        return self.fit.beta

    @property
    def coef_names(self) -> tuple[str, ...]:
        return self.fit.coef_names


def analyze_once(
    conv: DataTable,
    rep: DataTable,
    weight_covariates,
    weight_config: WeightConfig,
    outcome_spec: OutcomeSpec,
    variance_kinds=(DESIGN,),
) -> AnalysisResult:
    """Run the full weighted analysis of one convenience/representative pair.

    ``rep`` must already be representative (a pseudopopulation table or any
    self-weighted sample). The proposed variance is only available for
    logistic-family weight models; requesting it for others raises before
    any computation.
    """
    weight_covariates = list(weight_covariates)
    if PROPOSED in variance_kinds and weight_config.method not in (LOGISTIC, CBPS):
        raise DataError(
            f"proposed variance requires a logistic-family weight model, not {weight_config.method!r}"
        )
    combined = combine(
        conv.select(weight_covariates),
        as_pseudopopulation(rep.select(weight_covariates)),
    )
    west = estimate_weights(combined, weight_covariates, weight_config)
    Z, y = outcome_design(conv, outcome_spec)
    fit = fit_weighted_glm(Z, y, west.weights)

    variances: dict[str, VarianceEstimate] = {}
    for kind in variance_kinds:
        if kind == DESIGN:
            variances[DESIGN] = design_variance(fit)
        elif kind == PROPOSED:
            components = stacked_components(fit, west.model, combined.membership)
            variances[PROPOSED] = proposed_variance(components)
    return AnalysisResult(weight_estimate=west, fit=fit, variances=variances)
