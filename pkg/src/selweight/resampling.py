"""Stratified bootstrap that re-estimates weights inside every replicate.

Each replicate independently resamples the convenience and representative
tables (stratified, stratum sizes preserved exactly), reruns the identical
weight-estimation configuration, and refits the weighted outcome model.
Replicates that fail — separation in either model, infeasible entropy
balancing, extreme weights, or a design made degenerate by the resample —
are excluded and logged by stage and kind. Replicate RNG streams derive
from (seed, replicate index), so replicates can run in any order.
"""

from dataclasses import dataclass, field

import numpy as np

from .data_model import DataTable, as_pseudopopulation, combine
from .errors import DataError, SelweightError
from .outcome import BOOTSTRAP, OutcomeSpec, VarianceEstimate, fit_weighted_glm, outcome_design
from .weights import WeightConfig, estimate_weights


@dataclass(frozen=True)
class BootstrapConfig:
    n_replicates: int = 200
    strata_variable: str = "race_ethnicity"
    seed: int = 0
    resample_representative: bool = True

    def __post_init__(self):
        if self.n_replicates < 0:
            raise DataError("n_replicates must be nonnegative")


@dataclass
class BootstrapResult:
    replicate_betas: list[np.ndarray] = field(default_factory=list)
    n_failed: int = 0
    failure_log: list[dict] = field(default_factory=list)
    n_replicates: int = 0
    coef_names: tuple[str, ...] = ()

    @property
    def n_success(self) -> int:
        return len(self.replicate_betas)


def stratified_resample(table: DataTable, strata: str, rng: np.random.Generator) -> DataTable:
    """Resample with replacement within each stratum, preserving its size."""
    var = table.var(strata)
    if not var.is_categorical:
        raise DataError(f"stratum variable {strata!r} must be categorical")
    codes = table.column(strata)
    picks = []
    for code in range(len(var.levels)):
        members = np.flatnonzero(codes == code)
        if members.size == 0:
            continue
        picks.append(members[rng.integers(0, members.size, size=members.size)])
    return table.take(np.concatenate(picks))


def bootstrap_pipeline(
    conv: DataTable,
    rep: DataTable,
    weight_config: WeightConfig,
    outcome_spec: OutcomeSpec,
    cfg: BootstrapConfig,
    weight_covariates=None,
) -> BootstrapResult:
    """Re-estimate weights and refit the outcome on stratified resamples."""
    if weight_covariates is None:
        weight_covariates = [v.name for v in rep.schema]
    weight_covariates = list(weight_covariates)
    result = BootstrapResult(n_replicates=cfg.n_replicates)
    for r in range(cfg.n_replicates):
        rng = np.random.default_rng([cfg.seed, r])
        conv_r = stratified_resample(conv, cfg.strata_variable, rng)
        rep_r = (
            stratified_resample(rep, cfg.strata_variable, rng)
            if cfg.resample_representative
            else rep
        )
        combined = combine(
            conv_r.select(weight_covariates),
            as_pseudopopulation(rep_r.select(weight_covariates)),
        )
        try:
            stage = "weight_model"
            west = estimate_weights(combined, weight_covariates, weight_config)
            stage = "outcome_model"
            Z, y = outcome_design(conv_r, outcome_spec)
            fit = fit_weighted_glm(Z, y, west.weights)
        except SelweightError as err:
            result.n_failed += 1
            result.failure_log.append(
                {"replicate": r, "stage": stage, "kind": err.kind, "message": str(err)}
            )
            continue
        result.replicate_betas.append(fit.beta)
        if not result.coef_names:
            result.coef_names = fit.coef_names
    return result


def bootstrap_variance(result: BootstrapResult) -> VarianceEstimate:
    """Sample covariance of the successful replicate coefficient estimates."""
    if result.n_success < 2:
        raise DataError(
            f"bootstrap variance needs at least 2 successful replicates, have {result.n_success}"
        )
    betas = np.vstack(result.replicate_betas)
    cov = np.atleast_2d(np.cov(betas, rowvar=False, ddof=1))
    return VarianceEstimate(
        cov,
        BOOTSTRAP,
        result.coef_names,
        details={"n_success": result.n_success, "n_failed": result.n_failed},
    )
