"""Weighted logistic outcome models and weight-aware variance estimation.

The outcome model solves the propensity-weighted score

    sum_{i in C} w_i (y_i - mu_i) z_i = 0.

Treating the weights as fixed gives the usual design-based sandwich
A^-1 B A^-1. Stacking the membership-model score T(gamma) on top of the
weighted outcome score U-bar(beta, gamma) and Taylor-expanding the joint
system yields a corrected covariance for beta that accounts for the weights
having been estimated:

    V = A^-1 B A^-1  -  A^-1 I_UT I_TT^-1 R' A^-1

where I_TT is the membership-model information, I_UT the cross-derivative
of the weighted score with respect to gamma, and R the empirical covariance
between the two scores. Only logistic-family membership models have the
tractable score this needs; CBPS is accepted with an "approximate" flag
since its GMM objective is not exactly the logistic likelihood.

Rubin's rules pool coefficient and variance estimates across multiply
imputed datasets.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import expit

from .data_model import DataTable
from .design import MAIN_EFFECTS, DesignMatrix, build_design_matrix
from .errors import DataError, UnsupportedForProposedVarianceError
from .glm import fit_logit
from .weights import (
    CBPS,
    LOGISTIC,
    MembershipModel,
    PropensityWeights,
    predict_probability,
)

MODEL = "model"
DESIGN = "design"
PROPOSED = "proposed"
BOOTSTRAP = "bootstrap"
VARIANCE_KINDS = (MODEL, DESIGN, PROPOSED, BOOTSTRAP)


@dataclass(frozen=True)
class OutcomeSpec:
    """The scientific model: binary response, covariates, logit link."""

    response: str
    covariates: tuple[str, ...]
    link: str = "logit"

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if self.link != "logit":
            raise DataError(f"only the logit link is implemented, not {self.link!r}")
        if not self.covariates:
            raise DataError("outcome model needs at least one covariate")


def response_vector(table: DataTable, response: str) -> np.ndarray:
    """0/1 response; a two-level categorical maps its non-reference level to 1."""
    var = table.var(response)
    col = table.column(response)
    if var.is_categorical:
        if len(var.levels) != 2:
            raise DataError(f"response {response!r} must be binary, has {len(var.levels)} levels")
        ref_code = var.levels.index(var.reference)
        return (col != ref_code).astype(np.float64)
    y = col.astype(np.float64)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError(f"response {response!r} must contain only 0 and 1")
    return y


def outcome_design(table: DataTable, spec: OutcomeSpec, expansion: str = MAIN_EFFECTS):
    """Design matrix Z and response y for the outcome model."""
    Z = build_design_matrix(table, spec.covariates, expansion)
    return Z, response_vector(table, spec.response)


@dataclass
class WeightedFit:
    """Solution of the weighted outcome score with its ingredients."""

    beta: np.ndarray
    design: DesignMatrix
    y: np.ndarray
    weights: PropensityWeights
    mu: np.ndarray
    deviance_trace: list[float]
    converged: bool

    @property
    def coef_names(self) -> tuple[str, ...]:
        return self.design.column_names

    def score(self) -> np.ndarray:
        """Weighted score at beta-hat; zero to solver tolerance."""
        return self.design.values.T @ (self.weights.values * (self.y - self.mu))


def fit_weighted_glm(Z: DesignMatrix, y, w: PropensityWeights) -> WeightedFit:
    """Propensity-weighted logistic fit; beta is invariant to rescaling w."""
    y = np.asarray(y, dtype=np.float64)
    fit = fit_logit(Z.values, y, sample_weight=w.values)
    return WeightedFit(
        beta=fit.beta,
        design=Z,
        y=y,
        weights=w,
        mu=fit.mu,
        deviance_trace=fit.deviance_trace,
        converged=fit.converged,
    )


@dataclass(frozen=True)
class VarianceEstimate:
    """A p-by-p covariance for beta-hat, tagged by how it was obtained."""

    matrix: np.ndarray
    kind: str
    coef_names: tuple[str, ...] = ()
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if self.kind not in VARIANCE_KINDS:
            raise DataError(f"unknown variance kind {self.kind!r}")
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DataError("variance matrix must be square")
        object.__setattr__(self, "matrix", m)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.matrix))


def _outcome_ingredients(fit: WeightedFit, w: np.ndarray):
    Z = fit.design.values
    info_w = w * fit.mu * (1.0 - fit.mu)
    A = Z.T @ (info_w[:, None] * Z)
    U = (w * (fit.y - fit.mu))[:, None] * Z  # per-unit weighted scores, rows U-bar_i
    return Z, A, U


def model_variance(fit: WeightedFit) -> VarianceEstimate:
    """Inverse weighted information; ignores both sampling and weight noise."""
    _, A, _ = _outcome_ingredients(fit, fit.weights.values)
    return VarianceEstimate(np.linalg.inv(A), MODEL, fit.coef_names)


def design_variance(fit: WeightedFit) -> VarianceEstimate:
    """Sandwich A^-1 B A^-1 with the weights treated as fixed.

    No finite population correction is applied. The estimate is invariant
    to rescaling all weights by a constant (A scales by c, B by c^2).
    """
    _, A, U = _outcome_ingredients(fit, fit.weights.values)
    B = U.T @ U
    A_inv = np.linalg.inv(A)
    return VarianceEstimate(A_inv @ B @ A_inv, DESIGN, fit.coef_names, details={"A": A, "B": B})


@dataclass(frozen=True)
class StackedComponents:
    """Blocks of the stacked-system information and score covariance."""

    I_TT: np.ndarray
    I_UU: np.ndarray  # alias A
    I_UT: np.ndarray
    R_hat: np.ndarray
    B_hat: np.ndarray
    coef_names: tuple[str, ...] = ()
    approximate: bool = False

    @property
    def A(self) -> np.ndarray:
        return self.I_UU


def stacked_components(
    fit: WeightedFit,
    weight_model: MembershipModel,
    membership: np.ndarray,
    *,
    literal_product_of_sums: bool = False,
) -> StackedComponents:
    """Assemble every block of the stacked estimating system at the fit.

    The convenience rows of the combined design must be its leading rows, in
    the same order as the rows ``fit`` was estimated on. Raw weights
    (1-P)/P are recomputed from the membership model so the gamma
    derivatives match the weights actually differentiated; the final
    variance is invariant to the normalization the fit used.

    ``literal_product_of_sums`` switches R-hat to the product-of-sums form
    (sum of U-bar times sum of T transposed), which is identically zero at
    the weighted MLE and kept only for comparison; the default is the
    per-unit cross-product sum.
    """
    if weight_model.method not in (LOGISTIC, CBPS):
        raise UnsupportedForProposedVarianceError(
            f"no tractable membership score for method {weight_model.method!r}; "
            "use the design-based variance"
        )
    membership = np.asarray(membership)
    conv = np.flatnonzero(membership == 1)
    if conv.size != fit.design.n:
        raise DataError("fit rows do not match the combined sample's convenience rows")

    X = weight_model.design.values
    gamma = np.asarray(weight_model.parameters["gamma"], dtype=np.float64)
    P = expit(X @ gamma)
    I_TT = X.T @ ((P * (1.0 - P))[:, None] * X)

    P_conv = P[conv]
    w_raw = (1.0 - P_conv) / P_conv
    Z, A, U = _outcome_ingredients(fit, w_raw)

    X_conv = X[conv]
    I_UT = Z.T @ ((w_raw * (fit.y - fit.mu))[:, None] * X_conv)
    T_conv = (1.0 - P_conv)[:, None] * X_conv  # T_i = (C_i - P_i) x_i with C_i = 1
    if literal_product_of_sums:
        R_hat = np.outer(U.sum(axis=0), T_conv.sum(axis=0))
    else:
        R_hat = U.T @ T_conv
    B_hat = U.T @ U
    return StackedComponents(
        I_TT=I_TT,
        I_UU=A,
        I_UT=I_UT,
        R_hat=R_hat,
        B_hat=B_hat,
        coef_names=fit.coef_names,
        approximate=weight_model.method == CBPS,
    )


def proposed_variance(components: StackedComponents) -> VarianceEstimate:
    """Design sandwich plus the weight-estimation correction, symmetrized.

    If the correction drives a diagonal entry negative the design-based
    diagonal is restored for that coefficient and the estimate is flagged
    ``not_psd`` in the details rather than failing.
    """
    A_inv = np.linalg.inv(components.A)
    design = A_inv @ components.B_hat @ A_inv
    correction = (
        A_inv
        @ components.I_UT
        @ np.linalg.solve(components.I_TT, components.R_hat.T)
        @ A_inv
    )
    V = design - correction
    V = 0.5 * (V + V.T)
    not_psd = [
        components.coef_names[k] if components.coef_names else k
        for k in range(V.shape[0])
        if V[k, k] < 0.0
    ]
    if not_psd:
        for k in range(V.shape[0]):
            if V[k, k] < 0.0:
                V[k, k] = design[k, k]
    return VarianceEstimate(
        V,
        PROPOSED,
        components.coef_names,
        details={
            "correction": 0.5 * (correction + correction.T),
            "design": design,
            "not_psd": not_psd,
            "approximate": components.approximate,
        },
    )


@dataclass(frozen=True)
class PooledEstimate:
    """Rubin's-rules pooling across M imputed-dataset fits."""

    beta_bar: np.ndarray
    total_variance: np.ndarray
    within_variance: np.ndarray
    between_variance: np.ndarray
    M: int
    df: np.ndarray
    coef_names: tuple[str, ...] = ()

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.total_variance))


def pool_rubin(fits, coef_names=()) -> PooledEstimate:
    """Pool (beta, variance) pairs: T = W + (1 + 1/M) B_between.

    The degrees of freedom use the classic per-coefficient Rubin formula
    nu = (M-1) (1 + W / ((1+1/M) B))^2; coefficients with zero
    between-imputation variance get infinite df (normal quantiles).
    """
    fits = list(fits)
    M = len(fits)
    if M < 2:
        raise DataError("pooling needs at least two fits")
    betas = []
    variances = []
    for beta, var in fits:
        betas.append(np.asarray(beta, dtype=np.float64))
        variances.append(var.matrix if isinstance(var, VarianceEstimate) else np.asarray(var))
    p = betas[0].shape[0]
    if any(b.shape != (p,) for b in betas) or any(v.shape != (p, p) for v in variances):
        raise DataError("all fits must share the same coefficient dimension")

    beta_mat = np.vstack(betas)
    beta_bar = beta_mat.mean(axis=0)
    W = np.mean(variances, axis=0)
    centered = beta_mat - beta_bar
    B = centered.T @ centered / (M - 1)
    T = W + (1.0 + 1.0 / M) * B

    with np.errstate(divide="ignore"):
        ratio = np.diag(W) / ((1.0 + 1.0 / M) * np.diag(B))
    df = np.where(np.diag(B) > 0.0, (M - 1) * (1.0 + ratio) ** 2, np.inf)
    return PooledEstimate(
        beta_bar=beta_bar,
        total_variance=T,
        within_variance=W,
        between_variance=B,
        M=M,
        df=df,
        coef_names=tuple(coef_names),
    )


def report_odds_ratios(
    beta,
    variance,
    level: float = 0.95,
    coef_names=(),
    df=None,
):
    """Rows of (name, estimate, se, odds ratio, CI bounds) per coefficient.

    Single fits use normal quantiles; pooled fits pass their per-coefficient
    Rubin df and get t quantiles.
    """
    beta = np.asarray(beta, dtype=np.float64)
    matrix = variance.matrix if isinstance(variance, VarianceEstimate) else np.asarray(variance)
    diag = np.diag(matrix)
    if np.any(diag < 0):
        raise DataError("variance diagonal must be nonnegative")
    se = np.sqrt(diag)
    names = list(coef_names) if coef_names else [f"b{k}" for k in range(beta.shape[0])]
    alpha = 1.0 - level
    df_arr = None if df is None else np.broadcast_to(np.asarray(df, dtype=np.float64), beta.shape)
    rows = []
    for k, name in enumerate(names):
        if df_arr is None or not np.isfinite(df_arr[k]):
            q = stats.norm.ppf(1.0 - alpha / 2.0)
        else:
            q = stats.t.ppf(1.0 - alpha / 2.0, df_arr[k])
        half = q * se[k]
        rows.append(
            {
                "coefficient": name,
                "estimate": float(beta[k]),
                "se": float(se[k]),
                "odds_ratio": float(np.exp(beta[k])),
                "ci_low": float(np.exp(beta[k] - half)),
                "ci_high": float(np.exp(beta[k] + half)),
            }
        )
    return rows
