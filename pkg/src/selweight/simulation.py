"""Monte Carlo study: biased draws from a finite population, weighted fits.

The harness builds (or accepts) a finite population with age, sex,
education, race/ethnicity, and exercise; assigns each member a biased
sampling probability from a fixed logistic model; draws one simple random
sample and one probability-biased sample per replicate; generates a binary
outcome whose race effects interact with the sampling probability; and fits
the marginal race/ethnicity model unweighted, true-weighted, and with each
requested estimated-weight method against an independent reference sample.
Aggregates cover bias, empirical/analytic/bootstrap standard errors, design
effects, and covariate balance.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .balance import standardized_difference
from .data_model import DataTable, VariableSpec, as_pseudopopulation, combine
from .errors import DataError, SelweightError
from .outcome import (
    OutcomeSpec,
    design_variance,
    fit_weighted_glm,
    outcome_design,
    proposed_variance,
    stacked_components,
)
from .resampling import BootstrapConfig, bootstrap_pipeline, bootstrap_variance
from .weights import (
    ENTROPY_BALANCING,
    LOGISTIC,
    RANDOM_FOREST,
    CBPS,
    ForestConfig,
    PropensityWeights,
    WeightConfig,
    estimate_weights,
)

AGE = "age"
SEX = "sex"
EDUCATION = "education"
RACE = "race_ethnicity"
EXERCISE = "exercise"
RESPONSE = "y"

SEX_LEVELS = ("male", "female")
EDUCATION_LEVELS = ("less_than_hs", "high_school", "some_college", "college_grad")
RACE_LEVELS = ("nh_white", "hispanic", "nh_asian", "nh_black")
EXERCISE_LEVELS = ("no", "yes")

POPULATION_SCHEMA = (
    VariableSpec(AGE, "continuous"),
    VariableSpec(SEX, "categorical", SEX_LEVELS, "male"),
    VariableSpec(EDUCATION, "categorical", EDUCATION_LEVELS, "college_grad"),
    VariableSpec(RACE, "categorical", RACE_LEVELS, "nh_white"),
    VariableSpec(EXERCISE, "categorical", EXERCISE_LEVELS, "no"),
)

WEIGHT_COVARIATES = (AGE, SEX, EDUCATION, RACE, EXERCISE)

UNWEIGHTED = "unweighted"
TRUE_WEIGHTS = "true"
SRS = "srs"
ESTIMATED_METHODS = (LOGISTIC, CBPS, ENTROPY_BALANCING, RANDOM_FOREST)


@dataclass(frozen=True)
class FinitePopulation:
    """The sampling frame for the study; all four race levels must appear."""

    data: DataTable

    def __post_init__(self):
        race = self.data.var(RACE)
        present = set(np.unique(self.data.column(RACE)))
        if present != set(range(len(race.levels))):
            raise DataError("population must contain every race/ethnicity level")

    @property
    def N(self) -> int:
        return self.data.n


def synthetic_population(N: int = 40_000, seed: int = 0) -> FinitePopulation:
    """Draw a stand-in population from documented marginal distributions.

    age ~ uniform integers 20..80; sex Bernoulli(0.5) female;
    education ~ {less_than_hs: .15, high_school: .25, some_college: .30,
    college_grad: .30}; race/ethnicity ~ {nh_white: .62, hispanic: .17,
    nh_asian: .06, nh_black: .15}; exercise Bernoulli(0.5), independent of
    the rest. Deterministic for a fixed seed.
    """
    if N < 1_000:
        raise DataError("population size must be at least 1,000")
    rng = np.random.default_rng(seed)
    columns = {
        AGE: rng.integers(20, 81, size=N).astype(np.float64),
        SEX: (rng.random(N) < 0.5).astype(np.int64),
        EDUCATION: rng.choice(4, size=N, p=[0.15, 0.25, 0.30, 0.30]),
        RACE: rng.choice(4, size=N, p=[0.62, 0.17, 0.06, 0.15]),
        EXERCISE: (rng.random(N) < 0.5).astype(np.int64),
    }
    return FinitePopulation(DataTable(POPULATION_SCHEMA, columns))


@dataclass(frozen=True)
class BiasedSamplingModel:
    """logit of the biased sampling probability as a function of covariates."""

    female: float = 0.15
    high_school: float = 0.25
    less_than_hs: float = 0.10
    some_college: float = 0.40
    hispanic: float = 0.85
    nh_asian: float = 0.45
    nh_asian_x_some_college: float = 1.0
    nh_black: float = 0.05
    nh_black_x_exercise: float = 0.75
    age_squared: float = -0.001
    intercept: float = 4.0

    def linear_predictor(self, table: DataTable) -> np.ndarray:
        age = table.column(AGE)
        female = _indicator(table, SEX, "female")
        hs = _indicator(table, EDUCATION, "high_school")
        lths = _indicator(table, EDUCATION, "less_than_hs")
        some_college = _indicator(table, EDUCATION, "some_college")
        hispanic = _indicator(table, RACE, "hispanic")
        asian = _indicator(table, RACE, "nh_asian")
        black = _indicator(table, RACE, "nh_black")
        exercise = _indicator(table, EXERCISE, "yes")
        return (
            self.female * female
            + self.high_school * hs
            + self.less_than_hs * lths
            + self.some_college * some_college
            + self.hispanic * hispanic
            + self.nh_asian * asian
            + self.nh_asian_x_some_college * asian * some_college
            + self.nh_black * black
            + self.nh_black_x_exercise * black * exercise
            + self.age_squared * age**2
            + self.intercept
        )

    def probability(self, table: DataTable) -> np.ndarray:
        return expit(self.linear_predictor(table))


@dataclass(frozen=True)
class OutcomeGenModel:
    """logit of the outcome probability; race effects interact with P_C."""

    intercept: float = 1.0
    hispanic: float = math.log(2.0)
    nh_asian: float = -math.log(3.0)
    nh_black: float = math.log(1.5)
    p_c: float = -math.log(2.0)
    hispanic_x_p_c: float = math.log(2.0)
    nh_asian_x_p_c: float = math.log(4.0)
    nh_black_x_p_c: float = -math.log(3.0)

    def linear_predictor(self, table: DataTable, p_c: np.ndarray) -> np.ndarray:
        hispanic = _indicator(table, RACE, "hispanic")
        asian = _indicator(table, RACE, "nh_asian")
        black = _indicator(table, RACE, "nh_black")
        return (
            self.intercept
            + self.hispanic * hispanic
            + self.nh_asian * asian
            + self.nh_black * black
            + self.p_c * p_c
            + self.hispanic_x_p_c * hispanic * p_c
            + self.nh_asian_x_p_c * asian * p_c
            + self.nh_black_x_p_c * black * p_c
        )

    def probability(self, table: DataTable, p_c: np.ndarray) -> np.ndarray:
        return expit(self.linear_predictor(table, p_c))


def _indicator(table: DataTable, name: str, level: str) -> np.ndarray:
    var = table.var(name)
    return (table.column(name) == var.levels.index(level)).astype(np.float64)


def biased_sampling_probability(table: DataTable, model: BiasedSamplingModel | None = None):
    """P_C for every row of ``table`` under the biased-selection model."""
    return (model or BiasedSamplingModel()).probability(table)


def generate_outcome(
    table: DataTable,
    p_c: np.ndarray,
    rng: np.random.Generator,
    model: OutcomeGenModel | None = None,
) -> np.ndarray:
    """Bernoulli outcomes with success probability expit(rho(row, P_C))."""
    p_c = np.asarray(p_c, dtype=np.float64)
    if np.any(p_c <= 0.0) or np.any(p_c >= 1.0):
        raise DataError("P_C must lie strictly inside (0, 1)")
    pi = (model or OutcomeGenModel()).probability(table, p_c)
    return (rng.random(table.n) < pi).astype(np.float64)


def draw_srs(pop: FinitePopulation, n: int, rng: np.random.Generator) -> DataTable:
    """Simple random sample without replacement."""
    if n > pop.N:
        raise DataError(f"cannot draw {n} from a population of {pop.N}")
    idx = rng.choice(pop.N, size=n, replace=False)
    return pop.data.take(np.sort(idx))


def draw_biased(
    pop: FinitePopulation, selection: np.ndarray, n: int, rng: np.random.Generator
) -> DataTable:
    """Weighted draw without replacement, selection proportional to ``selection``.

    Implemented with exponential keys (smallest n of Exp(1)/p), which
    realizes successive sampling proportional to the remaining weights.
    """
    selection = np.asarray(selection, dtype=np.float64)
    if selection.shape != (pop.N,):
        raise DataError("selection probabilities must cover the population")
    if n > pop.N:
        raise DataError(f"cannot draw {n} from a population of {pop.N}")
    keys = rng.exponential(size=pop.N) / selection
    idx = np.argpartition(keys, n - 1)[:n]
    return pop.data.take(np.sort(idx))


def true_weights(p_c: np.ndarray) -> PropensityWeights:
    """Weights (1 - P_C)/P_C from known sampling probabilities."""
    p_c = np.asarray(p_c, dtype=np.float64)
    if np.any(p_c <= 0.0) or np.any(p_c >= 1.0):
        raise DataError("P_C must lie strictly inside (0, 1)")
    return PropensityWeights((1.0 - p_c) / p_c, "raw")


def percent_bias(mean_biased: np.ndarray, mean_srs: np.ndarray) -> np.ndarray:
    """100 (biased - reference) / |reference|; NaN where the reference is ~0."""
    mean_biased = np.asarray(mean_biased, dtype=np.float64)
    mean_srs = np.asarray(mean_srs, dtype=np.float64)
    out = np.full(mean_srs.shape, np.nan)
    ok = np.abs(mean_srs) > 1e-8
    out[ok] = 100.0 * (mean_biased[ok] - mean_srs[ok]) / np.abs(mean_srs[ok])
    return out


def design_effect(var_weighted_biased: np.ndarray, var_unweighted_srs: np.ndarray) -> np.ndarray:
    """Per-coefficient empirical variance ratio against the SRS baseline."""
    num = np.asarray(var_weighted_biased, dtype=np.float64)
    den = np.asarray(var_unweighted_srs, dtype=np.float64)
    if np.any(den <= 0.0):
        raise DataError("SRS variance must be positive")
    return num / den


@dataclass(frozen=True)
class SimulationConfig:
    n_sims: int = 1_000
    sample_size: int = 500
    reference_size: int = 5_000
    methods: tuple[str, ...] = ESTIMATED_METHODS
    bootstrap_replicates: int = 0
    bootstrap_sims: int | None = None  # how many leading sims bootstrap; None = all
    seed: int = 0
    strata_variable: str = RACE
    logistic_stepwise: bool = False  # main-effects weight model inside the study
    forest: ForestConfig = field(default_factory=ForestConfig)

    def __post_init__(self):
        if self.n_sims < 1 or self.sample_size < 1 or self.reference_size < 1:
            raise DataError("simulation counts must be positive")
        unknown = [m for m in self.methods if m not in ESTIMATED_METHODS]
        if unknown:
            raise DataError(f"unknown weight method(s) {unknown}")
        if self.bootstrap_replicates < 0:
            raise DataError("bootstrap_replicates must be nonnegative")


@dataclass
class MethodAggregate:
    """Across-simulation summaries for one fitting strategy."""

    method: str
    mean_beta: np.ndarray
    empirical_se: np.ndarray
    mean_analytic_se: np.ndarray | None
    mean_bootstrap_se: np.ndarray | None
    percent_bias: np.ndarray | None
    design_effect: np.ndarray | None
    n_success: int
    n_failed: int
    failure_kinds: dict[str, int]


@dataclass
class SimulationReport:
    coef_names: tuple[str, ...]
    methods: tuple[str, ...]
    aggregates: dict[str, MethodAggregate]
    balance: list[dict]
    config: SimulationConfig
    replicate_betas: dict[str, np.ndarray]

    def rows(self):
        """Flat (method, coefficient, metric, value) rows for CSV output."""
        out = []
        for method in self.methods:
            agg = self.aggregates[method]
            per_coef = {
                "mean_beta": agg.mean_beta,
                "empirical_se": agg.empirical_se,
                "mean_analytic_se": agg.mean_analytic_se,
                "mean_bootstrap_se": agg.mean_bootstrap_se,
                "percent_bias": agg.percent_bias,
                "design_effect": agg.design_effect,
            }
            for metric, values in per_coef.items():
                if values is None:
                    continue
                for k, coef in enumerate(self.coef_names):
                    out.append(
                        {"method": method, "coefficient": coef, "metric": metric,
                         "value": float(values[k])}
                    )
            out.append(
                {"method": method, "coefficient": "", "metric": "n_success",
                 "value": float(agg.n_success)}
            )
            out.append(
                {"method": method, "coefficient": "", "metric": "n_failed",
                 "value": float(agg.n_failed)}
            )
        return out


def _with_response(table: DataTable, y: np.ndarray) -> DataTable:
    schema = table.schema + (VariableSpec(RESPONSE, "continuous"),)
    columns = dict(table.columns)
    columns[RESPONSE] = y
    return DataTable(schema, columns)


def _weight_config(method: str, cfg: SimulationConfig) -> WeightConfig:
    if method == LOGISTIC:
        return WeightConfig(method=LOGISTIC, stepwise=cfg.logistic_stepwise)
    if method == RANDOM_FOREST:
        return WeightConfig(method=RANDOM_FOREST, forest=cfg.forest)
    return WeightConfig(method=method)


def run_simulation(
    cfg: SimulationConfig,
    pop: FinitePopulation | None = None,
    sampling_model: BiasedSamplingModel | None = None,
    outcome_model: OutcomeGenModel | None = None,
) -> SimulationReport:
    """Run the full study and aggregate per-method results.

    Per replicate: draw an SRS and a biased sample of ``sample_size`` plus an
    independent reference SRS of ``reference_size``; generate outcomes for
    both analysis samples; fit the marginal race/ethnicity model unweighted
    on both, true-weighted on the biased sample, and once per requested
    estimated-weight method (weights estimated against the reference
    sample). Analytic SEs use the weight-aware variance for logistic weights
    and the design-based sandwich otherwise. Failures are excluded from that
    method's aggregates and counted.
    """
    if pop is None:
        pop = synthetic_population(seed=cfg.seed)
    sampling_model = sampling_model or BiasedSamplingModel()
    outcome_model = outcome_model or OutcomeGenModel()
    outcome_spec = OutcomeSpec(response=RESPONSE, covariates=(RACE,))

    strategies = [SRS, UNWEIGHTED, TRUE_WEIGHTS, *cfg.methods]
    betas: dict[str, list[np.ndarray]] = {s: [] for s in strategies}
    analytic_ses: dict[str, list[np.ndarray]] = {s: [] for s in strategies}
    bootstrap_ses: dict[str, list[np.ndarray]] = {s: [] for s in strategies}
    failures: dict[str, dict[str, int]] = {s: {} for s in strategies}
    coef_names: tuple[str, ...] = ()
    balance_rows: list[dict] = []

    n_boot_sims = cfg.n_sims if cfg.bootstrap_sims is None else min(cfg.bootstrap_sims, cfg.n_sims)
    pop_p = sampling_model.probability(pop.data)

    def fail(name, err):
        failures[name][err.kind] = failures[name].get(err.kind, 0) + 1

    for s in range(cfg.n_sims):
        rng = np.random.default_rng([cfg.seed, s])
        srs = draw_srs(pop, cfg.sample_size, rng)
        biased = draw_biased(pop, pop_p, cfg.sample_size, rng)
        reference = draw_srs(pop, cfg.reference_size, rng)

        p_srs = sampling_model.probability(srs)
        p_biased = sampling_model.probability(biased)
        srs_full = _with_response(srs, generate_outcome(srs, p_srs, rng, outcome_model))
        biased_full = _with_response(biased, generate_outcome(biased, p_biased, rng, outcome_model))

        Z_srs, y_srs = outcome_design(srs_full, outcome_spec)
        Z_biased, y_biased = outcome_design(biased_full, outcome_spec)
        if not coef_names:
            coef_names = Z_srs.column_names
        ones = PropensityWeights(np.ones(cfg.sample_size), "raw")

        for name, Z, y, w in (
            (SRS, Z_srs, y_srs, ones),
            (UNWEIGHTED, Z_biased, y_biased, ones),
            (TRUE_WEIGHTS, Z_biased, y_biased, true_weights(p_biased)),
        ):
            try:
                fit = fit_weighted_glm(Z, y, w)
            except SelweightError as err:
                fail(name, err)
                continue
            betas[name].append(fit.beta)
            analytic_ses[name].append(design_variance(fit).se)

        combined = combine(
            biased.select(WEIGHT_COVARIATES),
            as_pseudopopulation(reference.select(WEIGHT_COVARIATES)),
        )
        for method in cfg.methods:
            wc = _weight_config(method, cfg)
            try:
                west = estimate_weights(combined, WEIGHT_COVARIATES, wc)
                fit = fit_weighted_glm(Z_biased, y_biased, west.weights)
                if method == LOGISTIC:
                    comps = stacked_components(fit, west.model, combined.membership)
                    se = proposed_variance(comps).se
                else:
                    se = design_variance(fit).se
            except SelweightError as err:
                fail(method, err)
                continue
            betas[method].append(fit.beta)
            analytic_ses[method].append(se)
            if s == 0:
                balance_rows.extend(
                    {"method": method, **row}
                    for row in standardized_difference(
                        biased, reference, west.weights, WEIGHT_COVARIATES
                    )
                )

            if cfg.bootstrap_replicates > 0 and s < n_boot_sims:
                boot = bootstrap_pipeline(
                    biased_full,
                    reference,
                    wc,
                    outcome_spec,
                    BootstrapConfig(
                        n_replicates=cfg.bootstrap_replicates,
                        strata_variable=cfg.strata_variable,
                        seed=int(np.random.SeedSequence([cfg.seed, s, 1]).generate_state(1)[0]),
                    ),
                    weight_covariates=WEIGHT_COVARIATES,
                )
                if boot.n_success >= 2:
                    bootstrap_ses[method].append(bootstrap_variance(boot).se)

        if s == 0:
            balance_rows.extend(
                {"method": UNWEIGHTED, **row}
                for row in standardized_difference(biased, reference, None, WEIGHT_COVARIATES)
            )

    srs_betas = np.vstack(betas[SRS])
    srs_mean = srs_betas.mean(axis=0)
    srs_var = srs_betas.var(axis=0, ddof=1)

    aggregates: dict[str, MethodAggregate] = {}
    for name in strategies:
        if not betas[name]:
            aggregates[name] = MethodAggregate(
                method=name,
                mean_beta=np.full(len(coef_names), np.nan),
                empirical_se=np.full(len(coef_names), np.nan),
                mean_analytic_se=None,
                mean_bootstrap_se=None,
                percent_bias=None,
                design_effect=None,
                n_success=0,
                n_failed=sum(failures[name].values()),
                failure_kinds=failures[name],
            )
            continue
        mat = np.vstack(betas[name])
        mean_beta = mat.mean(axis=0)
        emp_var = mat.var(axis=0, ddof=1) if mat.shape[0] > 1 else np.zeros(mat.shape[1])
        aggregates[name] = MethodAggregate(
            method=name,
            mean_beta=mean_beta,
            empirical_se=np.sqrt(emp_var),
            mean_analytic_se=(
                np.vstack(analytic_ses[name]).mean(axis=0) if analytic_ses[name] else None
            ),
            mean_bootstrap_se=(
                np.vstack(bootstrap_ses[name]).mean(axis=0) if bootstrap_ses[name] else None
            ),
            percent_bias=None if name == SRS else percent_bias(mean_beta, srs_mean),
            design_effect=None if name == SRS else design_effect(emp_var, srs_var),
            n_success=mat.shape[0],
            n_failed=sum(failures[name].values()),
            failure_kinds=failures[name],
        )

    return SimulationReport(
        coef_names=coef_names,
        methods=tuple(strategies),
        aggregates=aggregates,
        balance=balance_rows,
        config=cfg,
        replicate_betas={name: np.vstack(betas[name]) for name in strategies if betas[name]},
    )
