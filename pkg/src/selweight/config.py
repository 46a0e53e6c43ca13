"""Config-file parsing for the CLI: schema files and run configs.

Both are YAML key-value trees. Parsing is total: unknown keys are errors,
every value is type-checked here before any computation starts, and the
resolved config is hashed into output-file headers for auditability.
"""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data_model import MISSING_POLICIES, VariableSpec
from .errors import ConfigError
from .outcome import BOOTSTRAP, DESIGN, PROPOSED, OutcomeSpec, VARIANCE_KINDS
from .weights import CBPS, ENTROPY_BALANCING, LOGISTIC, METHODS, RANDOM_FOREST, ForestConfig

DEFAULT_SEED = 20_240_601  # fixed documented constant; reproducibility first

METHOD_ALIASES = {
    "logistic": LOGISTIC,
    "cbps": CBPS,
    "eb": ENTROPY_BALANCING,
    "entropy_balancing": ENTROPY_BALANCING,
    "rf": RANDOM_FOREST,
    "random_forest": RANDOM_FOREST,
}

SURVEY_WITH_WEIGHTS = "survey_with_weights"
PSEUDOPOPULATION = "pseudopopulation"
REPRESENTATIVE_KINDS = (SURVEY_WITH_WEIGHTS, PSEUDOPOPULATION)


def _load_yaml(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: invalid YAML: {err}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _require_keys(mapping: dict, allowed: set[str], required: set[str], where: str):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")
    missing = sorted(required - set(mapping))
    if missing:
        raise ConfigError(f"{where}: missing required key(s) {missing}")


def load_schema(path) -> tuple[VariableSpec, ...]:
    """Parse a variable-schema file.

    Expected shape::

        variables:
          - name: age
            kind: continuous
          - name: sex
            kind: categorical
            levels: [male, female]
            reference: male   # optional; defaults to the first level
    """
    data = _load_yaml(path)
    _require_keys(data, {"variables"}, {"variables"}, str(path))
    entries = data["variables"]
    if not isinstance(entries, list) or not entries:
        raise ConfigError(f"{path}: 'variables' must be a non-empty list")
    specs = []
    for i, entry in enumerate(entries):
        where = f"{path}: variables[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{where}: must be a mapping")
        _require_keys(entry, {"name", "kind", "levels", "reference"}, {"name", "kind"}, where)
        kind = entry["kind"]
        if kind == "continuous":
            if "levels" in entry or "reference" in entry:
                raise ConfigError(f"{where}: continuous variables take no levels/reference")
            specs.append(VariableSpec(str(entry["name"]), "continuous"))
        elif kind == "categorical":
            levels = entry.get("levels")
            if not isinstance(levels, list) or not levels:
                raise ConfigError(f"{where}: categorical variables need a non-empty 'levels' list")
            specs.append(
                VariableSpec(
                    str(entry["name"]),
                    "categorical",
                    tuple(str(lev) for lev in levels),
                    str(entry["reference"]) if "reference" in entry else None,
                )
            )
        else:
            raise ConfigError(f"{where}: kind must be 'continuous' or 'categorical'")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError(f"{path}: duplicate variable names")
    return tuple(specs)


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    return value


def _as_bool(value, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    return value


def _as_str(value, where: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def parse_forest_config(raw, seed: int, where: str) -> ForestConfig:
    if raw is None:
        return ForestConfig(seed=seed)
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: 'forest' must be a mapping")
    _require_keys(raw, {"n_trees", "mtry", "min_leaf", "max_depth"}, set(), where)
    return ForestConfig(
        n_trees=_as_int(raw.get("n_trees", 500), f"{where}.n_trees"),
        mtry=None if raw.get("mtry") is None else _as_int(raw["mtry"], f"{where}.mtry"),
        min_leaf=_as_int(raw.get("min_leaf", 1), f"{where}.min_leaf"),
        max_depth=(
            None if raw.get("max_depth") is None else _as_int(raw["max_depth"], f"{where}.max_depth")
        ),
        seed=seed,
    )


@dataclass(frozen=True)
class BootstrapSettings:
    n_replicates: int = 200
    strata_variable: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration for the balance and estimate commands."""

    convenience_csv: str
    representative_csv: str
    schema_path: str
    schema: tuple[VariableSpec, ...]
    representative_kind: str
    sampling_weight_column: str | None
    missing_policy: str
    weight_method: str
    weight_covariates: tuple[str, ...] | None
    logistic_stepwise: bool
    eb_degree: int
    forest: ForestConfig
    outcome: OutcomeSpec | None
    variance: tuple[str, ...]
    bootstrap: BootstrapSettings
    imputed_convenience_csvs: tuple[str, ...]
    output_dir: str
    seed: int
    raw: dict = field(compare=False, default_factory=dict)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


_RUN_KEYS = {
    "convenience_csv",
    "representative_csv",
    "schema",
    "representative_kind",
    "sampling_weight_column",
    "missing_policy",
    "weight_method",
    "weight_covariates",
    "logistic_stepwise",
    "eb_degree",
    "forest",
    "outcome",
    "variance",
    "bootstrap",
    "imputed_convenience_csvs",
    "output_dir",
    "seed",
}


def load_run_config(path, overrides: dict | None = None, *, need_outcome: bool) -> RunConfig:
    raw = _load_yaml(path)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    where = str(path)
    _require_keys(
        raw,
        _RUN_KEYS,
        {"convenience_csv", "representative_csv", "schema", "representative_kind"},
        where,
    )

    schema_path = _as_str(raw["schema"], f"{where}.schema")
    schema = load_schema(schema_path)
    names = {v.name for v in schema}

    rep_kind = _as_str(raw["representative_kind"], f"{where}.representative_kind")
    if rep_kind not in REPRESENTATIVE_KINDS:
        raise ConfigError(
            f"{where}.representative_kind: must be one of {REPRESENTATIVE_KINDS}, got {rep_kind!r}"
        )
    weight_col = raw.get("sampling_weight_column")
    if rep_kind == SURVEY_WITH_WEIGHTS:
        if weight_col is None:
            raise ConfigError(f"{where}: survey_with_weights requires 'sampling_weight_column'")
        weight_col = _as_str(weight_col, f"{where}.sampling_weight_column")
    elif weight_col is not None:
        raise ConfigError(f"{where}: sampling_weight_column only applies to survey_with_weights")

    missing_policy = _as_str(raw.get("missing_policy", "reject"), f"{where}.missing_policy")
    if missing_policy not in MISSING_POLICIES:
        raise ConfigError(f"{where}.missing_policy: must be one of {MISSING_POLICIES}")

    method_raw = _as_str(raw.get("weight_method", "logistic"), f"{where}.weight_method")
    if method_raw not in METHOD_ALIASES:
        raise ConfigError(
            f"{where}.weight_method: must be one of {sorted(METHOD_ALIASES)}, got {method_raw!r}"
        )
    weight_method = METHOD_ALIASES[method_raw]

    covs = raw.get("weight_covariates")
    if covs is not None:
        if not isinstance(covs, list) or not covs:
            raise ConfigError(f"{where}.weight_covariates: must be a non-empty list")
        covs = tuple(_as_str(c, f"{where}.weight_covariates") for c in covs)
        bad = [c for c in covs if c not in names]
        if bad:
            raise ConfigError(f"{where}.weight_covariates: not in schema: {bad}")

    seed = _as_int(raw.get("seed", DEFAULT_SEED), f"{where}.seed")

    outcome = None
    if raw.get("outcome") is not None:
        oc = raw["outcome"]
        if not isinstance(oc, dict):
            raise ConfigError(f"{where}.outcome: must be a mapping")
        _require_keys(oc, {"response", "covariates"}, {"response", "covariates"}, f"{where}.outcome")
        response = _as_str(oc["response"], f"{where}.outcome.response")
        if response not in names:
            raise ConfigError(f"{where}.outcome.response: {response!r} not in schema")
        ocovs = oc["covariates"]
        if not isinstance(ocovs, list) or not ocovs:
            raise ConfigError(f"{where}.outcome.covariates: must be a non-empty list")
        bad = [c for c in ocovs if c not in names]
        if bad:
            raise ConfigError(f"{where}.outcome.covariates: not in schema: {bad}")
        outcome = OutcomeSpec(response=response, covariates=tuple(ocovs))
    elif need_outcome:
        raise ConfigError(f"{where}: the estimate command requires an 'outcome' section")

    variance_raw = raw.get("variance", "design")
    if isinstance(variance_raw, str):
        variance = tuple(VARIANCE_KINDS[:3]) if variance_raw == "all" else (variance_raw,)
        variance = tuple(v for v in variance if v != "model") if variance_raw == "all" else variance
        if variance_raw == "all":
            variance = (DESIGN, PROPOSED, BOOTSTRAP)
    else:
        raise ConfigError(f"{where}.variance: must be a string")
    for kind in variance:
        if kind not in VARIANCE_KINDS:
            raise ConfigError(f"{where}.variance: unknown kind {kind!r}")
    if PROPOSED in variance and weight_method not in (LOGISTIC, CBPS):
        raise ConfigError(
            f"{where}: proposed variance requires weight_method logistic or cbps, "
            f"not {method_raw!r}"
        )

    boot_raw = raw.get("bootstrap")
    if boot_raw is None:
        bootstrap = BootstrapSettings()
    else:
        if not isinstance(boot_raw, dict):
            raise ConfigError(f"{where}.bootstrap: must be a mapping")
        _require_keys(boot_raw, {"n_replicates", "strata_variable"}, set(), f"{where}.bootstrap")
        strata = boot_raw.get("strata_variable")
        bootstrap = BootstrapSettings(
            n_replicates=_as_int(boot_raw.get("n_replicates", 200), f"{where}.bootstrap.n_replicates"),
            strata_variable=None if strata is None else _as_str(strata, f"{where}.bootstrap"),
        )

    imputed = raw.get("imputed_convenience_csvs") or ()
    if imputed and (not isinstance(imputed, list) or len(imputed) < 2):
        raise ConfigError(f"{where}.imputed_convenience_csvs: must list at least two files")

    return RunConfig(
        convenience_csv=_as_str(raw["convenience_csv"], f"{where}.convenience_csv"),
        representative_csv=_as_str(raw["representative_csv"], f"{where}.representative_csv"),
        schema_path=schema_path,
        schema=schema,
        representative_kind=rep_kind,
        sampling_weight_column=weight_col,
        missing_policy=missing_policy,
        weight_method=weight_method,
        weight_covariates=covs,
        logistic_stepwise=_as_bool(raw.get("logistic_stepwise", True), f"{where}.logistic_stepwise"),
        eb_degree=_as_int(raw.get("eb_degree", 3), f"{where}.eb_degree"),
        forest=parse_forest_config(raw.get("forest"), seed, f"{where}.forest"),
        outcome=outcome,
        variance=variance,
        bootstrap=bootstrap,
        imputed_convenience_csvs=tuple(imputed),
        output_dir=_as_str(raw.get("output_dir", "."), f"{where}.output_dir"),
        seed=seed,
        raw=raw,
    )


@dataclass(frozen=True)
class SimulateRunConfig:
    population_size: int
    n_sims: int
    sample_size: int
    reference_size: int
    methods: tuple[str, ...]
    bootstrap_replicates: int
    bootstrap_sims: int | None
    forest: ForestConfig
    logistic_stepwise: bool
    dump_replicates: bool
    output_dir: str
    seed: int
    raw: dict = field(compare=False, default_factory=dict)

    def config_hash(self) -> str:
        canon = json.dumps(self.raw, sort_keys=True, default=str)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


_SIM_KEYS = {
    "population_size",
    "n_sims",
    "sample_size",
    "reference_size",
    "methods",
    "bootstrap_replicates",
    "bootstrap_sims",
    "forest",
    "logistic_stepwise",
    "dump_replicates",
    "output_dir",
    "seed",
}


def load_simulate_config(path=None, overrides: dict | None = None) -> SimulateRunConfig:
    raw = _load_yaml(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    where = str(path) if path is not None else "simulate config"
    _require_keys(raw, _SIM_KEYS, set(), where)

    seed = _as_int(raw.get("seed", DEFAULT_SEED), f"{where}.seed")
    methods_raw = raw.get("methods", ["logistic", "cbps", "eb", "rf"])
    if not isinstance(methods_raw, list) or not methods_raw:
        raise ConfigError(f"{where}.methods: must be a non-empty list")
    methods = []
    for m in methods_raw:
        m = _as_str(m, f"{where}.methods")
        if m not in METHOD_ALIASES:
            raise ConfigError(f"{where}.methods: unknown method {m!r}")
        methods.append(METHOD_ALIASES[m])

    boot_sims = raw.get("bootstrap_sims")
    return SimulateRunConfig(
        population_size=_as_int(raw.get("population_size", 40_000), f"{where}.population_size"),
        n_sims=_as_int(raw.get("n_sims", 1_000), f"{where}.n_sims"),
        sample_size=_as_int(raw.get("sample_size", 500), f"{where}.sample_size"),
        reference_size=_as_int(raw.get("reference_size", 5_000), f"{where}.reference_size"),
        methods=tuple(methods),
        bootstrap_replicates=_as_int(
            raw.get("bootstrap_replicates", 0), f"{where}.bootstrap_replicates"
        ),
        bootstrap_sims=None if boot_sims is None else _as_int(boot_sims, f"{where}.bootstrap_sims"),
        forest=parse_forest_config(raw.get("forest"), seed, f"{where}.forest"),
        logistic_stepwise=_as_bool(
            raw.get("logistic_stepwise", False), f"{where}.logistic_stepwise"
        ),
        dump_replicates=_as_bool(raw.get("dump_replicates", False), f"{where}.dump_replicates"),
        output_dir=_as_str(raw.get("output_dir", "."), f"{where}.output_dir"),
        seed=seed,
        raw=raw,
    )
