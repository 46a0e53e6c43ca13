"""Exception taxonomy.

Every error raised by the library derives from :class:`SelweightError` and
carries a stable ``kind`` string that the CLI surfaces in its machine-readable
error JSON.
"""


class SelweightError(Exception):
    """Base class for all library errors."""

    kind = "Error"


class ConfigError(SelweightError):
    """Invalid configuration, schema file, or CLI usage."""

    kind = "ConfigError"


class DataError(SelweightError):
    """Malformed or inconsistent input data."""

    kind = "DataError"


class UnknownLevelError(DataError):
    """A categorical cell holds a value not declared in the schema."""

    kind = "UnknownLevel"


class SchemaMismatchError(DataError):
    """Two tables that must share a schema do not."""

    kind = "SchemaMismatch"


class DesignError(SelweightError):
    """Design-matrix construction failed (empty selection, rank-0 expansion)."""

    kind = "DesignError"


class RankDeficiencyError(SelweightError):
    """Design matrix is rank deficient on the rows used for fitting."""

    kind = "RankDeficiency"


class SeparationError(SelweightError):
    """Perfect (or quasi-perfect) separation in a logistic fit."""

    kind = "Separation"


class ConvergenceError(SelweightError):
    """An iterative solver exhausted its iteration budget."""

    kind = "Convergence"


class InfeasibleError(SelweightError):
    """Entropy-balancing targets lie outside the achievable moment set."""

    kind = "Infeasible"


class DegenerateFeaturesError(SelweightError):
    """All candidate split features are constant."""

    kind = "DegenerateFeatures"


class ExtremeWeightsError(SelweightError):
    """Estimated weights exceed the configured max-ratio guard."""

    kind = "ExtremeWeights"


class UnsupportedForProposedVarianceError(SelweightError):
    """Weight method has no tractable score for the stacked variance."""

    kind = "UnsupportedForProposedVariance"
