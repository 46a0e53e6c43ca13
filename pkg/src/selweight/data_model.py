"""Schema-typed rectangular data and pseudopopulation construction.

A :class:`DataTable` is a column store validated against a declared schema:
continuous columns are float64, categorical columns are integer level codes.
Tables never contain missing values; ingestion either rejects or drops
incomplete rows. A design-weighted survey sample is expanded into a
representative pseudopopulation by integer frequency-weight replication, and
a convenience sample is stacked on top of it with a membership indicator.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, SchemaMismatchError, UnknownLevelError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class VariableSpec:
    """Declaration of one column: its name and measurement kind.

    Categorical variables carry an ordered tuple of levels plus a reference
    level used when building indicator columns. The reference defaults to the
    first declared level.
    """

    name: str
    kind: str
    levels: tuple[str, ...] | None = None
    reference: str | None = None

    def __post_init__(self):
        if not self.name or not self.name.strip():
            raise DataError("variable name must be non-empty")
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise DataError(f"unknown variable kind {self.kind!r} for {self.name!r}")
        if self.kind == CATEGORICAL:
            if not self.levels:
                raise DataError(f"categorical variable {self.name!r} declares no levels")
            if len(set(self.levels)) != len(self.levels):
                raise DataError(f"categorical variable {self.name!r} has duplicate levels")
            if self.reference is None:
                object.__setattr__(self, "reference", self.levels[0])
            elif self.reference not in self.levels:
                raise DataError(
                    f"reference level {self.reference!r} of {self.name!r} is not among its levels"
                )
        else:
            if self.levels is not None or self.reference is not None:
                raise DataError(f"continuous variable {self.name!r} must not declare levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


def _check_schema(schema) -> tuple[VariableSpec, ...]:
    schema = tuple(schema)
    if not schema:
        raise DataError("schema must declare at least one variable")
    names = [v.name for v in schema]
    if len(set(names)) != len(names):
        raise DataError("schema has duplicate variable names")
    return schema


@dataclass(frozen=True)
class DataTable:
    """Immutable rectangular data conforming to a schema, no missing values.

    ``columns`` maps each variable name to a read-only array: float64 for
    continuous variables, int64 level codes (indices into ``spec.levels``)
    for categorical ones. ``dropped_rows`` records how many incomplete rows
    ingestion removed; it is metadata and not part of table identity.
    """

    schema: tuple[VariableSpec, ...]
    columns: dict[str, np.ndarray]
    dropped_rows: int = field(default=0, compare=False)

    def __post_init__(self):
        schema = _check_schema(self.schema)
        object.__setattr__(self, "schema", schema)
        if set(self.columns) != {v.name for v in schema}:
            raise DataError("columns do not match schema names")
        n = None
        cols = {}
        for var in schema:
            arr = np.asarray(self.columns[var.name])
            if var.is_categorical:
                arr = arr.astype(np.int64, copy=False)
                if arr.size and (arr.min() < 0 or arr.max() >= len(var.levels)):
                    raise DataError(f"level code out of range in column {var.name!r}")
            else:
                arr = arr.astype(np.float64, copy=False)
                if arr.size and not np.all(np.isfinite(arr)):
                    raise DataError(f"non-finite value in continuous column {var.name!r}")
            if n is None:
                n = arr.shape[0]
            elif arr.shape[0] != n:
                raise DataError("ragged columns")
            arr = arr.copy()
            arr.flags.writeable = False
            cols[var.name] = arr
        if not n:
            raise DataError("table must have at least one row")
        object.__setattr__(self, "columns", cols)

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    def var(self, name: str) -> VariableSpec:
        for v in self.schema:
            if v.name == name:
                return v
        raise DataError(f"no variable named {name!r}")

    def column(self, name: str) -> np.ndarray:
        if name not in self.columns:
            raise DataError(f"no variable named {name!r}")
        return self.columns[name]

    def decoded(self, name: str) -> np.ndarray:
        """Categorical column as its level strings."""
        var = self.var(name)
        if not var.is_categorical:
            raise DataError(f"{name!r} is continuous")
        return np.asarray(var.levels, dtype=object)[self.columns[name]]

    def take(self, indices) -> "DataTable":
        idx = np.asarray(indices, dtype=np.int64)
        return DataTable(self.schema, {k: v[idx] for k, v in self.columns.items()})

    def select(self, names) -> "DataTable":
        names = list(names)
        schema = tuple(self.var(n) for n in names)
        return DataTable(schema, {n: self.columns[n] for n in names})

    def stack(self, other: "DataTable") -> "DataTable":
        if self.schema != other.schema:
            raise SchemaMismatchError("cannot stack tables with different schemas")
        cols = {
            v.name: np.concatenate([self.columns[v.name], other.columns[v.name]])
            for v in self.schema
        }
        return DataTable(self.schema, cols)


@dataclass(frozen=True)
class SurveySample:
    """A design-weighted survey sample: data plus per-row sampling weights.

    ``sampling_weight`` holds w_i = 1/pi_i, the number of population members
    each sampled row represents.
    """

    data: DataTable
    sampling_weight: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.sampling_weight, dtype=np.float64)
        if w.shape != (self.data.n,):
            raise DataError("sampling_weight length does not match table")
        if not np.all(np.isfinite(w)) or np.any(w <= 0):
            raise DataError("sampling weights must be positive and finite")
        w = w.copy()
        w.flags.writeable = False
        object.__setattr__(self, "sampling_weight", w)


@dataclass(frozen=True)
class Pseudopopulation:
    """A survey sample expanded by integer frequency-weight replication."""

    data: DataTable
    source_row: np.ndarray
    replication_count: np.ndarray

    def __post_init__(self):
        for name in ("source_row", "replication_count"):
            arr = np.asarray(getattr(self, name), dtype=np.int64).copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if int(self.replication_count.sum()) != self.data.n:
            raise DataError("replication counts do not sum to the expanded row count")

    @property
    def n_R(self) -> int:
        return self.data.n


@dataclass(frozen=True)
class CombinedSample:
    """Convenience rows (C=1) stacked over representative rows (C=0)."""

    data: DataTable
    membership: np.ndarray
    n_C: int
    n_R: int

    def __post_init__(self):
        m = np.asarray(self.membership, dtype=np.int64).copy()
        m.flags.writeable = False
        object.__setattr__(self, "membership", m)
        if m.shape != (self.data.n,):
            raise DataError("membership length does not match table")
        if self.n_C + self.n_R != self.data.n:
            raise DataError("n_C + n_R must equal the combined row count")
        if self.n_C < 1 or self.n_R < 1:
            raise DataError("both classes must be non-empty")

    @property
    def convenience_rows(self) -> np.ndarray:
        return np.flatnonzero(self.membership == 1)

    @property
    def representative_rows(self) -> np.ndarray:
        return np.flatnonzero(self.membership == 0)


MISSING_POLICIES = ("reject", "drop_rows")


def load_csv(path, schema, missing_policy: str = "reject") -> DataTable:
    """Read a UTF-8, comma-separated file with a header row into a DataTable.

    The empty string is the missing sentinel. Under ``reject`` any missing
    cell is an error; under ``drop_rows`` incomplete rows are removed and
    counted in the result's ``dropped_rows``. Header order need not match the
    schema, but the name sets must agree.
    """
    schema = _check_schema(schema)
    if missing_policy not in MISSING_POLICIES:
        raise DataError(f"unknown missing_policy {missing_policy!r}")

    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        raw_rows = [row for row in reader if row]

    header = [h.strip() for h in header]
    declared = {v.name for v in schema}
    unknown = [h for h in header if h not in declared]
    if unknown:
        raise DataError(f"{path}: unknown column(s) {unknown}")
    absent = sorted(declared - set(header))
    if absent:
        raise DataError(f"{path}: schema column(s) missing from file: {absent}")

    col_pos = {name: header.index(name) for name in declared}
    level_code = {
        v.name: {lev: i for i, lev in enumerate(v.levels)} for v in schema if v.is_categorical
    }

    kept: dict[str, list] = {v.name: [] for v in schema}
    dropped = 0
    for lineno, row in enumerate(raw_rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        cells = {name: row[pos].strip() for name, pos in col_pos.items()}
        if any(cell == "" for cell in cells.values()):
            if missing_policy == "drop_rows":
                dropped += 1
                continue
            raise DataError(f"{path}:{lineno}: missing value (policy=reject)")
        for var in schema:
            cell = cells[var.name]
            if var.is_categorical:
                try:
                    kept[var.name].append(level_code[var.name][cell])
                except KeyError:
                    raise UnknownLevelError(
                        f"{path}:{lineno}: value {cell!r} is not a declared level of {var.name!r}"
                    ) from None
            else:
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}:{lineno}: cannot parse {cell!r} as a number for {var.name!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataError(f"{path}:{lineno}: non-finite value for {var.name!r}")
                kept[var.name].append(value)

    if not kept[schema[0].name]:
        raise DataError(f"{path}: no complete rows after applying policy {missing_policy!r}")
    columns = {
        v.name: np.asarray(kept[v.name], dtype=np.int64 if v.is_categorical else np.float64)
        for v in schema
    }
    return DataTable(schema, columns, dropped_rows=dropped)


def expand_pseudopopulation(sample: SurveySample) -> Pseudopopulation:
    """Replicate each survey row ceil(w_i / min w) times.

    The minimum is taken over the rows actually present in ``sample`` (the
    observed analysis set), so the smallest-weight rows replicate exactly
    once.
    """
    counts = _replication_counts(sample.sampling_weight)
    source = np.repeat(np.arange(sample.data.n, dtype=np.int64), counts)
    return Pseudopopulation(
        data=sample.data.take(source),
        source_row=source,
        replication_count=counts,
    )


def _replication_counts(w: np.ndarray) -> np.ndarray:
    # IEEE division is exact whenever the real quotient is an integer, so
    # min-weight rows get exactly 1 and k*min rows get exactly k
    return np.ceil(w / w.min()).astype(np.int64)


def replication_inflation(sample: SurveySample) -> float:
    """Ratio sum(w*) / sum(w / min w): inflation from ceiling replication."""
    scaled = sample.sampling_weight / sample.sampling_weight.min()
    return float(_replication_counts(sample.sampling_weight).sum() / scaled.sum())


def as_pseudopopulation(table: DataTable) -> Pseudopopulation:
    """Treat an already-representative table as its own pseudopopulation."""
    n = table.n
    return Pseudopopulation(
        data=table,
        source_row=np.arange(n, dtype=np.int64),
        replication_count=np.ones(n, dtype=np.int64),
    )


def combine(convenience: DataTable, representative: Pseudopopulation) -> CombinedSample:
    """Stack convenience rows (C=1) over pseudopopulation rows (C=0).

    Both tables must agree exactly on the shared covariate schema (names,
    kinds, level sets, reference levels).
    """
    rep = representative.data
    if convenience.schema != rep.schema:
        conv_names = [v.name for v in convenience.schema]
        rep_names = [v.name for v in rep.schema]
        if conv_names != rep_names:
            raise SchemaMismatchError(
                f"column names differ: convenience={conv_names}, representative={rep_names}"
            )
        for a, b in zip(convenience.schema, rep.schema):
            if a != b:
                raise SchemaMismatchError(f"variable {a.name!r} declared differently: {a} vs {b}")
        raise SchemaMismatchError("schemas differ")
    data = convenience.stack(rep)
    membership = np.concatenate(
        [np.ones(convenience.n, dtype=np.int64), np.zeros(rep.n_R, dtype=np.int64)]
    )
    return CombinedSample(data=data, membership=membership, n_C=convenience.n, n_R=rep.n_R)
