"""Design matrices: intercept, reference-coded indicators, and expansions.

Three expansions are supported:

* ``main_effects``: intercept, continuous columns as-is, categorical
  variables reference-coded into (levels - 1) indicators.
* ``second_order``: main effects plus squares of continuous columns and all
  pairwise products of non-intercept main columns, with constant and
  duplicate expansion columns removed.
* ``orthogonal_poly2``: each continuous variable replaced by degree-1 and
  degree-2 orthogonal polynomial columns built by the Stieltjes three-term
  recurrence on the observed values (mutually orthogonal, unit-normed, and
  orthogonal to the intercept); indicator columns unchanged.

A :class:`DesignBuilder` captures everything needed to encode new rows the
same way the fit rows were encoded (including the fitted polynomial
recurrence coefficients), which is what model prediction uses.
"""

from dataclasses import dataclass, field

import numpy as np

from .data_model import CombinedSample, DataTable, VariableSpec
from .errors import DesignError

INTERCEPT = "(intercept)"

MAIN_EFFECTS = "main_effects"
SECOND_ORDER = "second_order"
ORTHOGONAL_POLY2 = "orthogonal_poly2"
EXPANSIONS = (MAIN_EFFECTS, SECOND_ORDER, ORTHOGONAL_POLY2)

_DUP_TOL = 1e-12


@dataclass(frozen=True)
class PolyBasis:
    """Three-term recurrence coefficients for a degree-2 orthogonal basis.

    p1(x) = x - a1, p2(x) = (x - a2) p1(x) - b1; the fitted columns are
    p_k / sqrt(norm2_k) so their Gram matrix is the identity on the fit rows.
    """

    a1: float
    a2: float
    b1: float
    norm2_1: float
    norm2_2: float

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p1 = x - self.a1
        p2 = (x - self.a2) * p1 - self.b1
        return p1 / np.sqrt(self.norm2_1), p2 / np.sqrt(self.norm2_2)


def fit_poly_basis(x: np.ndarray) -> PolyBasis:
    n = x.shape[0]
    a1 = float(x.mean())
    p1 = x - a1
    norm2_1 = float(p1 @ p1)
    if norm2_1 <= 0.0:
        raise DesignError("orthogonal polynomial basis is degenerate (constant values)")
    a2 = float((x * p1 * p1).sum() / norm2_1)
    b1 = norm2_1 / n
    p2 = (x - a2) * p1 - b1
    norm2_2 = float(p2 @ p2)
    if norm2_2 <= norm2_1 * 1e-24:
        raise DesignError("orthogonal polynomial basis is degenerate (two distinct values)")
    return PolyBasis(a1=a1, a2=a2, b1=b1, norm2_1=norm2_1, norm2_2=norm2_2)


@dataclass(frozen=True)
class DesignBuilder:
    """Recipe for turning a table into a design matrix, reusable on new rows."""

    variables: tuple[VariableSpec, ...]
    expansion: str
    poly_bases: dict[str, PolyBasis] = field(default_factory=dict)
    kept_columns: tuple[str, ...] = ()

    def candidate_columns(self, table: DataTable):
        """All candidate columns in deterministic order, before filtering.

        Yields (name, parents, values). Parents name the main-effect columns
        a derived column is built from; mains and the intercept have none.
        """
        mains: list[tuple[str, np.ndarray, bool]] = []  # name, values, is_continuous
        for var in self.variables:
            col = table.column(var.name)
            if var.is_categorical:
                for code, level in enumerate(var.levels):
                    if level == var.reference:
                        continue
                    mains.append((f"{var.name}={level}", (col == code).astype(np.float64), False))
            else:
                mains.append((var.name, col.astype(np.float64), True))

        n = table.n
        out = [(INTERCEPT, (), np.ones(n))]
        if self.expansion == ORTHOGONAL_POLY2:
            for var in self.variables:
                if var.is_categorical:
                    continue
                basis = self.poly_bases[var.name]
                d1, d2 = basis.evaluate(table.column(var.name))
                out.append((f"poly({var.name},1)", (), d1))
                out.append((f"poly({var.name},2)", (), d2))
            for name, values, cont in mains:
                if not cont:
                    out.append((name, (), values))
            return out

        for name, values, _ in mains:
            out.append((name, (), values))
        if self.expansion == SECOND_ORDER:
            for name, values, cont in mains:
                if cont:
                    out.append((f"{name}^2", (name,), values * values))
            for i in range(len(mains)):
                for j in range(i + 1, len(mains)):
                    a, av, _ = mains[i]
                    b, bv, _ = mains[j]
                    out.append((f"{a}:{b}", (a, b), av * bv))
        return out

    def build(self, table: DataTable) -> np.ndarray:
        """Encode ``table`` with the fitted recipe, kept columns only."""
        by_name = {name: values for name, _, values in self.candidate_columns(table)}
        return np.column_stack([by_name[name] for name in self.kept_columns])


@dataclass(frozen=True)
class DesignMatrix:
    """An encoded matrix plus the recipe that produced it."""

    values: np.ndarray
    column_names: tuple[str, ...]
    column_parents: tuple[tuple[str, ...], ...]
    encoding: dict[str, tuple[int, ...]]
    expansion: str
    builder: DesignBuilder

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    def restrict(self, names) -> "DesignMatrix":
        """Sub-design containing only ``names``, in the given order."""
        names = tuple(names)
        pos = {c: i for i, c in enumerate(self.column_names)}
        missing = [c for c in names if c not in pos]
        if missing:
            raise DesignError(f"unknown design column(s) {missing}")
        idx = [pos[c] for c in names]
        builder = DesignBuilder(
            variables=self.builder.variables,
            expansion=self.builder.expansion,
            poly_bases=self.builder.poly_bases,
            kept_columns=names,
        )
        return DesignMatrix(
            values=self.values[:, idx],
            column_names=names,
            column_parents=tuple(self.column_parents[i] for i in idx),
            encoding=_encoding_for(names, self.builder.variables),
            expansion=self.expansion,
            builder=builder,
        )

    def rows(self, indices) -> np.ndarray:
        return self.values[np.asarray(indices, dtype=np.int64)]


def _encoding_for(names, variables) -> dict[str, tuple[int, ...]]:
    enc: dict[str, list[int]] = {}
    for var in variables:
        prefixes = (var.name, f"{var.name}=", f"{var.name}^", f"poly({var.name},")
        cols = [
            i
            for i, c in enumerate(names)
            if c == var.name or any(c.startswith(p) for p in prefixes[1:])
        ]
        if cols:
            enc[var.name] = tuple(cols)
    return enc


def _is_constant(values: np.ndarray) -> bool:
    return bool(values.max() == values.min())


def _unit_scaled(values: np.ndarray) -> np.ndarray:
    peak = np.abs(values).max()
    return values if peak == 0.0 else values / peak


def build_design_matrix(
    source: CombinedSample | DataTable,
    variables=None,
    expansion: str = MAIN_EFFECTS,
) -> DesignMatrix:
    """Build a design matrix over the selected variables of ``source``.

    Constant or duplicate columns produced by an expansion are removed
    (duplicates by max-abs difference below 1e-12 after unit max-abs
    scaling); main-effect columns are never removed, and a constant main
    column is an error since it makes the design unusable.
    """
    table = source.data if isinstance(source, CombinedSample) else source
    if variables is None:
        variables = [v.name for v in table.schema]
    variables = list(variables)
    if not variables:
        raise DesignError("empty variable selection")
    specs = tuple(table.var(name) for name in variables)
    if expansion not in EXPANSIONS:
        raise DesignError(f"unknown expansion {expansion!r}")
    if expansion == ORTHOGONAL_POLY2 and not any(not v.is_categorical for v in specs):
        raise DesignError("orthogonal_poly2 requires at least one continuous variable")

    poly_bases = {}
    if expansion == ORTHOGONAL_POLY2:
        poly_bases = {
            v.name: fit_poly_basis(table.column(v.name)) for v in specs if not v.is_categorical
        }
    builder = DesignBuilder(variables=specs, expansion=expansion, poly_bases=poly_bases)

    kept_names: list[str] = []
    kept_parents: list[tuple[str, ...]] = []
    kept_values: list[np.ndarray] = []
    kept_scaled: list[np.ndarray] = []
    for name, parents, values in builder.candidate_columns(table):
        derived = bool(parents) or name.startswith("poly(")
        if name != INTERCEPT and _is_constant(values):
            if derived:
                continue
            raise DesignError(f"main-effect column {name!r} is constant")
        if derived:
            scaled = _unit_scaled(values)
            if any(np.abs(scaled - prev).max() < _DUP_TOL for prev in kept_scaled):
                continue
            kept_scaled.append(scaled)
        else:
            kept_scaled.append(_unit_scaled(values))
        kept_names.append(name)
        kept_parents.append(tuple(parents))
        kept_values.append(values)

    if len(kept_names) < 2:
        raise DesignError("expansion produced no usable columns beyond the intercept")

    builder = DesignBuilder(
        variables=specs,
        expansion=expansion,
        poly_bases=poly_bases,
        kept_columns=tuple(kept_names),
    )
    return DesignMatrix(
        values=np.column_stack(kept_values),
        column_names=tuple(kept_names),
        column_parents=tuple(kept_parents),
        encoding=_encoding_for(kept_names, specs),
        expansion=expansion,
        builder=builder,
    )
