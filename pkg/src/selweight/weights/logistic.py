"""Logistic membership models: plain IRLS and forward stepwise by AIC."""

import numpy as np

from ..design import INTERCEPT, DesignMatrix
from ..errors import DataError, SelweightError
from ..glm import fit_logit
from .base import LOGISTIC, MembershipModel


def _check_classes(C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=np.float64)
    if C.min() == C.max():
        raise DataError("both membership classes must be present")
    return C


def fit_logistic_irls(X: DesignMatrix, C) -> MembershipModel:
    """Maximum-likelihood logistic fit of membership on the design columns."""
    C = _check_classes(C)
    fit = fit_logit(X.values, C)
    return MembershipModel(
        method=LOGISTIC,
        parameters={"gamma": fit.beta},
        design=X,
        diagnostics={
            "loglik": fit.loglik,
            "deviance": fit.deviance,
            "n_iter": fit.n_iter,
        },
    )


def aic(k: int, loglik: float) -> float:
    return 2.0 * k - 2.0 * loglik


def fit_logistic_stepwise(X_candidates: DesignMatrix, C) -> MembershipModel:
    """Forward selection from intercept-only, adding the column that most
    lowers AIC each round.

    Hierarchy rule: a product column becomes eligible only once every parent
    main effect is already included (squares once their base column is).
    Candidate fits that fail (separation, rank deficiency) are skipped and
    logged. The AIC trace and the skip log land in the diagnostics.
    """
    C = _check_classes(C)
    names = X_candidates.column_names
    if INTERCEPT not in names:
        raise DataError("candidate design must include the intercept")

    included = [INTERCEPT]
    current = fit_logit(X_candidates.restrict(included).values, C)
    current_aic = aic(len(included), current.loglik)
    trace = [(None, current_aic)]
    skipped: list[tuple[str, str]] = []

    while True:
        eligible = [
            (name, parents)
            for name, parents in zip(names, X_candidates.column_parents)
            if name not in included and all(p in included for p in parents)
        ]
        best = None
        for name, _ in eligible:
            cols = included + [name]
            try:
                cand = fit_logit(X_candidates.restrict(cols).values, C)
            except SelweightError as err:
                skipped.append((name, err.kind))
                continue
            cand_aic = aic(len(cols), cand.loglik)
            if best is None or (cand_aic, name) < (best[0], best[1]):
                best = (cand_aic, name, cand)
        if best is None or best[0] >= current_aic:
            break
        current_aic, added, current = best
        included.append(added)
        trace.append((added, current_aic))

    design = X_candidates.restrict(included)
    return MembershipModel(
        method=LOGISTIC,
        parameters={"gamma": current.beta},
        design=design,
        diagnostics={
            "loglik": current.loglik,
            "aic": current_aic,
            "aic_trace": trace,
            "skipped": skipped,
            "selected": list(included),
        },
    )
