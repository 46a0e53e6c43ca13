"""Entropy balancing: KL-minimal weights under exact moment constraints.

Minimizes sum_i w_i log(w_i / b_i) over the convenience rows subject to
sum_i w_i f_j(x_i) = target_j for every moment column and sum_i w_i = 1,
w_i > 0. The strictly convex dual in the multipliers lambda,

    phi(lambda) = log sum_i b_i exp(lambda' (f_i - t)),

is solved by Newton's method with backtracking; the gradient of phi is the
constraint violation, so convergence is checked directly against the
balance tolerance. Moment columns are powers 1..D of each continuous
covariate plus the degree-1 reference-coded indicator columns (indicator
powers are redundant and excluded).
"""

import numpy as np
from scipy.special import logsumexp

from ..data_model import DataTable
from ..errors import ConvergenceError, DataError, InfeasibleError
from .base import ENTROPY_BALANCING, MembershipModel

CONSTRAINT_TOL = 1e-8
_MAX_ITER = 500
_LAMBDA_BOUND = 1e4


def moment_columns(table: DataTable, variables, degree: int = 3):
    """Build the f-columns for entropy balancing over ``variables``.

    Returns (names, matrix). Continuous variables contribute x, x^2, ...,
    x^degree; categorical variables contribute their non-reference
    indicators only once (higher powers of an indicator equal the
    indicator).
    """
    if degree < 1:
        raise DataError("moment degree must be at least 1")
    names: list[str] = []
    cols: list[np.ndarray] = []
    for name in variables:
        var = table.var(name)
        col = table.column(name)
        if var.is_categorical:
            for code, level in enumerate(var.levels):
                if level == var.reference:
                    continue
                names.append(f"{name}={level}")
                cols.append((col == code).astype(np.float64))
        else:
            for d in range(1, degree + 1):
                names.append(name if d == 1 else f"{name}^{d}")
                cols.append(col.astype(np.float64) ** d)
    if not cols:
        raise DataError("no moment columns for entropy balancing")
    return names, np.column_stack(cols)


def fit_entropy_balancing(
    f_conv: np.ndarray,
    target_moments: np.ndarray,
    base: np.ndarray | None = None,
    *,
    constraint_names=None,
    tol: float = CONSTRAINT_TOL,
) -> MembershipModel:
    """Solve the dual for weights w_i proportional to b_i exp(lambda' f_i).

    ``f_conv`` holds the moment columns evaluated on the convenience rows
    and ``target_moments`` the representative means those weighted moments
    must match exactly. The base weights default to uniform.
    """
    F = np.asarray(f_conv, dtype=np.float64)
    if F.ndim != 2:
        raise DataError("f_conv must be a 2-d array of moment columns")
    n, k = F.shape
    t = np.asarray(target_moments, dtype=np.float64)
    if t.shape != (k,):
        raise DataError("target_moments length must match the moment columns")
    if not np.all(np.isfinite(F)) or not np.all(np.isfinite(t)):
        raise DataError("non-finite moments")
    if base is None:
        b = np.full(n, 1.0 / n)
    else:
        b = np.asarray(base, dtype=np.float64)
        if b.shape != (n,) or np.any(b <= 0) or not np.all(np.isfinite(b)):
            raise DataError("base weights must be positive, finite, one per row")
        b = b / b.sum()
    log_b = np.log(b)

    # standardize the centered columns so the Newton system is well scaled
    Fc = F - t
    scale = np.maximum(np.abs(Fc).max(axis=0), 1e-12)
    Fs = Fc / scale

    lam_s = np.zeros(k)

    def dual_state(lam):
        logits = log_b + Fs @ lam
        log_z = logsumexp(logits)
        w = np.exp(logits - log_z)
        grad = Fs.T @ w  # scaled constraint violation
        return float(log_z), w, grad

    phi, w, grad = dual_state(lam_s)
    n_iter = 0
    for n_iter in range(1, _MAX_ITER + 1):
        violation = np.abs(grad * scale).max()  # back to raw units
        if violation < tol:
            break
        H = (Fs * w[:, None]).T @ Fs - np.outer(grad, grad)
        try:
            step = -np.linalg.solve(H + 1e-12 * np.eye(k), grad)
        except np.linalg.LinAlgError:
            raise InfeasibleError("singular dual Hessian; targets lie on the moment boundary") from None
        # backtracking on the dual objective
        alpha = 1.0
        for _ in range(60):
            cand = lam_s + alpha * step
            cand_phi, cand_w, cand_grad = dual_state(cand)
            if cand_phi <= phi + 1e-4 * alpha * float(grad @ step):
                break
            alpha *= 0.5
        else:
            raise InfeasibleError(
                "dual line search stalled; targets are infeasible for these rows"
            )
        lam_s, phi, w, grad = cand, cand_phi, cand_w, cand_grad
        if np.abs(lam_s / scale).max() > _LAMBDA_BOUND:
            raise InfeasibleError(
                "dual multipliers diverging with unmet constraints; "
                "targets lie outside the convex hull of the sample moments"
            )
    else:
        raise ConvergenceError(f"entropy balancing did not converge in {_MAX_ITER} iterations")

    lam = lam_s / scale
    achieved = F.T @ w
    names = list(constraint_names) if constraint_names is not None else [f"f{j}" for j in range(k)]
    return MembershipModel(
        method=ENTROPY_BALANCING,
        parameters={
            "lambda": lam,
            "base": b,
            "weights": w,
            "targets": t,
            "achieved_moments": achieved,
            "constraint_names": names,
        },
        design=None,
        diagnostics={
            "dual_objective": phi + float(lam @ t),
            "n_iter": n_iter,
            "max_violation": float(np.abs(achieved - t).max()),
        },
    )


def entropy_balance_from_tables(
    conv: DataTable,
    rep: DataTable,
    variables,
    degree: int = 3,
    base: np.ndarray | None = None,
) -> MembershipModel:
    """Fit EB weights matching convenience moments to representative means."""
    names, f_conv = moment_columns(conv, variables, degree)
    rep_names, f_rep = moment_columns(rep, variables, degree)
    if rep_names != names:
        raise DataError("convenience and representative moment columns disagree")
    targets = f_rep.mean(axis=0)
    model = fit_entropy_balancing(f_conv, targets, base, constraint_names=names)
    model.parameters["n_C"] = conv.n
    model.parameters["n_R"] = rep.n
    return model
