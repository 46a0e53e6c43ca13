"""Covariate balancing propensity score via two-step GMM.

The moment vector stacks the logistic score conditions with covariate
balance conditions aimed at the representative sample:

    score_j:   (C_i - P_i) x_ij
    balance_j: C_i (1 - P_i)/P_i f_ij - (1 - C_i) f_ij

with (1 - P)/P evaluated as exp(-x'gamma). Step 1 minimizes the quadratic
form under an identity weighting matrix starting from the plain logistic
MLE; step 2 re-weights by the inverse empirical moment covariance at the
step-1 solution (ridge-stabilized) and minimizes again.
"""

import numpy as np
from scipy import optimize
from scipy.special import expit

from ..design import DesignMatrix
from ..errors import ConvergenceError, DataError
from .base import CBPS, MembershipModel
from .logistic import _check_classes, fit_logistic_irls

_RIDGE = 1e-8
_MAX_ITER = 200
_EXP_CAP = 50.0  # exp(-psi) overflow guard; gradients stay finite


def _moments(gamma, X, C, F):
    psi = X @ gamma
    p = expit(psi)
    odds_inv = np.exp(np.clip(-psi, -_EXP_CAP, _EXP_CAP))
    g_score = (C - p)[:, None] * X
    if F is None:
        return g_score
    g_balance = (C * odds_inv)[:, None] * F - (1.0 - C)[:, None] * F
    return np.hstack([g_score, g_balance])


def _moment_mean_and_jac(gamma, X, C, F):
    n = X.shape[0]
    psi = X @ gamma
    p = expit(psi)
    odds_inv = np.exp(np.clip(-psi, -_EXP_CAP, _EXP_CAP))
    gbar_score = X.T @ (C - p) / n
    jac_score = -(X.T @ ((p * (1.0 - p))[:, None] * X)) / n
    if F is None:
        return gbar_score, jac_score
    coef = C * odds_inv
    gbar_bal = (F.T @ coef - F.T @ (1.0 - C)) / n
    jac_bal = -(F.T @ (coef[:, None] * X)) / n
    return np.concatenate([gbar_score, gbar_bal]), np.vstack([jac_score, jac_bal])


def fit_cbps(X: DesignMatrix, C, *, balance_columns=None, ridge: float = _RIDGE) -> MembershipModel:
    """Two-step GMM fit of the balance-augmented logistic model.

    ``balance_columns`` selects which design columns enter the balance
    moments; the default is every column of ``X`` (the paper's choice given
    an orthogonal-polynomial design). Pass an empty sequence for the
    exactly-identified, score-moments-only problem, which reproduces the
    plain logistic MLE.
    """
    C = _check_classes(C)
    Xv = X.values
    if balance_columns is None:
        F = Xv
        balance_names = list(X.column_names)
    else:
        balance_names = list(balance_columns)
        F = X.restrict(balance_names).values if balance_names else None

    start = fit_logistic_irls(X, C).parameters["gamma"]

    def objective(gamma, W):
        gbar, jac = _moment_mean_and_jac(gamma, Xv, C, F)
        Wg = W @ gbar
        return float(gbar @ Wg), 2.0 * (jac.T @ Wg)

    def minimize(gamma0, W):
        res = optimize.minimize(
            objective,
            gamma0,
            args=(W,),
            jac=True,
            method="BFGS",
            options={"maxiter": _MAX_ITER, "gtol": 1e-10},
        )
        if not np.all(np.isfinite(res.x)):
            raise ConvergenceError("CBPS produced non-finite coefficients")
        grad_norm = float(np.abs(res.jac).max())
        if not res.success and grad_norm > 1e-5:
            raise ConvergenceError(f"CBPS GMM did not converge: {res.message} (|grad|={grad_norm:.2e})")
        return res.x, float(res.fun)

    n_moments = Xv.shape[1] + (0 if F is None else F.shape[1])
    gamma1, j1 = minimize(start, np.eye(n_moments))

    g = _moments(gamma1, Xv, C, F)
    S = g.T @ g / g.shape[0]
    try:
        W2 = np.linalg.inv(S + ridge * np.eye(n_moments))
    except np.linalg.LinAlgError:
        raise ConvergenceError("singular moment covariance despite ridge") from None
    gamma2, j2 = minimize(gamma1, W2)

    gbar, _ = _moment_mean_and_jac(gamma2, Xv, C, F)
    balance_residuals = gbar[Xv.shape[1] :]
    return MembershipModel(
        method=CBPS,
        parameters={"gamma": gamma2},
        design=X,
        diagnostics={
            "objective_step1": j1,
            "objective_step2": j2,
            "balance_columns": balance_names if F is not None else [],
            "balance_residuals": balance_residuals,
            "score_residuals": gbar[: Xv.shape[1]],
        },
    )
