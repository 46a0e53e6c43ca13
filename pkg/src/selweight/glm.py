"""Iteratively reweighted least squares for logistic models.

One Newton/IRLS core serves both the membership model (unweighted Bernoulli
likelihood) and the propensity-weighted outcome model (weights multiply each
row's score contribution). Convergence is declared when the largest score
component falls below ``score_tol`` or the relative deviance change falls
below ``dev_tol``; steps that increase the deviance are halved. Divergence
of the coefficients with a non-vanishing score is reported as separation.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, RankDeficiencyError, SeparationError

MAX_ITER = 100
SCORE_TOL = 1e-8
DEV_TOL = 1e-10
SEPARATION_BOUND = 30.0
MAX_HALVINGS = 32


@dataclass
class LogitFit:
    """Solution of a (possibly weighted) logistic score equation."""

    beta: np.ndarray
    mu: np.ndarray
    loglik: float
    deviance_trace: list[float]
    converged: bool
    n_iter: int

    @property
    def deviance(self) -> float:
        return self.deviance_trace[-1]


def weighted_loglik(eta: np.ndarray, y: np.ndarray, w: np.ndarray) -> float:
    # log(1 + e^eta) via logaddexp for stability at large |eta|
    return float(np.sum(w * (y * eta - np.logaddexp(0.0, eta))))


def fit_logit(
    X: np.ndarray,
    y: np.ndarray,
    sample_weight: np.ndarray | None = None,
    *,
    max_iter: int = MAX_ITER,
    score_tol: float = SCORE_TOL,
    dev_tol: float = DEV_TOL,
    separation_bound: float = SEPARATION_BOUND,
) -> LogitFit:
    """Solve sum_i w_i (y_i - mu_i) x_i = 0 for the logit link.

    The returned solution is invariant to rescaling all weights by a
    constant; internally the weights are normalized to mean one so the
    convergence thresholds are too.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, m = X.shape
    if sample_weight is None:
        w = np.ones(n)
    else:
        w = np.asarray(sample_weight, dtype=np.float64)
        if np.any(w <= 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        w = w / w.mean()

    if not (y.min() >= 0.0 and y.max() <= 1.0):
        raise ValueError("response must lie in [0, 1]")

    beta = np.zeros(m)
    eta = X @ beta
    mu = expit(eta)
    dev = -2.0 * weighted_loglik(eta, y, w)
    trace = [dev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        score = X.T @ (w * (y - mu))
        score_max = np.abs(score).max()
        if np.abs(beta).max() > separation_bound and score_max > score_tol:
            raise SeparationError(
                "coefficients diverging (max |coef| > "
                f"{separation_bound:g} with non-vanishing score); "
                "data are likely separated"
            )
        if score_max < score_tol:
            converged = True
            break

        wls = w * mu * (1.0 - mu)
        hess = X.T @ (wls[:, None] * X)
        try:
            delta = np.linalg.solve(hess, score)
        except np.linalg.LinAlgError:
            _raise_rank_or_fail(X)
            delta = np.linalg.lstsq(hess, score, rcond=None)[0]
        if not np.all(np.isfinite(delta)):
            _raise_rank_or_fail(X)
            raise ConvergenceError("non-finite Newton step")

        step = 1.0
        for _ in range(MAX_HALVINGS):
            cand = beta + step * delta
            cand_eta = X @ cand
            cand_dev = -2.0 * weighted_loglik(cand_eta, y, w)
            if cand_dev <= dev + 1e-12:
                break
            step *= 0.5
        beta, eta = cand, cand_eta
        mu = expit(eta)
        rel_change = abs(cand_dev - dev) / (abs(dev) + 0.1)
        dev = cand_dev
        trace.append(dev)
        if rel_change < dev_tol:
            converged = True
            break
    else:
        raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations")

    return LogitFit(
        beta=beta,
        mu=mu,
        loglik=weighted_loglik(eta, y, w),
        deviance_trace=trace,
        converged=True,
        n_iter=it,
    )


def _raise_rank_or_fail(X: np.ndarray) -> None:
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankDeficiencyError(
            f"design matrix has rank {np.linalg.matrix_rank(X)} < {X.shape[1]} columns"
        )
