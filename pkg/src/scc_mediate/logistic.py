"""Numerically stable logistic primitives and a weighted IRLS fitter.

All estimators in the package reduce to logistic fits with per-unit
offsets and/or per-unit weights, so this is the shared computational
substrate. Probabilities are always computed through ``log1p`` /
log-sum-exp forms; ``exp(eta)`` is never formed for positive ``eta``.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .exceptions import NonConvergenceError, SingularDesignError

SCORE_TOL = 1e-8
LOGLIK_RTOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 20
SEPARATION_BOUND = 30.0


def expit(x):
    """Overflow-safe inverse logit, elementwise."""
    return special.expit(x)


def logit(p):
    """Log-odds of ``p``; raises for values outside the open unit interval."""
    p = np.asarray(p, dtype=float)
    if np.any(p <= 0.0) or np.any(p >= 1.0):
        raise ValueError("logit requires 0 < p < 1")
    out = special.logit(p)
    return float(out) if out.ndim == 0 else out


def log1pexp(x):
    """log(1 + exp(x)) without overflow for large positive x."""
    return np.logaddexp(0.0, x)


@dataclass
class GlmFit:
    coefficients: np.ndarray
    linear_predictor: np.ndarray
    fitted_prob: np.ndarray
    converged: bool
    iterations: int
    naive_information: np.ndarray
    loglik: float
    score_norm: float
    warnings: list = field(default_factory=list)


def _loglik(y, eta, weights):
    # y*eta - log(1+exp(eta)), stable on both tails
    return float(np.sum(weights * (y * eta - log1pexp(eta))))


def fit_logistic(X, y, offset=None, weights=None, max_iter=MAX_ITER,
                 score_tol=SCORE_TOL):
    """Weighted logistic maximum likelihood with a fixed offset.

    Newton/IRLS with step-halving whenever a step would decrease the
    log-likelihood. Convergence requires the score sup-norm below
    ``score_tol`` and a relative log-likelihood change below 1e-10.

    Raises SingularDesignError on a rank-deficient weighted design and
    NonConvergenceError (carrying the last iterate) after ``max_iter``
    iterations. Quasi-separation (|eta_i| beyond 30) is reported as a
    warning on the result rather than a failure.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, d = X.shape
    if d > n:
        raise SingularDesignError(f"more columns ({d}) than rows ({n})")
    offset = np.zeros(n) if offset is None else np.asarray(offset, dtype=float)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if np.any(weights <= 0):
        raise ValueError("weights must be strictly positive")

    beta = np.zeros(d)
    eta = X @ beta + offset
    ll = _loglik(y, eta, weights)
    converged = False
    it = 0
    score_norm = np.inf
    for it in range(1, max_iter + 1):
        p = expit(eta)
        score = X.T @ (weights * (y - p))
        score_norm = float(np.max(np.abs(score)))
        w_irls = weights * p * (1.0 - p)
        info = X.T @ (X * w_irls[:, None])
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(info, score, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning):
            raise SingularDesignError(
                "singular weighted information matrix") from None
        if not np.all(np.isfinite(step)):
            raise SingularDesignError("non-finite Newton step (rank deficiency)")

        # step-halving keeps the log-likelihood non-decreasing
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            beta_new = beta + scale * step
            eta_new = X @ beta_new + offset
            ll_new = _loglik(y, eta_new, weights)
            if ll_new >= ll - 1e-14:
                break
            scale *= 0.5
        rel_change = abs(ll_new - ll) / (abs(ll) + 1.0)
        beta, eta, ll = beta_new, eta_new, ll_new
        p = expit(eta)
        score = X.T @ (weights * (y - p))
        score_norm = float(np.max(np.abs(score)))
        if score_norm < score_tol and rel_change < LOGLIK_RTOL:
            converged = True
            break

    p = expit(eta)
    info = X.T @ (X * (weights * p * (1.0 - p))[:, None])
    warn = []
    if np.any(np.abs(eta) > SEPARATION_BOUND):
        warn.append("possible quasi-separation: |linear predictor| > 30")
    fit = GlmFit(coefficients=beta, linear_predictor=eta, fitted_prob=p,
                 converged=converged, iterations=it, naive_information=info,
                 loglik=ll, score_norm=score_norm, warnings=warn)
    if not converged:
        raise NonConvergenceError(
            f"IRLS did not converge in {max_iter} iterations "
            f"(score sup-norm {score_norm:.3e})",
            last_iterate=fit,
            diagnostics={"iterations": it, "score_norm": score_norm})
    return fit
