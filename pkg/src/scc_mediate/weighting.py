"""Weighting baseline: fit the population models directly with
case/control sampling weights.

Cases in stratum b get weight pi_b / p_b and controls get
(1 - pi_b) / (1 - p_b), undoing the sampling design in expectation. No
coefficient adjustment is applied and the two models are fit
separately, so the joint covariance is block diagonal, with a weighted
sandwich within each block.
"""

import numpy as np
from scipy import linalg

from . import correction, logistic
from .correction import Theta
from .exceptions import EstimationError
from .mest import FitResult


def sampling_weights(data, prev):
    """Per-unit weights from (outcome, stratum) only."""
    b = data.stratum - 1
    w_case = prev.pi[b] / prev.p[b]
    w_ctrl = (1.0 - prev.pi[b]) / (1.0 - prev.p[b])
    return np.where(data.y == 1, w_case, w_ctrl)


def _weighted_sandwich(X, y, fit, weights):
    """bread^-1 meat bread^-1 for one weighted logistic fit."""
    bread = fit.naive_information  # X' diag(w p (1-p)) X
    score_units = X * (weights * (y - fit.fitted_prob))[:, None]
    meat = score_units.T @ score_units
    bread_inv = linalg.inv(bread)
    cov = bread_inv @ meat @ bread_inv
    return 0.5 * (cov + cov.T)


def fit_weighting(data, part, prev):
    """Weighted fits of both population models with sandwich covariance."""
    w = sampling_weights(data, prev)
    try:
        outcome_fit = logistic.fit_logistic(part.X_y, data.y, weights=w)
    except Exception as exc:  # noqa: BLE001
        raise EstimationError(f"weighted outcome fit failed: {exc}",
                              step="outcome") from exc
    try:
        mediator_fit = logistic.fit_logistic(part.X_m, data.m, weights=w)
    except Exception as exc:  # noqa: BLE001
        raise EstimationError(f"weighted mediator fit failed: {exc}",
                              step="mediator") from exc

    theta_hat = Theta(beta=outcome_fit.coefficients,
                      delta=mediator_fit.coefficients, part=part)
    cov_b = _weighted_sandwich(part.X_y, data.y, outcome_fit, w)
    cov_d = _weighted_sandwich(part.X_m, data.m, mediator_fit, w)
    d_b, d_d = part.d_beta, part.d_delta
    cov = np.zeros((d_b + d_d, d_b + d_d))
    cov[:d_b, :d_b] = cov_b
    cov[d_b:, d_b:] = cov_d
    diagnostics = {
        "outcome_iterations": outcome_fit.iterations,
        "mediator_iterations": mediator_fit.iterations,
        "warnings": outcome_fit.warnings + mediator_fit.warnings,
    }
    return FitResult(theta_hat=theta_hat,
                     beta_star_hat=correction.adjust_to_star(theta_hat, prev),
                     covariance=cov, method="W",
                     converged=outcome_fit.converged and mediator_fit.converged,
                     diagnostics=diagnostics)
