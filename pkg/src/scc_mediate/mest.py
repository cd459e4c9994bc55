"""Two-step estimation of the joint outcome/mediator coefficient vector.

Step 1 fits the outcome model to the sample by plain logistic ML (which
targets the sample-scale coefficients) and converts back to the
population scale. Step 2 fits the mediator model with the resulting
per-unit logit offset held fixed. The reported covariance is the full
joint sandwich, with the cross-derivative block that accounts for the
first-step estimate being plugged into the second step; the naive
second-step standard errors would be wrong.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import correction, logistic
from .correction import Theta
from .exceptions import EstimationError, SingularInformationError

PSI_TOL = 1e-6
CONDITION_LIMIT = 1e12


@dataclass
class FitResult:
    """Point estimates, covariance and diagnostics for one estimator."""

    theta_hat: Theta
    beta_star_hat: np.ndarray
    covariance: np.ndarray
    method: str
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def part(self):
        return self.theta_hat.part

    @property
    def parameter_names(self):
        return self.part.theta_labels

    @property
    def estimates(self):
        return self.theta_hat.full

    @property
    def standard_errors(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


def psi_contributions(theta, data, part, prev):
    """Per-unit estimating-function contributions, n x d_theta.

    Outcome block: x_y * (y - expit(x_y' beta*)), with beta* the
    sample-scale coefficients. Mediator block: x_m * (m - expit(x_m'
    delta + o)), with the offset evaluated at the population-scale beta.
    """
    beta_star = correction.adjust_to_star(theta, prev)
    p_y_star = logistic.expit(part.X_y @ beta_star)
    offs = correction.offset_terms(data.y, part.X_y0, theta)
    p_my = logistic.expit(part.X_m @ theta.delta + offs)
    s_y = part.X_y * (data.y - p_y_star)[:, None]
    s_m = part.X_m * (data.m - p_my)[:, None]
    return np.hstack([s_y, s_m])


def psi(theta, data, part, prev):
    """Joint estimating equation, summed over units."""
    return psi_contributions(theta, data, part, prev).sum(axis=0)


def a_matrix(theta, data, part, prev):
    """Mean Jacobian of the estimating function, d_theta x d_theta.

    Block lower-triangular: the outcome score does not involve the
    mediator coefficients, so the top-right block is exactly zero. The
    bottom-left block differentiates the mediator score through the
    offset.
    """
    n = data.n
    beta_star = correction.adjust_to_star(theta, prev)
    p_y_star = logistic.expit(part.X_y @ beta_star)
    offs = correction.offset_terms(data.y, part.X_y0, theta)
    p_my = logistic.expit(part.X_m @ theta.delta + offs)

    w_y = p_y_star * (1.0 - p_y_star)
    w_m = p_my * (1.0 - p_my)
    X_y = part.X_y
    h_yb = -(X_y.T @ (X_y * w_y[:, None]))
    h_md = -(part.X_m.T @ (part.X_m * w_m[:, None]))

    v0, v1 = correction.offset_slopes(part.X_y0, theta)
    d_mat = np.hstack([part.X_y0 * v0[:, None],
                       part.Xbar_y0 * (data.y + v1)[:, None]])
    h_mb = -(part.X_m.T @ (d_mat * w_m[:, None]))

    d_b, d_d = part.d_beta, part.d_delta
    out = np.zeros((d_b + d_d, d_b + d_d))
    out[:d_b, :d_b] = h_yb
    out[d_b:, :d_b] = h_mb
    out[d_b:, d_b:] = h_md
    return out / n


def b_matrix(theta, data, part, prev):
    """Mean outer product of per-unit estimating functions (PSD)."""
    contrib = psi_contributions(theta, data, part, prev)
    return contrib.T @ contrib / data.n


def sandwich_m(theta, data, part, prev):
    """Sandwich covariance (1/n) A^-1 B A^-T at ``theta``."""
    a = a_matrix(theta, data, part, prev)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularInformationError(
            f"near-singular Jacobian (condition estimate {cond:.3e})",
            condition=cond)
    b = b_matrix(theta, data, part, prev)
    a_inv = linalg.inv(a)
    cov = a_inv @ b @ a_inv.T / data.n
    return 0.5 * (cov + cov.T)


def fit_m(data, part, prev):
    """Two-step estimate with joint sandwich covariance."""
    try:
        outcome_fit = logistic.fit_logistic(part.X_y, data.y)
    except Exception as exc:  # noqa: BLE001 - tag with the failing step
        raise EstimationError(f"outcome-model step failed: {exc}",
                              step="outcome") from exc
    beta_star = outcome_fit.coefficients
    beta_hat = correction.unadjust_from_star(beta_star, prev)

    theta_beta = Theta(beta=beta_hat, delta=np.zeros(part.d_delta), part=part)
    offs = correction.offset_terms(data.y, part.X_y0, theta_beta)
    try:
        mediator_fit = logistic.fit_logistic(part.X_m, data.m, offset=offs)
    except Exception as exc:  # noqa: BLE001
        raise EstimationError(f"mediator-model step failed: {exc}",
                              step="mediator") from exc

    theta_hat = Theta(beta=beta_hat, delta=mediator_fit.coefficients, part=part)
    score = psi(theta_hat, data, part, prev)
    score_norm = float(np.max(np.abs(score)))
    cov = sandwich_m(theta_hat, data, part, prev)
    diagnostics = {
        "outcome_iterations": outcome_fit.iterations,
        "mediator_iterations": mediator_fit.iterations,
        "psi_sup_norm": score_norm,
        "warnings": outcome_fit.warnings + mediator_fit.warnings,
    }
    return FitResult(theta_hat=theta_hat, beta_star_hat=beta_star,
                     covariance=cov, method="M",
                     converged=score_norm < PSI_TOL,
                     diagnostics=diagnostics)
