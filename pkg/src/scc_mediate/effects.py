"""Mediation effect decomposition on the log odds-ratio scale.

Natural direct effect (NDE): the exposure contrast in the outcome model
at a fixed covariate pattern (exposure-covariate interactions included,
mediator contributions cancel). Natural indirect effect (NIE): the
closed-form binary-mediator expression built from the two mediator-model
linear predictors and the mediator's outcome coefficient. Total effect
is their sum and the proportion mediated is NIE / total, all on the log
odds-ratio scale, with delta-method standard errors from the joint fit
covariance. Requires a mediator that does not interact with other
variables in the outcome model.
"""

from dataclasses import dataclass

import numpy as np

from .data_model import design_row
from .exceptions import DataError
from .logistic import expit, log1pexp


@dataclass(frozen=True)
class EffectEstimate:
    contrast: tuple
    covariate_pattern: dict
    nde: float
    nie: float
    total: float
    prop_mediated: float
    se_nde: float
    se_nie: float
    se_pm: float


def _require_plain_mediator(part):
    if part.d_beta1 != 1:
        raise DataError(
            "effect decomposition requires a mediator with no interaction "
            f"terms in the outcome model (found {part.d_beta1} "
            "mediator-involving columns)")


def _rows_at(info, exposure, level, pattern):
    assignments = dict(pattern)
    assignments[exposure] = level
    return design_row(info, assignments)


def compute_effects(fit, exposure, a1, a0, pattern=None):
    """NDE/NIE/total/proportion-mediated for an exposure contrast.

    ``pattern`` fixes the remaining covariates (reference levels / zeros
    by default). Standard errors are delta-method, using the analytic
    Jacobian of the three summaries and the full joint covariance, so
    the first-step uncertainty propagates into the NIE.
    """
    part = fit.part
    _require_plain_mediator(part)
    info = part.info
    pattern = dict(pattern or {})
    if exposure not in info.categorical and exposure not in info.numeric:
        raise DataError(f"unknown exposure variable '{exposure}'")

    theta = fit.theta_hat
    beta_m = float(theta.beta1[0])
    x_y0_1, x_m_1 = _rows_at(info, exposure, a1, pattern)
    x_y0_0, x_m_0 = _rows_at(info, exposure, a0, pattern)

    c0 = x_y0_1 - x_y0_0
    nde = float(c0 @ theta.beta0)

    eta1 = float(x_m_1 @ theta.delta)
    eta0 = float(x_m_0 @ theta.delta)
    nie = float(log1pexp(eta0) + log1pexp(eta1 + beta_m)
                - log1pexp(eta1) - log1pexp(eta0 + beta_m))
    total = nde + nie

    # delta-method Jacobians in theta order (beta0 | beta1 | delta)
    d = part.d_theta
    j_nde = np.zeros(d)
    j_nde[:part.d_beta0] = c0
    j_nie = np.zeros(d)
    j_nie[part.d_beta0] = expit(eta1 + beta_m) - expit(eta0 + beta_m)
    j_nie[part.d_beta:] = (x_m_0 * (expit(eta0) - expit(eta0 + beta_m))
                           + x_m_1 * (expit(eta1 + beta_m) - expit(eta1)))

    cov = fit.covariance
    se_nde = float(np.sqrt(max(j_nde @ cov @ j_nde, 0.0)))
    se_nie = float(np.sqrt(max(j_nie @ cov @ j_nie, 0.0)))
    if total != 0.0:
        pm = nie / total
        j_pm = (j_nie * nde - nie * j_nde) / total ** 2
        se_pm = float(np.sqrt(max(j_pm @ cov @ j_pm, 0.0)))
    else:
        pm = float("nan")
        se_pm = float("nan")
    return EffectEstimate(contrast=(a1, a0), covariate_pattern=pattern,
                          nde=nde, nie=nie, total=total, prop_mediated=pm,
                          se_nde=se_nde, se_nie=se_nie, se_pm=se_pm)


def contrast_vector(part, factor, level1, level0, given=None):
    """Outcome-model contrast c with c'beta the log odds-ratio of
    ``factor`` at ``level1`` vs ``level0``, other variables at ``given``."""
    info = part.info
    given = dict(given or {})
    x_hi_y0, _ = _rows_at(info, factor, level1, given)
    x_lo_y0, _ = _rows_at(info, factor, level0, given)
    c = np.zeros(part.d_beta)
    c[:part.d_beta0] = x_hi_y0 - x_lo_y0
    return c


def contrast_table(fit, factor_pairs):
    """Log odds-ratio contrasts with standard errors.

    ``factor_pairs`` is a list of dicts {"factor", "level1", "level0",
    "given" (optional conditioning assignments)}. Each row reports
    c'beta and sqrt(c'Vc) from the outcome block of the joint
    covariance.
    """
    part = fit.part
    beta = fit.theta_hat.beta
    cov_b = fit.covariance[:part.d_beta, :part.d_beta]
    rows = []
    for spec in factor_pairs:
        c = contrast_vector(part, spec["factor"], spec["level1"],
                            spec["level0"], spec.get("given"))
        est = float(c @ beta)
        se = float(np.sqrt(max(c @ cov_b @ c, 0.0)))
        rows.append({
            "factor": spec["factor"],
            "level1": spec["level1"],
            "level0": spec["level0"],
            "given": dict(spec.get("given") or {}),
            "estimate": est,
            "se": se,
        })
    return rows
