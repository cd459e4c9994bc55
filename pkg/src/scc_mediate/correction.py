"""Identification machinery for (stratified) case-control samples.

Houses the per-stratum correction factors linking population and
sample-scale outcome coefficients, the additive logit offset that makes
the population mediator model fit selection-conditioned data, and the
marginalization term entering the selection-conditioned outcome model.

Every function here takes population-scale outcome coefficients. The
conversion to the sample scale is explicit (``adjust_to_star`` /
``unadjust_from_star``) and is never applied implicitly, because mixing
the two scales is the easiest mistake to make with this method.
"""

from dataclasses import dataclass

import numpy as np

from .data_model import expand_beta
from .exceptions import DataError
from .logistic import expit, log1pexp


@dataclass(frozen=True)
class PrevalenceDesign:
    """Per-stratum population prevalences and sampling correction factors.

    pi[b]: population P(Y=1 | stratum b), user supplied.
    p[b]: case fraction in the sample for stratum b, fixed by design.
    k[b] = {p/(1-p)} * {(1-pi)/pi}, the case/control selection ratio.
    """

    pi: np.ndarray
    p: np.ndarray
    k: np.ndarray
    log_k: np.ndarray

    @property
    def n_strata(self):
        return self.pi.shape[0]

    @classmethod
    def from_rates(cls, pi, p):
        pi = np.atleast_1d(np.asarray(pi, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        if pi.shape != p.shape:
            raise DataError("pi and p must have one entry per stratum")
        if np.any(pi <= 0) or np.any(pi >= 1):
            raise DataError("population prevalences must lie strictly in (0,1)")
        if np.any(p <= 0) or np.any(p >= 1):
            raise DataError("sample case fractions must lie strictly in (0,1)")
        log_k = (np.log(p) - np.log1p(-p)) + (np.log1p(-pi) - np.log(pi))
        return cls(pi=pi, p=p, k=np.exp(log_k), log_k=log_k)


def compute_prevalence_design(pi, case_counts, control_counts):
    """PrevalenceDesign from prevalences and per-stratum sample counts."""
    pi = np.atleast_1d(np.asarray(pi, dtype=float))
    cases = np.atleast_1d(np.asarray(case_counts, dtype=float))
    controls = np.atleast_1d(np.asarray(control_counts, dtype=float))
    if not (pi.shape == cases.shape == controls.shape):
        raise DataError("pi, case counts and control counts must align per stratum")
    for b in range(cases.shape[0]):
        if cases[b] <= 0 or controls[b] <= 0:
            raise DataError(
                f"degenerate stratum {b + 1}: needs at least one case and "
                "one control")
    return PrevalenceDesign.from_rates(pi, cases / (cases + controls))


@dataclass(frozen=True)
class Theta:
    """Joint coefficient vector (outcome block, mediator block)."""

    beta: np.ndarray
    delta: np.ndarray
    part: object  # DesignPartition

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        delta = np.asarray(self.delta, dtype=float)
        if beta.shape != (self.part.d_beta,):
            raise ValueError(f"beta has length {beta.shape}, "
                             f"expected {self.part.d_beta}")
        if delta.shape != (self.part.d_delta,):
            raise ValueError(f"delta has length {delta.shape}, "
                             f"expected {self.part.d_delta}")
        if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(delta))):
            raise ValueError("non-finite coefficients")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "delta", delta)

    @property
    def beta0(self):
        return self.beta[:self.part.d_beta0]

    @property
    def beta1(self):
        return self.beta[self.part.d_beta0:]

    @property
    def beta1_expanded(self):
        return expand_beta(self.beta1, self.part)

    @property
    def beta_plus(self):
        return self.beta0 + self.beta1_expanded

    @property
    def full(self):
        return np.concatenate([self.beta, self.delta])

    @classmethod
    def from_full(cls, vec, part):
        vec = np.asarray(vec, dtype=float)
        return cls(beta=vec[:part.d_beta], delta=vec[part.d_beta:], part=part)


def _check_strata(prev, part):
    if prev.n_strata != part.info.n_strata:
        raise DataError(
            f"prevalence design has {prev.n_strata} strata, design has "
            f"{part.info.n_strata}")


def star_shift(prev):
    """Additive shift turning population beta into sample-scale beta*.

    The intercept moves by log k_1. A stratum-b indicator coefficient
    moves by log(k_b / k_1), so that a stratum-b unit's linear predictor
    shifts by log k_b in total.
    """
    shift = np.zeros(prev.n_strata)
    shift[0] = prev.log_k[0]
    shift[1:] = prev.log_k[1:] - prev.log_k[0]
    return shift


def adjust_to_star(theta, prev):
    """Sample-scale outcome coefficients beta* from a population-scale Theta."""
    _check_strata(prev, theta.part)
    beta_star = theta.beta.copy()
    beta_star[:prev.n_strata] += star_shift(prev)
    return beta_star


def unadjust_from_star(beta_star, prev):
    """Population-scale beta from sample-scale beta* (inverse of adjust)."""
    beta = np.asarray(beta_star, dtype=float).copy()
    if beta.shape[0] < prev.n_strata:
        raise DataError("coefficient vector shorter than intercept + "
                        "stratum indicator block")
    beta[:prev.n_strata] -= star_shift(prev)
    return beta


# ---------------------------------------------------------------------------
# Offset term for the mediator model
# ---------------------------------------------------------------------------

def offset_terms(y, X_y0, theta):
    """Vector of mediator-model logit offsets, one per row of X_y0.

    o = y*(eta_plus - eta_0) - [log(1+e^eta_plus) - log(1+e^eta_0)],
    with eta_0 / eta_plus the mediator-off / mediator-on outcome linear
    predictors on the population scale. Equals the log-ratio of outcome
    probabilities at M=1 vs M=0, evaluated in log1p-stable form.
    """
    y = np.asarray(y, dtype=float)
    eta0 = X_y0 @ theta.beta0
    eta_plus = X_y0 @ theta.beta_plus
    return y * (eta_plus - eta0) - (log1pexp(eta_plus) - log1pexp(eta0))


def offset_o(y, x_y0, theta):
    """Scalar offset for one unit; see ``offset_terms``."""
    x_y0 = np.asarray(x_y0, dtype=float)
    if x_y0.shape != (theta.part.d_beta0,):
        raise ValueError(f"x_y0 has shape {x_y0.shape}, "
                         f"expected ({theta.part.d_beta0},)")
    return float(offset_terms(np.array([y]), x_y0[None, :], theta)[0])


def offset_slopes(X_y0, theta):
    """Per-unit derivatives of the offset w.r.t. the outcome coefficients.

    Returns (v0, v1): v0 multiplies the X_y0 columns (derivative through
    the mediator-free block), v1 + y multiplies the Xbar_y0 columns
    (derivative through the mediator block).
    """
    eta0 = X_y0 @ theta.beta0
    eta_plus = X_y0 @ theta.beta_plus
    v0 = expit(eta0) - expit(eta_plus)
    v1 = -expit(eta_plus)
    return v0, v1


# ---------------------------------------------------------------------------
# Mediator-marginalized outcome model
# ---------------------------------------------------------------------------

def _g_log_parts(X_y0, X_m, theta):
    """Stable log numerator/denominator of the marginalization term.

    The term is log{(q1 q2 q3 + q4) / (q2 q3 + q4)} with
    q1 = e^eta_tilde, q2 = e^eta_m, q3 = 1+e^eta_0, q4 = 1+e^eta_plus.
    Both sums are evaluated by log-sum-exp so no exponential is ever
    formed directly.
    """
    eta0 = X_y0 @ theta.beta0
    eta_tilde = X_y0 @ theta.beta1_expanded
    eta_plus = eta0 + eta_tilde
    eta_m = X_m @ theta.delta
    log_q3 = log1pexp(eta0)
    log_q4 = log1pexp(eta_plus)
    log_num = np.logaddexp(eta_tilde + eta_m + log_q3, log_q4)
    log_den = np.logaddexp(eta_m + log_q3, log_q4)
    return log_num, log_den, eta_tilde, eta_m, eta_plus, log_q3, log_q4


def g_terms(X_y0, X_m, theta):
    """Marginalization correction g, one value per row."""
    log_num, log_den = _g_log_parts(X_y0, X_m, theta)[:2]
    return log_num - log_den


def g_term(x_y0, x_m, theta):
    """Scalar marginalization correction for one unit."""
    x_y0 = np.asarray(x_y0, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    if x_y0.shape != (theta.part.d_beta0,):
        raise ValueError(f"x_y0 has shape {x_y0.shape}, "
                         f"expected ({theta.part.d_beta0},)")
    if x_m.shape != (theta.part.d_delta,):
        raise ValueError(f"x_m has shape {x_m.shape}, "
                         f"expected ({theta.part.d_delta},)")
    return float(g_terms(x_y0[None, :], x_m[None, :], theta)[0])


def g_derivatives(X_y0, X_m, theta):
    """Per-unit derivatives of g w.r.t. the three scalar anchors.

    Returns (d_int, d_med, d_delta_int): derivatives with respect to the
    outcome intercept, the mediator coefficient in the outcome model and
    the mediator-model intercept. The remaining coefficient derivatives
    are these scalars times the matching design columns. Each piece is a
    difference of probability-scale ratios, so values stay finite for
    arbitrarily large linear predictors.
    """
    log_num, log_den, eta_tilde, eta_m, eta_plus, log_q3, _ = \
        _g_log_parts(X_y0, X_m, theta)
    eta0 = X_y0 @ theta.beta0
    # d/d(intercept): through eta_0 and eta_plus
    d_int = (np.exp(eta_tilde + eta_m + eta0 - log_num)
             + np.exp(eta_plus - log_num)
             - np.exp(eta_m + eta0 - log_den)
             - np.exp(eta_plus - log_den))
    # d/d(mediator coefficient): through eta_tilde and eta_plus
    d_med = (np.exp(eta_tilde + eta_m + log_q3 - log_num)
             + np.exp(eta_plus - log_num)
             - np.exp(eta_plus - log_den))
    # d/d(mediator-model intercept): through eta_m
    d_delta_int = (np.exp(eta_tilde + eta_m + log_q3 - log_num)
                   - np.exp(eta_m + log_q3 - log_den))
    return d_int, d_med, d_delta_int


def marginal_logits(X_y0, X_m, strata, theta, prev):
    """Selection-conditioned, mediator-marginalized outcome logits.

    Row-wise: x_y0' beta0 + log k_b + g(x_y0, x_m). The log k_b term is
    applied from the stratum labels directly, which is equivalent to
    evaluating the mediator-free block at its sample-scale coefficients.
    """
    _check_strata(prev, theta.part)
    strata = np.asarray(strata, dtype=int)
    return (X_y0 @ theta.beta0 + prev.log_k[strata - 1]
            + g_terms(X_y0, X_m, theta))


def marginal_outcome_logit(x_y0, x_m, theta, prev, stratum=1):
    """Scalar version of ``marginal_logits`` for one unit."""
    x_y0 = np.asarray(x_y0, dtype=float)
    x_m = np.asarray(x_m, dtype=float)
    return float(marginal_logits(x_y0[None, :], x_m[None, :],
                                 np.array([stratum]), theta, prev)[0])
