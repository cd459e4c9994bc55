import numpy as np
import pytest

from scc_mediate import weighting
from scc_mediate.correction import PrevalenceDesign
from scc_mediate.logistic import fit_logistic
from scc_mediate.weighting import fit_weighting, sampling_weights


def test_weight_values(scn1_sample):
    data, prev = scn1_sample["data"], scn1_sample["prev"]
    w = sampling_weights(data, prev)
    b = data.stratum - 1
    want = np.where(data.y == 1, prev.pi[b] / prev.p[b],
                    (1 - prev.pi[b]) / (1 - prev.p[b]))
    np.testing.assert_allclose(w, want)


def test_unit_weights_reduce_to_plain_fits(scn1_sample):
    # pi == p makes every weight 1, so W coincides with unweighted ML
    data, part = scn1_sample["data"], scn1_sample["part"]
    cases, controls = data.case_control_counts()
    p = cases / (cases + controls)
    prev = PrevalenceDesign.from_rates(p, p)
    fit = fit_weighting(data, part, prev)
    plain_y = fit_logistic(part.X_y, data.y)
    plain_m = fit_logistic(part.X_m, data.m)
    np.testing.assert_allclose(fit.theta_hat.beta, plain_y.coefficients,
                               atol=1e-8)
    np.testing.assert_allclose(fit.theta_hat.delta, plain_m.coefficients,
                               atol=1e-8)


def test_joint_covariance_block_diagonal(scn1_fits, scn1_sample):
    fit = scn1_fits["W"]
    d_b = scn1_sample["part"].d_beta
    np.testing.assert_allclose(fit.covariance[:d_b, d_b:], 0.0, atol=1e-15)
    V = fit.covariance
    np.testing.assert_allclose(V, V.T, atol=1e-10)
    assert np.all(np.diag(V) > 0)


def test_method_tag(scn1_fits):
    assert scn1_fits["W"].method == "W"
    assert scn1_fits["M"].method == "M"
    assert scn1_fits["ML"].method == "ML"
