import numpy as np
import pytest

from scc_mediate.correction import Theta
from scc_mediate.data_model import (Dataset, build_design, parse_formula)
from scc_mediate.effects import (compute_effects, contrast_table,
                                 contrast_vector)
from scc_mediate.exceptions import DataError
from scc_mediate.mest import FitResult


def listeriosis_style_part(outcome="ri + age + gas", mediator_f="ri"):
    """Design metadata shaped like the application analysis."""
    ri = np.repeat(["0", "1", "2"], 12)
    age = np.tile(np.repeat(["40-65", "66-75", "76+"], 4), 3)
    m = np.tile([0, 1], 18)
    y = np.tile([0, 0, 1, 1], 9)
    data = Dataset(y=y, m=m, stratum=None,
                   covariates={"ri": ri, "age": age},
                   categorical={"ri": ("0", "1", "2"),
                                "age": ("40-65", "66-75", "76+")})
    formula = parse_formula(outcome, mediator_f, "gas")
    return build_design(data, formula)


def fixed_fit(beta, delta, part, cov=None):
    theta = Theta(beta=np.asarray(beta, float),
                  delta=np.asarray(delta, float), part=part)
    d = part.d_theta
    if cov is None:
        cov = np.eye(d) * 1e-4
    return FitResult(theta_hat=theta, beta_star_hat=theta.beta.copy(),
                     covariance=cov, method="M", converged=True,
                     diagnostics={})


# published no-interaction point estimates (M-estimation column)
BETA = [-16.951, 1.287, 2.190, 1.014, 0.711, 0.987]
DELTA = [-3.276, 0.844, 0.839]


class TestPublishedValues:
    def test_nie_ri1_vs_0(self):
        part = listeriosis_style_part()
        fit = fixed_fit(BETA, DELTA, part)
        est = compute_effects(fit, "ri", "1", "0")
        assert est.nie == pytest.approx(0.068, abs=0.002)
        assert est.nde == pytest.approx(1.287, abs=1e-12)

    def test_proportion_mediated(self):
        part = listeriosis_style_part()
        fit = fixed_fit(BETA, DELTA, part)
        pm1 = compute_effects(fit, "ri", "1", "0").prop_mediated
        pm2 = compute_effects(fit, "ri", "2", "0").prop_mediated
        assert pm1 == pytest.approx(0.050, abs=0.002)
        assert pm2 == pytest.approx(0.030, abs=0.002)

    def test_age_contrast(self):
        part = listeriosis_style_part()
        fit = fixed_fit(BETA, DELTA, part)
        rows = contrast_table(fit, [{"factor": "age", "level1": "76+",
                                     "level0": "66-75"}])
        assert rows[0]["estimate"] == pytest.approx(0.711 - 1.014, abs=1e-12)
        assert rows[0]["estimate"] == pytest.approx(-0.303, abs=1e-3)


class TestInvariants:
    def test_total_is_sum(self, scn1_fits):
        est = compute_effects(scn1_fits["M"], "ri", "2", "1")
        assert est.total == pytest.approx(est.nde + est.nie, abs=1e-12)

    def test_null_mediator_coefficient_kills_nie(self):
        part = listeriosis_style_part()
        beta = list(BETA)
        beta[-1] = 0.0
        fit = fixed_fit(beta, DELTA, part)
        est = compute_effects(fit, "ri", "1", "0")
        assert est.nie == pytest.approx(0.0, abs=1e-12)

    def test_pm_nan_when_total_zero(self):
        part = listeriosis_style_part()
        beta = [0.0] * 6
        delta = [0.0] * 3
        fit = fixed_fit(beta, delta, part)
        est = compute_effects(fit, "ri", "1", "0")
        assert est.total == 0.0
        assert np.isnan(est.prop_mediated)

    def test_unknown_exposure_raises(self, scn1_fits):
        with pytest.raises(DataError):
            compute_effects(scn1_fits["M"], "nope", "1", "0")

    def test_unknown_level_raises(self):
        part = listeriosis_style_part()
        fit = fixed_fit(BETA, DELTA, part)
        with pytest.raises(DataError):
            compute_effects(fit, "ri", "9", "0")

    def test_interaction_model_rejected_for_effects(self):
        part = listeriosis_style_part("ri + age + gas + ri:gas")
        beta = list(BETA) + [0.1, 0.2]
        fit = fixed_fit(beta, DELTA, part)
        with pytest.raises(DataError):
            compute_effects(fit, "ri", "1", "0")
        # contrasts remain available for interaction models
        rows = contrast_table(fit, [{"factor": "age", "level1": "76+",
                                     "level0": "66-75"}])
        assert np.isfinite(rows[0]["estimate"])


class TestDeltaMethod:
    def test_se_matches_parametric_bootstrap(self, scn1_fits):
        fit = scn1_fits["M"]
        est = compute_effects(fit, "ri", "1", "0")
        rng = np.random.default_rng(123)
        center = fit.theta_hat.full
        draws = rng.multivariate_normal(center, fit.covariance, size=4000)
        part = fit.part
        sims = np.empty((draws.shape[0], 2))
        for i, vec in enumerate(draws):
            e = compute_effects(
                fixed_fit(vec[:part.d_beta], vec[part.d_beta:], part),
                "ri", "1", "0")
            sims[i] = (e.nde, e.nie)
        sd = sims.std(axis=0)
        assert est.se_nde == pytest.approx(sd[0], rel=0.1)
        assert est.se_nie == pytest.approx(sd[1], rel=0.1)


class TestContrastVector:
    def test_levels_vs_reference(self):
        part = listeriosis_style_part()
        c = contrast_vector(part, "ri", "2", "1")
        beta = np.asarray(BETA)
        assert c @ beta == pytest.approx(2.190 - 1.287, abs=1e-12)

    def test_conditional_contrast_in_interaction_model(self):
        part = listeriosis_style_part("ri + age + ri:age + gas")
        # design order: int, ri1, ri2, a66, a76,
        #               ri1:a66, ri1:a76, ri2:a66, ri2:a76, gas
        beta = np.array([-17.259, 0.871, 2.696, 0.893, 1.471,
                         1.239, -0.441, -0.565, -1.536, 0.982])
        fit = fixed_fit(beta, [-3.276, 0.845, 0.841], part,
                        cov=np.eye(13) * 1e-4)
        rows = contrast_table(fit, [
            {"factor": "ri", "level1": "1", "level0": "0",
             "given": {"age": "66-75"}},
        ])
        # ri1 + ri1:a66 = 0.871 + 1.239 = 2.110 (published 2.110)
        assert rows[0]["estimate"] == pytest.approx(2.110, abs=1e-3)
