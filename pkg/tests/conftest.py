"""Shared fixtures: one simulated scenario-1 sample with all three fits."""

import numpy as np
import pytest

from scc_mediate import mest, mle, weighting
from scc_mediate import simulate as sim
from scc_mediate.correction import compute_prevalence_design
from scc_mediate.data_model import build_design
from scc_mediate.mle import MlOptions


@pytest.fixture(scope="session")
def scn1():
    return sim.scenario_1()


@pytest.fixture(scope="session")
def scn1_sample(scn1):
    pop = sim.generate_population(scn1, 42)
    data = sim.scc_sample(pop, scn1.n_cases, scn1.n_controls, 43)
    part = build_design(data, scn1.formula())
    cases, controls = data.case_control_counts()
    prev = compute_prevalence_design(pop.prevalence, cases, controls)
    return {"data": data, "part": part, "prev": prev, "pop": pop}


@pytest.fixture(scope="session")
def scn1_fits(scn1_sample):
    s = scn1_sample
    return {
        "M": mest.fit_m(s["data"], s["part"], s["prev"]),
        "ML": mle.fit_ml(s["data"], s["part"], s["prev"],
                         opts=MlOptions(n_starts=3, seed=11)),
        "W": weighting.fit_weighting(s["data"], s["part"], s["prev"]),
    }


def make_enumeration_problem(rng, n_strata=2):
    """Fully enumerable population: binary exposure/confounder, strata.

    Returns the cell table (one row per (a, b, z, m, y) combination with
    its probability), the generating parameters, and the selection
    probabilities s[y, b] = P(W=1 | Y=y, B=b).
    """
    delta = rng.normal(0.0, 1.0, size=3)          # intercept, a, z
    beta = rng.normal(0.0, 1.0, size=4 + n_strata - 1)  # int, strata, a, z, m
    s_w = rng.uniform(0.05, 0.95, size=(2, n_strata))
    p_a = rng.uniform(0.2, 0.8)
    p_z = rng.uniform(0.2, 0.8)
    p_b = rng.dirichlet(np.ones(n_strata))

    rows = []
    for a in (0, 1):
        for b in range(1, n_strata + 1):
            for z in (0, 1):
                x_m = np.array([1.0, a, z])
                strat = np.zeros(n_strata - 1)
                if b > 1:
                    strat[b - 2] = 1.0
                x_y0 = np.concatenate([[1.0], strat, [a, z]])
                pm1 = 1.0 / (1.0 + np.exp(-x_m @ delta))
                p_cell = ((p_a if a else 1 - p_a)
                          * (p_z if z else 1 - p_z) * p_b[b - 1])
                for m in (0, 1):
                    eta_y = x_y0 @ beta[:-1] + m * beta[-1]
                    py1 = 1.0 / (1.0 + np.exp(-eta_y))
                    for y in (0, 1):
                        prob = (p_cell * (pm1 if m else 1 - pm1)
                                * (py1 if y else 1 - py1))
                        rows.append({"a": a, "b": b, "z": z, "m": m, "y": y,
                                     "x_m": x_m, "x_y0": x_y0, "prob": prob})
    return rows, {"delta": delta, "beta": beta}, s_w


def enumeration_prevalences(rows, s_w):
    """Exact per-stratum population prevalence and sample case fraction."""
    n_strata = s_w.shape[1]
    pi = np.zeros(n_strata)
    p = np.zeros(n_strata)
    for b in range(1, n_strata + 1):
        cell = [r for r in rows if r["b"] == b]
        mass = sum(r["prob"] for r in cell)
        mass_y1 = sum(r["prob"] for r in cell if r["y"] == 1)
        pi[b - 1] = mass_y1 / mass
        sel1 = mass_y1 * s_w[1, b - 1]
        sel0 = (mass - mass_y1) * s_w[0, b - 1]
        p[b - 1] = sel1 / (sel1 + sel0)
    return pi, p
