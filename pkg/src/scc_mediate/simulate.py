"""Monte Carlo engine: population generation, case-control sampling,
estimator comparison and summary metrics.

Because every scenario covariate is categorical, a finite population is
fully described by its joint cell counts. The replicate loop therefore
draws one multinomial (cell counts), one binomial per cell (outcomes)
and two multivariate hypergeometric vectors (the case-control sample) —
a draw whose joint distribution is identical to materializing every
population row, at a cost independent of population size. Full-size
(30M-unit) replicates run in milliseconds, so ``paper_scale`` runs are
practical even for the simulation harness. Row-level generators
(``generate_population``, ``scc_sample``, ``_streamed_scc_draw``) remain
available for desk-scale work and for validating the cell path against
brute force.

Replicates get pre-assigned independent RNG streams spawned from one
master seed, so results are bit-reproducible regardless of how many
workers run them.
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import mest, mle, weighting
from .correction import PrevalenceDesign
from .data_model import Dataset, build_design, parse_formula
from .exceptions import ConfigError, DataError, SccMediateError
from .logistic import expit
from .mle import MlOptions

STREAM_BLOCK = 1_000_000
STREAM_THRESHOLD = 2_000_000
Z95 = 1.959963984540054
INSTABILITY_FACTOR = 10.0


@dataclass(frozen=True)
class SimScenario:
    """Generative design for one simulation study.

    ``covariate_dist`` maps covariate name -> {level: probability}.
    ``beta_true`` follows the design column order (intercept, covariate
    blocks in formula order, mediator-involving columns last).
    """

    name: str
    covariate_dist: dict
    beta_true: tuple
    delta_true: tuple
    outcome_formula: str
    mediator_formula: str
    mediator: str = "gas"
    population_size: int = 300_000
    n_cases: int = 100
    n_controls: int = 500
    n_replicates: int = 500
    seed: int = 20260826

    def __post_init__(self):
        for name, dist in self.covariate_dist.items():
            total = sum(dist.values())
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(
                    f"probabilities for '{name}' sum to {total}, not 1")

    @property
    def theta_true(self):
        return np.asarray(tuple(self.beta_true) + tuple(self.delta_true))

    def formula(self):
        return parse_formula(self.outcome_formula, self.mediator_formula,
                             self.mediator)

    def to_dict(self):
        return {
            "name": self.name,
            "covariate_dist": self.covariate_dist,
            "beta_true": list(self.beta_true),
            "delta_true": list(self.delta_true),
            "outcome_formula": self.outcome_formula,
            "mediator_formula": self.mediator_formula,
            "mediator": self.mediator,
            "population_size": self.population_size,
            "n_cases": self.n_cases,
            "n_controls": self.n_controls,
            "n_replicates": self.n_replicates,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["beta_true"] = tuple(d["beta_true"])
        d["delta_true"] = tuple(d["delta_true"])
        return cls(**d)


_COVARIATE_DIST = {
    "ri": {"0": 0.73, "1": 0.16, "2": 0.11},
    "age": {"40-65": 0.66, "66-75": 0.19, "76+": 0.15},
}

_DESK_SHIFT = math.log(100.0)


def scenario_1(paper_scale=False, n_replicates=None, n_controls=500,
               seed=20260826):
    """Main-effects outcome model design."""
    intercept = -12.4 if paper_scale else -12.4 + _DESK_SHIFT
    scn = SimScenario(
        name="scenario-1",
        covariate_dist=_COVARIATE_DIST,
        beta_true=(intercept, 1.3, 2.2, 1.0, 0.7, 1.0),
        delta_true=(-3.3, 0.8, 0.8),
        outcome_formula="ri + age + gas",
        mediator_formula="ri",
        population_size=30_000_000 if paper_scale else 300_000,
        n_cases=100,
        n_controls=n_controls,
        n_replicates=n_replicates or (1000 if paper_scale else 500),
        seed=seed,
    )
    return scn


def scenario_2(paper_scale=False, n_replicates=None, n_controls=500,
               seed=20260826):
    """Exposure-by-age interaction outcome model design.

    Coefficients are listed in design column order: the interaction
    block runs ri[1]:age[66-75], ri[1]:age[76+], ri[2]:age[66-75],
    ri[2]:age[76+].
    """
    intercept = -13.1 if paper_scale else -13.1 + _DESK_SHIFT
    return SimScenario(
        name="scenario-2",
        covariate_dist=_COVARIATE_DIST,
        beta_true=(intercept, 0.9, 2.7, 0.9, 1.5, 1.2, -0.5, -0.6, -1.6, 1.0),
        delta_true=(-3.3, 0.8, 0.8),
        outcome_formula="ri + age + ri:age + gas",
        mediator_formula="ri",
        population_size=30_000_000 if paper_scale else 300_000,
        n_cases=100,
        n_controls=n_controls,
        n_replicates=n_replicates or (1000 if paper_scale else 500),
        seed=seed,
    )


BUILTIN_SCENARIOS = {"1": scenario_1, "2": scenario_2}


# ---------------------------------------------------------------------------
# Population generation and sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Population:
    covariates: dict
    categorical: dict
    m: np.ndarray
    y: np.ndarray
    prevalence: float  # realized mean of y, exact by construction

    @property
    def size(self):
        return self.y.shape[0]


def _draw_block(scn, rng, size):
    """One block of covariates, mediator and outcome draws."""
    covs = {}
    for name, dist in scn.covariate_dist.items():
        levels = list(dist)
        covs[name] = rng.choice(np.array(levels, dtype=object), size=size,
                                p=list(dist.values())).astype(str)
    dataset = Dataset(y=np.zeros(size, dtype=int), m=np.zeros(size, dtype=int),
                      stratum=None, covariates=covs,
                      categorical={n: tuple(sorted(d)) for n, d in
                                   scn.covariate_dist.items()})
    part = build_design(dataset, scn.formula())
    beta = np.asarray(scn.beta_true)
    delta = np.asarray(scn.delta_true)
    eta_m = part.X_m @ delta
    m = (rng.random(size) < expit(eta_m)).astype(int)
    beta0 = beta[:part.d_beta0]
    beta1 = beta[part.d_beta0:]
    eta_y = part.X_y0 @ beta0 + m * (part.Xbar_y0 @ beta1)
    y = (rng.random(size) < expit(eta_y)).astype(int)
    return covs, m, y


def generate_population(scn, seed):
    """Materialize a full population (intended for desk-scale sizes)."""
    rng = np.random.default_rng(seed)
    covs, m, y = _draw_block(scn, rng, scn.population_size)
    n_cases = int(y.sum())
    if n_cases < scn.n_cases:
        raise DataError(
            f"population realized only {n_cases} cases, need {scn.n_cases}; "
            "re-draw with a new seed or a larger population")
    return Population(covariates=covs,
                      categorical={n: tuple(sorted(d)) for n, d in
                                   scn.covariate_dist.items()},
                      m=m, y=y,
                      prevalence=n_cases / scn.population_size)


def scc_sample(population, n_cases, n_controls, seed):
    """Uniform without-replacement sampling of cases and controls."""
    rng = np.random.default_rng(seed)
    case_idx = np.flatnonzero(population.y == 1)
    ctrl_idx = np.flatnonzero(population.y == 0)
    if case_idx.size < n_cases or ctrl_idx.size < n_controls:
        raise DataError("sampling quota exceeds available cases or controls")
    take_cases = rng.choice(case_idx, size=n_cases, replace=False)
    take_ctrls = rng.choice(ctrl_idx, size=n_controls, replace=False)
    take = np.concatenate([take_cases, take_ctrls])
    covs = {k: v[take] for k, v in population.covariates.items()}
    return Dataset(y=population.y[take], m=population.m[take], stratum=None,
                   covariates=covs, categorical=dict(population.categorical))


def _sample_ranks(rng, n_total, k):
    """k distinct uniform ranks in [0, n_total) without an arange."""
    chosen = set()
    while len(chosen) < k:
        chosen.update(rng.integers(0, n_total, size=k - len(chosen)).tolist())
    return np.sort(np.fromiter(chosen, dtype=np.int64, count=k))


def _streamed_scc_draw(scn, seed):
    """Generate-and-sample in blocks; only sampled rows are retained.

    Two passes over identical per-block RNG streams: the first counts
    cases/controls and keeps all case rows (rare by design), the second
    extracts the chosen control ranks. Returns (Dataset, exact pi).
    """
    n_blocks = math.ceil(scn.population_size / STREAM_BLOCK)
    block_seeds = np.random.SeedSequence(seed).spawn(n_blocks + 1)
    sampler_rng = np.random.default_rng(block_seeds[-1])

    case_rows = []
    ctrl_counts = []
    total_cases = 0
    for blk in range(n_blocks):
        size = min(STREAM_BLOCK, scn.population_size - blk * STREAM_BLOCK)
        covs, m, y = _draw_block(scn, np.random.default_rng(block_seeds[blk]),
                                 size)
        idx = np.flatnonzero(y == 1)
        case_rows.append(({k: v[idx] for k, v in covs.items()}, m[idx]))
        total_cases += idx.size
        ctrl_counts.append(size - idx.size)
    total_ctrls = scn.population_size - total_cases
    if total_cases < scn.n_cases:
        raise DataError(
            f"population realized only {total_cases} cases, need "
            f"{scn.n_cases}; re-draw with a new seed or a larger population")

    case_take = sampler_rng.choice(total_cases, size=scn.n_cases,
                                   replace=False)
    ctrl_ranks = _sample_ranks(sampler_rng, total_ctrls, scn.n_controls)

    # assemble cases
    case_covs = {k: np.concatenate([blk[0][k] for blk in case_rows])
                 for k in scn.covariate_dist}
    case_m = np.concatenate([blk[1] for blk in case_rows])
    case_covs = {k: v[case_take] for k, v in case_covs.items()}
    case_m = case_m[case_take]

    # second pass for controls
    offsets = np.concatenate([[0], np.cumsum(ctrl_counts)])
    ctrl_covs = {k: [] for k in scn.covariate_dist}
    ctrl_m = []
    for blk in range(n_blocks):
        lo, hi = offsets[blk], offsets[blk + 1]
        wanted = ctrl_ranks[(ctrl_ranks >= lo) & (ctrl_ranks < hi)] - lo
        if wanted.size == 0:
            continue
        size = min(STREAM_BLOCK, scn.population_size - blk * STREAM_BLOCK)
        covs, m, y = _draw_block(scn, np.random.default_rng(block_seeds[blk]),
                                 size)
        idx = np.flatnonzero(y == 0)[wanted]
        for k in ctrl_covs:
            ctrl_covs[k].append(covs[k][idx])
        ctrl_m.append(m[idx])

    covs = {k: np.concatenate([case_covs[k]] + ctrl_covs[k])
            for k in scn.covariate_dist}
    m = np.concatenate([case_m] + ctrl_m)
    y = np.concatenate([np.ones(scn.n_cases, dtype=int),
                        np.zeros(scn.n_controls, dtype=int)])
    dataset = Dataset(y=y, m=m, stratum=None, covariates=covs,
                      categorical={n: tuple(sorted(d)) for n, d in
                                   scn.covariate_dist.items()})
    return dataset, total_cases / scn.population_size


# ---------------------------------------------------------------------------
# Cell-count representation (exact, size-independent simulation)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellTable:
    """Joint (covariates, mediator) cells with model probabilities."""

    covariates: dict       # name -> array of level strings, one per cell
    categorical: dict
    m: np.ndarray          # mediator value per cell
    pr: np.ndarray         # P(covariates, M = m) per cell
    py: np.ndarray         # P(Y = 1 | covariates, M = m) per cell

    @property
    def n_cells(self):
        return self.m.shape[0]


def cell_table(scn):
    """Enumerate the joint generative distribution of one scenario."""
    names = list(scn.covariate_dist)
    grids = np.meshgrid(*[np.array(sorted(scn.covariate_dist[n]),
                                   dtype=object) for n in names],
                        indexing="ij")
    n_cov = grids[0].size
    covs = {n: np.tile(g.ravel().astype(str), 2)
            for n, g in zip(names, grids)}
    m = np.repeat([0, 1], n_cov)
    categorical = {n: tuple(sorted(d)) for n, d in scn.covariate_dist.items()}
    dataset = Dataset(y=np.zeros(2 * n_cov, dtype=int), m=m, stratum=None,
                      covariates=covs, categorical=categorical)
    part = build_design(dataset, scn.formula())
    beta = np.asarray(scn.beta_true)
    delta = np.asarray(scn.delta_true)
    p_m1 = expit(part.X_m @ delta)
    eta_y = (part.X_y0 @ beta[:part.d_beta0]
             + m * (part.Xbar_y0 @ beta[part.d_beta0:]))
    pr_cov = np.ones(n_cov)
    for n, g in zip(names, grids):
        dist = scn.covariate_dist[n]
        pr_cov *= np.array([dist[lev] for lev in g.ravel()])
    pr = np.tile(pr_cov, 2) * np.where(m == 1, p_m1, 1.0 - p_m1)
    return CellTable(covariates=covs, categorical=categorical, m=m, pr=pr,
                     py=expit(eta_y))


def _generate_cell_population(scn, seed):
    """Fresh finite population as (case, control) counts per cell.

    Multinomial cell counts followed by per-cell binomial outcomes give
    the same joint law as drawing each population member individually.
    Returns (cells, case_counts, control_counts, exact prevalence).
    """
    cells = cell_table(scn)
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(scn.population_size, cells.pr)
    case_counts = rng.binomial(counts, cells.py)
    total_cases = int(case_counts.sum())
    if total_cases < scn.n_cases:
        raise DataError(
            f"population realized only {total_cases} cases, need "
            f"{scn.n_cases}; re-draw with a new seed or a larger population")
    return (cells, case_counts, counts - case_counts,
            total_cases / scn.population_size)


def _scc_sample_cells(cells, case_counts, ctrl_counts, n_cases, n_controls,
                      seed):
    """Without-replacement case-control sample from cell counts."""
    if case_counts.sum() < n_cases or ctrl_counts.sum() < n_controls:
        raise DataError("sampling quota exceeds available cases or controls")
    rng = np.random.default_rng(seed)
    take_cases = rng.multivariate_hypergeometric(case_counts, n_cases)
    take_ctrls = rng.multivariate_hypergeometric(ctrl_counts, n_controls)
    reps = np.concatenate([take_cases, take_ctrls])
    covs = {k: np.repeat(np.tile(v, 2), reps)
            for k, v in cells.covariates.items()}
    return Dataset(y=np.repeat([1, 0], [n_cases, n_controls]),
                   m=np.repeat(np.tile(cells.m, 2), reps),
                   stratum=None, covariates=covs,
                   categorical=dict(cells.categorical))


# ---------------------------------------------------------------------------
# Replicates and metrics
# ---------------------------------------------------------------------------

_ESTIMATOR_TAGS = ("M", "ML", "W")


def design_metadata(scn):
    """Design labels/dimensions from a deterministic enumeration dataset."""
    names = list(scn.covariate_dist)
    grids = np.meshgrid(*[np.array(sorted(scn.covariate_dist[n]), dtype=object)
                          for n in names], indexing="ij")
    covs = {n: np.tile(g.ravel().astype(str), 2) for n, g in zip(names, grids)}
    n_cells = grids[0].size
    dataset = Dataset(y=np.tile([0, 1], n_cells),
                      m=np.repeat([0, 1], n_cells), stratum=None,
                      covariates=covs,
                      categorical={n: tuple(sorted(d)) for n, d in
                                   scn.covariate_dist.items()})
    return build_design(dataset, scn.formula())


def _run_replicate(args):
    scn, seed_seq, estimators, ml_opts = args
    child = seed_seq.spawn(2)
    cells, case_counts, ctrl_counts, pi = _generate_cell_population(
        scn, child[0])
    sample = _scc_sample_cells(cells, case_counts, ctrl_counts, scn.n_cases,
                               scn.n_controls, child[1])
    part = build_design(sample, scn.formula())
    p = scn.n_cases / (scn.n_cases + scn.n_controls)
    prev = PrevalenceDesign.from_rates([pi], [p])

    out = {}
    ml_seed = int(seed_seq.generate_state(1)[0])
    for tag in estimators:
        try:
            if tag == "M":
                fit = mest.fit_m(sample, part, prev)
            elif tag == "ML":
                fit = mle.fit_ml(sample, part, prev,
                                 opts=replace(ml_opts, seed=ml_seed))
            elif tag == "W":
                fit = weighting.fit_weighting(sample, part, prev)
            else:
                raise ConfigError(f"unknown estimator tag '{tag}'")
            out[tag] = {
                "estimates": fit.estimates,
                "se": fit.standard_errors,
                "dispersion": bool(fit.diagnostics.get("dispersion_flag",
                                                       False)),
                "error": None,
            }
        except SccMediateError as exc:
            out[tag] = {"estimates": None, "se": None, "dispersion": False,
                        "error": f"{type(exc).__name__}: {exc}"}
    return out


@dataclass
class SimMetrics:
    """Per-parameter, per-estimator Monte Carlo summaries.

    ``mc_sd`` is the population-form standard deviation over replicates
    so that rmse^2 = bias^2 + mc_sd^2 holds as an identity within a run.
    """

    scenario: str
    parameter_names: tuple
    truth: np.ndarray
    n_replicates: int
    per_estimator: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    instability: dict = field(default_factory=dict)
    dispersion_events: dict = field(default_factory=dict)
    se_ratio_median_mediator: dict = field(default_factory=dict)
    se_ratio_median_all: dict = field(default_factory=dict)

    def to_frame(self):
        rows = []
        for tag, stats in self.per_estimator.items():
            for j, name in enumerate(self.parameter_names):
                rows.append({
                    "scenario": self.scenario,
                    "parameter": name,
                    "estimator": tag,
                    "truth": self.truth[j],
                    "bias": stats["bias"][j],
                    "mc_sd": stats["mc_sd"][j],
                    "rmse": stats["rmse"][j],
                    "coverage": stats["coverage"][j],
                    "n_used": stats["n_used"],
                })
        return pd.DataFrame(rows)

    def summary_text(self):
        tags = list(self.per_estimator)
        lines = [f"Scenario: {self.scenario}  "
                 f"(replicates: {self.n_replicates})"]
        header = f"{'parameter':<26}" + "".join(
            f"{metric + ' ' + t:>12}" for metric in
            ("bias", "MC SD", "RMSE", "EC") for t in tags)
        lines.append(header)
        for j, name in enumerate(self.parameter_names):
            cells = []
            for metric in ("bias", "mc_sd", "rmse", "coverage"):
                for t in tags:
                    cells.append(f"{self.per_estimator[t][metric][j]:>12.3f}")
            lines.append(f"{name:<26}" + "".join(cells))
        for t in tags:
            extras = [f"failures={self.failures.get(t, 0)}"]
            if t in self.instability:
                extras.append(f"extreme-SE replicates={self.instability[t]}")
            if t in self.dispersion_events:
                extras.append(
                    f"multi-start dispersion={self.dispersion_events[t]}")
            lines.append(f"{t}: " + ", ".join(extras))
        for t, val in self.se_ratio_median_mediator.items():
            lines.append(f"median SE({t})/SE(W), mediator parameters: "
                         f"{val:.3f}")
        return "\n".join(lines)


def _worker_count():
    env = os.environ.get("SCC_MEDIATE_THREADS")
    if env:
        return max(1, int(env))
    return min(os.cpu_count() or 1, 8)


def run_monte_carlo(scn, estimators=("M", "ML", "W"), ml_options=None,
                    n_jobs=None):
    """Run the full replicate loop and aggregate Table-style metrics.

    Per-replicate estimator failures are recorded and excluded from the
    summaries; counts are reported in ``failures``. The instability
    counter increments when any estimated standard error exceeds 10x the
    weighting standard error for the same parameter.
    """
    estimators = tuple(estimators)
    for tag in estimators:
        if tag not in _ESTIMATOR_TAGS:
            raise ConfigError(f"unknown estimator tag '{tag}'")
    ml_options = ml_options or MlOptions(n_starts=3)
    seeds = np.random.SeedSequence(scn.seed).spawn(scn.n_replicates)
    jobs = [(scn, s, estimators, ml_options) for s in seeds]

    workers = n_jobs or _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate, jobs, chunksize=4))
    else:
        results = [_run_replicate(job) for job in jobs]

    probe_part = design_metadata(scn)
    names = probe_part.theta_labels
    truth = scn.theta_true
    d_beta = probe_part.d_beta

    metrics = SimMetrics(scenario=scn.name, parameter_names=names,
                         truth=truth, n_replicates=scn.n_replicates)
    for tag in estimators:
        est = np.array([r[tag]["estimates"] for r in results
                        if r[tag]["error"] is None])
        ses = np.array([r[tag]["se"] for r in results
                        if r[tag]["error"] is None])
        n_fail = sum(1 for r in results if r[tag]["error"] is not None)
        metrics.failures[tag] = n_fail
        if est.shape[0] == 0:
            continue
        bias = est.mean(axis=0) - truth
        mc_sd = est.std(axis=0, ddof=0)
        rmse = np.sqrt(((est - truth) ** 2).mean(axis=0))
        covered = (np.abs(est - truth) <= Z95 * ses).mean(axis=0)
        metrics.per_estimator[tag] = {
            "bias": bias, "mc_sd": mc_sd, "rmse": rmse, "coverage": covered,
            "n_used": est.shape[0],
        }
        if tag == "ML":
            metrics.dispersion_events[tag] = sum(
                1 for r in results
                if r[tag]["error"] is None and r[tag]["dispersion"])

    if "W" in estimators:
        for tag in estimators:
            if tag == "W":
                continue
            ratios = []
            extreme = 0
            for r in results:
                if r[tag]["error"] is not None or r["W"]["error"] is not None:
                    continue
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = r[tag]["se"] / r["W"]["se"]
                ratio = np.where(np.isfinite(ratio), ratio, np.inf)
                ratios.append(ratio)
                if np.any(ratio > INSTABILITY_FACTOR):
                    extreme += 1
            metrics.instability[tag] = extreme
            if ratios:
                ratios = np.array(ratios)
                metrics.se_ratio_median_all[tag] = float(np.median(ratios))
                metrics.se_ratio_median_mediator[tag] = float(
                    np.median(ratios[:, d_beta:]))
    return metrics
