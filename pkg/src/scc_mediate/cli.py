"""Command-line front end.

Subcommands:
  fit       estimate the joint models from a CSV file plus a JSON config
  effects   mediation decomposition / contrasts from a saved fit artifact
  simulate  run a Monte Carlo scenario and emit metric tables

Fit artifacts store both coefficient scales with explicit labels:
``beta_population`` (the target of inference) and ``beta_sample_scale``
(what a plain logistic fit of the outcome on this sample estimates).
Flags override config fields. Console output rounds to 6 significant
digits; CSV/JSON artifacts carry full double precision.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from . import correction, effects, mest, mle, simulate, weighting
from .correction import PrevalenceDesign, Theta, compute_prevalence_design
from .data_model import DesignInfo, DesignPartition, build_design, load_csv, \
    parse_formula
from .exceptions import ConfigError, SccMediateError
from .mest import FitResult
from .mle import MlOptions

_ESTIMATOR_SETS = {"m": ("M",), "ml": ("ML",), "w": ("W",),
                   "all": ("M", "ML", "W")}


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _load_config(args):
    config = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = json.load(fh)
    if args.data:
        config["data"] = args.data
    if args.pi:
        config.setdefault("prevalence", {})["pi"] = [
            float(x) for x in args.pi.split(",")]
    if args.estimator:
        config["estimators"] = args.estimator
    if args.seed is not None:
        config["seed"] = args.seed
    return config


def _run_estimators(tags, data, part, prev, seed):
    fits, errors = {}, {}
    for tag in tags:
        try:
            if tag == "M":
                fits[tag] = mest.fit_m(data, part, prev)
            elif tag == "ML":
                fits[tag] = mle.fit_ml(data, part, prev,
                                       opts=MlOptions(seed=seed))
            else:
                fits[tag] = weighting.fit_weighting(data, part, prev)
        except SccMediateError as exc:
            errors[tag] = f"{type(exc).__name__}: {exc}"
    return fits, errors


def save_fit_artifact(path, fits, part, prev):
    payload = {
        "design": part.info.to_dict(),
        "expand_map": part.expand_map.tolist(),
        "parameter_names": list(part.theta_labels),
        "prevalence": {"pi": prev.pi, "p": prev.p, "k": prev.k,
                       "log_k": prev.log_k},
        "estimators": {},
    }
    for tag, fit in fits.items():
        payload["estimators"][tag] = {
            "beta_population": fit.theta_hat.beta,
            "beta_sample_scale": fit.beta_star_hat,
            "delta": fit.theta_hat.delta,
            "covariance": fit.covariance,
            "converged": fit.converged,
            "diagnostics": fit.diagnostics,
        }
    _write_json(path, payload)


def load_fit_artifact(path):
    """Rebuild FitResult objects (matrix-free) from an artifact file."""
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    info = DesignInfo.from_dict(payload["design"])
    expand_map = np.asarray(payload["expand_map"], dtype=int)
    part = DesignPartition(
        X_y0=np.empty((0, len(info.y0_labels))),
        X_y1=np.empty((0, len(info.y1_labels))),
        X_m=np.empty((0, len(info.m_labels))),
        expand_map=expand_map, info=info)
    prev = PrevalenceDesign.from_rates(payload["prevalence"]["pi"],
                                       payload["prevalence"]["p"])
    fits = {}
    for tag, blob in payload["estimators"].items():
        theta = Theta(beta=np.asarray(blob["beta_population"]),
                      delta=np.asarray(blob["delta"]), part=part)
        fits[tag] = FitResult(
            theta_hat=theta,
            beta_star_hat=np.asarray(blob["beta_sample_scale"]),
            covariance=np.asarray(blob["covariance"]),
            method=tag, converged=bool(blob["converged"]),
            diagnostics=blob.get("diagnostics", {}))
    return fits, part, prev


def _coefficient_frame(fits):
    rows = []
    for tag, fit in fits.items():
        est = fit.estimates
        se = fit.standard_errors
        z = np.divide(est, se, out=np.full_like(est, np.nan), where=se > 0)
        p = 2.0 * stats.norm.sf(np.abs(z))
        for j, name in enumerate(fit.parameter_names):
            rows.append({"parameter": name, "estimator": tag,
                         "estimate": est[j], "se": se[j],
                         "z": z[j], "p": p[j]})
    return pd.DataFrame(rows)


def cmd_fit(args):
    config = _load_config(args)
    for key in ("data", "outcome", "mediator", "outcome_formula"):
        if key not in config:
            raise ConfigError(f"config is missing required field '{key}'")
    pi = config.get("prevalence", {}).get("pi")
    if pi is None:
        raise ConfigError("config is missing prevalence.pi")

    schema = {"outcome": config["outcome"], "mediator": config["mediator"]}
    if config.get("stratum"):
        schema["stratum"] = config["stratum"]
    if config.get("categorical"):
        schema["categorical"] = config["categorical"]
    data = load_csv(config["data"], schema)
    if len(pi) != data.n_strata:
        raise ConfigError(
            f"prevalence.pi has {len(pi)} entries but the data contain "
            f"{data.n_strata} strata "
            f"(labels: {', '.join(data.stratum_labels)})")

    formula = parse_formula(config["outcome_formula"],
                            config.get("mediator_formula", ""),
                            config["mediator"])
    part = build_design(data, formula)
    cases, controls = data.case_control_counts()
    prev = compute_prevalence_design(pi, cases, controls)

    tags = _ESTIMATOR_SETS[str(config.get("estimators", "all")).lower()]
    fits, errors = _run_estimators(tags, data, part, prev,
                                   int(config.get("seed", 0)))

    out_dir = Path(args.out or config.get("out", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    table = _coefficient_frame(fits)
    if not table.empty:
        table.to_csv(out_dir / "coefficients.csv", index=False)
        save_fit_artifact(out_dir / "fit.json", fits, part, prev)
        with pd.option_context("display.float_format", "{:.6g}".format):
            print(table.to_string(index=False))
    for tag, msg in errors.items():
        print(f"estimator {tag} failed: {msg}", file=sys.stderr)
    if errors or not fits:
        return 1
    return 0 if all(f.converged for f in fits.values()) else 1


# ---------------------------------------------------------------------------
# effects
# ---------------------------------------------------------------------------

def cmd_effects(args):
    fits, part, _prev = load_fit_artifact(args.fit)
    tags = (args.estimator.upper().split(",") if args.estimator
            else list(fits))
    for tag in tags:
        if tag not in fits:
            raise ConfigError(f"estimator '{tag}' not present in the artifact")
    pattern = json.loads(args.pattern) if args.pattern else {}

    if args.exposure is None:
        raise ConfigError("--exposure is required")
    info = part.info
    if args.pair:
        pairs = [tuple(p.split(",")) for p in args.pair]
    elif args.exposure in info.categorical:
        levels = info.categorical[args.exposure]
        pairs = [(a1, a0) for i, a0 in enumerate(levels)
                 for a1 in levels[i + 1:]]
    else:
        pairs = [("1", "0")]

    rows = []
    for tag in tags:
        for a1, a0 in pairs:
            est = effects.compute_effects(fits[tag], args.exposure, a1, a0,
                                          pattern=pattern)
            rows.append({
                "estimator": tag, "exposure": args.exposure,
                "a1": a1, "a0": a0, "pattern": json.dumps(pattern,
                                                          sort_keys=True),
                "nde": est.nde, "se_nde": est.se_nde,
                "nie": est.nie, "se_nie": est.se_nie,
                "total": est.total,
                "prop_mediated": est.prop_mediated, "se_pm": est.se_pm,
            })
    frame = pd.DataFrame(rows)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out_dir / "effects.csv", index=False)
    with pd.option_context("display.float_format", "{:.6g}".format):
        print(frame.drop(columns="pattern").to_string(index=False))

    if args.contrasts:
        specs = []
        for factor in args.contrasts:
            levels = info.categorical.get(factor)
            if levels is None:
                raise ConfigError(f"unknown contrast factor '{factor}'")
            specs.extend({"factor": factor, "level1": a1, "level0": a0}
                         for i, a0 in enumerate(levels)
                         for a1 in levels[i + 1:])
        crows = []
        for tag in tags:
            for row in effects.contrast_table(fits[tag], specs):
                row["estimator"] = tag
                row["given"] = json.dumps(row["given"], sort_keys=True)
                crows.append(row)
        cframe = pd.DataFrame(crows)
        cframe.to_csv(out_dir / "contrasts.csv", index=False)
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    if args.scenario in simulate.BUILTIN_SCENARIOS:
        builder = simulate.BUILTIN_SCENARIOS[args.scenario]
        scn = builder(paper_scale=args.paper_scale,
                      n_replicates=args.replicates,
                      seed=args.seed if args.seed is not None else 20260826)
    else:
        with open(args.scenario, encoding="utf-8") as fh:
            scn = simulate.SimScenario.from_dict(json.load(fh))
        if args.seed is not None:
            scn = simulate.replace(scn, seed=args.seed)
        if args.replicates:
            scn = simulate.replace(scn, n_replicates=args.replicates)

    tags = _ESTIMATOR_SETS[(args.estimator or "all").lower()]
    metrics = simulate.run_monte_carlo(scn, estimators=tags)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.to_frame().to_csv(out_dir / f"{scn.name}-metrics.csv", index=False)
    summary = metrics.summary_text()
    (out_dir / f"{scn.name}-summary.txt").write_text(summary + "\n",
                                                     encoding="utf-8")
    print(summary)
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="scc-mediate",
        description="Joint outcome/mediator logistic models from "
                    "(stratified) case-control samples")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit estimators from CSV + config")
    p_fit.add_argument("--config", help="JSON run configuration")
    p_fit.add_argument("--data", help="CSV data path (overrides config)")
    p_fit.add_argument("--estimator", choices=sorted(_ESTIMATOR_SETS),
                       help="estimator selection (overrides config)")
    p_fit.add_argument("--pi", help="comma-separated per-stratum prevalences")
    p_fit.add_argument("--seed", type=int)
    p_fit.add_argument("--out", help="output directory")
    p_fit.set_defaults(func=cmd_fit)

    p_eff = sub.add_parser("effects",
                           help="effect decomposition from a saved fit")
    p_eff.add_argument("--fit", required=True, help="fit.json artifact path")
    p_eff.add_argument("--exposure", help="exposure variable name")
    p_eff.add_argument("--pair", action="append",
                       help="exposure contrast 'a1,a0' (repeatable; default "
                            "all level pairs)")
    p_eff.add_argument("--pattern", help="JSON covariate pattern")
    p_eff.add_argument("--estimator",
                       help="comma-separated estimator tags from the artifact")
    p_eff.add_argument("--contrasts", action="append",
                       help="also emit log odds-ratio contrasts for this "
                            "factor (repeatable)")
    p_eff.add_argument("--out", help="output directory")
    p_eff.set_defaults(func=cmd_effects)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    p_sim.add_argument("--scenario", required=True,
                       help="builtin scenario id (1 or 2) or a JSON file")
    p_sim.add_argument("--paper-scale", action="store_true",
                       help="30M-unit populations, 1000 replicates")
    p_sim.add_argument("--estimator", choices=sorted(_ESTIMATOR_SETS))
    p_sim.add_argument("--replicates", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out", help="output directory")
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SccMediateError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
