"""``hydrovalue`` command line: fit -> build -> solve -> simulate -> export.

Exit codes: 0 success, 1 invalid input or configuration, 2 solver failure,
3 a result failed its acceptance check (duality gap or simulation bound).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from .bundle import InflowBundle
from .config import ConfigError, RunConfig
from .convex_core import BarrierError, LPError
from .ingest import (
    InflowDataError,
    InflowSeries,
    SyntheticParams,
    load_inflow_csv,
    parse_units,
    synthesize_inflow,
    write_inflow_csv,
)
from .mdp import MDPModel, ModelError, build_model
from .policy_pricing import (
    PolicySolution,
    PricingError,
    ValueSolution,
    duality_gap,
    offer_curves,
    solve_dual,
    solve_primal,
    write_offer_curves_csv,
    write_policy_csv,
    write_values_csv,
)
from .quantile_fit import FourierBasis, QuantileFamily, coverage, enforce_noncrossing, fit_family, weekly_grid
from .regime_chain import assign_regimes, fit_conditional_hist, fit_transition_mle, homogeneous_loglik
from .simulate import simulate_policy

log = logging.getLogger("hydrovalue")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_CHECK = 0, 1, 2, 3
GAP_TOL = 1e-6


class CheckFailed(Exception):
    pass


# ----------------------------------------------------------------------------- artifacts

def _out(cfg: RunConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _record(cfg: RunConfig, *paths: Path) -> None:
    """Stamp outputs with the config hash in ``manifest.json``."""
    man_path = _out(cfg) / "manifest.json"
    man = json.loads(man_path.read_text()) if man_path.is_file() else {}
    for p in paths:
        man[p.name] = {"config_hash": cfg.digest(), "sha256": hashlib.sha256(p.read_bytes()).hexdigest()[:16]}
    man_path.write_text(json.dumps(man, indent=1, sort_keys=True))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True), encoding="utf-8")


def _load_series(cfg: RunConfig) -> InflowSeries:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        series = load_inflow_csv(cfg.inflow_csv, parse_units(cfg.inflow_units))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return series


def _family_path(cfg):
    return _out(cfg) / "quantiles.json"


def _bundle_path(cfg):
    return _out(cfg) / "bundle.json"


def _model_path(cfg):
    return _out(cfg) / "model.bin"


def _solution_path(cfg):
    return _out(cfg) / "solution.npz"


def save_solution(path: Path, psol: PolicySolution, vsol: ValueSolution, model: MDPModel) -> None:
    with path.open("wb") as fh:
        np.savez(
            fh,
            y=psol.y,
            policy=psol.policy,
            actions=psol.actions,
            support=psol.support,
            u=psol.u,
            v=vsol.v,
            u_dual=vsol.u,
            anchor=vsol.anchor,
            model=np.array(model.digest()),
        )


def load_solution(path: Path):
    if not path.is_file():
        raise FileNotFoundError(f"solution not found: {path} (run `hydrovalue solve` first)")
    with np.load(path) as z:
        return {k: z[k] for k in z.files}


# ----------------------------------------------------------------------------- commands

def cmd_fit_quantiles(cfg: RunConfig) -> QuantileFamily:
    series = _load_series(cfg)
    fam = fit_family(series, cfg.levels, FourierBasis(harmonics=cfg.quantile_harmonics))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fam = enforce_noncrossing(fam, weekly_grid())
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    cov = coverage(fam, series)
    for a, c in zip(fam.levels, cov):
        print(f"quantile {a:.3f}: coverage {c:.4f}")
    path = _family_path(cfg)
    _write_json(path, fam.to_dict())
    _record(cfg, path)
    return fam


def cmd_fit_chain(cfg: RunConfig, family: QuantileFamily | None = None) -> InflowBundle:
    series = _load_series(cfg)
    if family is None:
        fp = _family_path(cfg)
        if not fp.is_file():
            raise FileNotFoundError(f"quantile file not found: {fp} (run `hydrovalue fit-quantiles` first)")
        family = QuantileFamily.from_dict(json.loads(fp.read_text()))
    regimes = assign_regimes(series, family)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        trans = fit_transition_mle(regimes, FourierBasis(harmonics=cfg.transition_harmonics))
        hist = fit_conditional_hist(regimes, cfg.bin_mw, cfg.pool_weeks)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"regime counts: {regimes.counts().tolist()}")
    print(f"transition log-likelihood {trans.loglik:.6f} (homogeneous {homogeneous_loglik(regimes):.6f})")
    bundle = InflowBundle(family, trans, hist, {"config_hash": cfg.digest(), "records": len(series)})
    path = _bundle_path(cfg)
    bundle.save(path)
    _record(cfg, path)
    return bundle


def cmd_fit(cfg: RunConfig) -> InflowBundle:
    return cmd_fit_chain(cfg, cmd_fit_quantiles(cfg))


def _bundle(cfg: RunConfig) -> InflowBundle:
    return InflowBundle.load(_bundle_path(cfg))


def cmd_build(cfg: RunConfig) -> MDPModel:
    model = build_model(cfg.system, _bundle(cfg))
    S, A, nnz = model.dimensions()
    print(f"|S| = {S}, |A| = {A}, kernel nonzeros = {nnz}")
    print(f"LP: {S * A} variables, {S + 1} equality rows")
    path = _model_path(cfg)
    model.save(path)
    _record(cfg, path)
    return model


def _model(cfg: RunConfig) -> MDPModel:
    path = _model_path(cfg)
    if not path.is_file():
        raise FileNotFoundError(f"model not found: {path} (run `hydrovalue build` first)")
    model = MDPModel.load(path)
    if model.config != cfg.system:
        raise ConfigError(f"{path} was built with a different system configuration; rebuild it")
    return model


def _export_solution(cfg, model, psol, vsol, prefix=""):
    out = _out(cfg)
    paths = [out / f"{prefix}policy.csv", out / f"{prefix}values.csv", out / f"{prefix}offer_curves.csv"]
    write_policy_csv(psol, model, paths[0])
    write_values_csv(vsol, model, paths[1])
    curves = offer_curves(vsol, model, cfg.offer_weeks, range(1, model.n_regimes + 1))
    write_offer_curves_csv(curves, paths[2])
    return paths, curves


def cmd_solve(cfg: RunConfig) -> dict:
    model = _model(cfg)
    t0 = time.perf_counter()
    psol = solve_primal(model, tol=cfg.lp_tol)
    vsol = solve_dual(model, psol)
    elapsed = time.perf_counter() - t0
    gap = duality_gap(psol, vsol)
    S, A = model.n_states, model.n_actions
    paths, curves = _export_solution(cfg, model, psol, vsol)
    save_solution(_solution_path(cfg), psol, vsol, model)
    summary = {
        "config_hash": cfg.digest(),
        "model": model.digest(),
        "states": S,
        "actions": A,
        "lp_variables": S * A,
        "lp_rows": S + 1,
        "u_weekly": psol.u,
        "u_annual": psol.u_annual,
        "u_dual": vsol.u,
        "duality_gap": gap,
        "support_fraction": float(psol.support.mean()),
        "stationarity_residual": psol.residuals["stationarity"],
        "min_scaled_slack": vsol.min_slack,
        "ipm_iterations": psol.ipm_iterations,
        "crossover_pivots": psol.pivots,
        "non_monotone_curves": sum(not c.monotone for c in curves),
        "solve_seconds": elapsed,
    }
    spath = _out(cfg) / "solution.json"
    _write_json(spath, summary)
    _record(cfg, spath, _solution_path(cfg), *paths)
    print(f"|S| = {S}, LP variables = {S * A}, rows = {S + 1}")
    print(f"u = {psol.u:.6f} $/week ({psol.u_annual:.2f} $/year)")
    print(f"duality gap {gap:.3e}; support {psol.support.sum()}/{S}")
    if gap > GAP_TOL:
        raise CheckFailed(f"duality gap {gap:.3e} exceeds {GAP_TOL:g}")
    return summary


def cmd_simulate(cfg: RunConfig, years: int | None = None, seed: int | None = None, trajectory: bool = False):
    bundle = _bundle(cfg)
    sol = load_solution(_solution_path(cfg))
    years = cfg.sim_years if years is None else years
    seed = cfg.sim_seed if seed is None else seed
    res = simulate_policy(sol["policy"], bundle, cfg.system, years, seed, record_trajectory=trajectory)
    u = float(sol["u"])
    ok = res.within(u)
    path = _out(cfg) / "simulation.json"
    res.save_json(path, {"config_hash": cfg.digest(), "u_lp_weekly": u, "within_3se": ok})
    written = [path]
    if trajectory:
        tpath = _out(cfg) / "trajectory.csv"
        res.save_trajectory_csv(tpath)
        written.append(tpath)
    _record(cfg, *written)
    z = (res.mean_weekly - u) / res.stderr_weekly if res.stderr_weekly > 0 else 0.0
    print(f"simulated {years} years: mean {res.mean_weekly:.4f} $/week, SE {res.stderr_weekly:.4f}, LP u {u:.4f} (z = {z:.2f})")
    print(f"curtailment weeks {res.curtailment_events}, spill weeks {res.spill_events}, fallback decisions {res.fallback_events}")
    if not ok:
        raise CheckFailed("simulated mean cost is not within 3 standard errors of u")
    return res


def cmd_export_figures(cfg: RunConfig) -> list:
    """Data behind the inflow-quantile, policy/value-surface and value cross-section figures."""
    import csv

    out = _out(cfg)
    bundle = _bundle(cfg)
    series = _load_series(cfg)
    regimes = assign_regimes(series, bundle.family)
    written = []
    p = out / "fig1_inflow.csv"
    with p.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["year", "week", "t_days", "inflow_mw", "regime"])
        for y, w, t, f, r in zip(series.years, series.weeks, series.t_days, series.inflow, regimes.regime):
            wr.writerow([int(y), int(w), repr(float(t)), repr(float(f)), int(r)])
    written.append(p)
    p = out / "fig1_quantiles.csv"
    t = np.arange(366, dtype=float)
    q = bundle.family.values(t)
    with p.open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t_days"] + [f"q{a:g}" for a in bundle.family.levels])
        for i in range(t.size):
            wr.writerow([int(t[i])] + [repr(float(v)) for v in q[:, i]])
    written.append(p)
    model = _model(cfg)
    sol = load_solution(_solution_path(cfg))
    if str(sol["model"]) != model.digest():
        raise ConfigError("solution.npz does not match model.bin; re-run `hydrovalue solve`")
    support = sol["support"].astype(bool)
    psol = PolicySolution(sol["y"], float(sol["u"]), sol["policy"], support, sol["actions"])
    vsol = ValueSolution(float(sol["u_dual"]), sol["v"], int(sol["anchor"]), support)
    paths, _ = _export_solution(cfg, model, psol, vsol, prefix="fig2_")
    paths[2] = paths[2].rename(out / "fig3_offer_curves.csv")
    written += paths
    _record(cfg, *written)
    for p in written:
        print(p)
    return written


# ----------------------------------------------------------------------------- entry

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hydrovalue", description="Hydro water values from an average-cost MDP.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="JSON run configuration (defaults: case study)")
    common.add_argument("--inflow", help="inflow CSV (year,week,inflow)")
    common.add_argument("--inflow-units", help="mw, gwh-per-week or cumecs:<MW per cumec>")
    common.add_argument("-o", "--output-dir", help="directory for all artifacts")
    common.add_argument("--levels", help="comma-separated quantile levels, e.g. 0.1,0.5,0.9")
    common.add_argument("--harmonics", type=int, help="override quantile_harmonics")
    common.add_argument("--storage-blocks", type=int, help="override system.storage_blocks")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in [
        ("fit-quantiles", "fit the quantile curves"),
        ("fit-chain", "fit the regime chain and inflow histograms"),
        ("fit", "fit-quantiles then fit-chain"),
        ("build", "build the MDP model"),
        ("solve", "solve the primal and dual LPs and export policy, values, offer curves"),
        ("simulate", "Monte-Carlo check of the solved policy"),
        ("export-figures", "write the CSV data behind the figures"),
        ("init-config", "write the default configuration"),
        ("synthesize", "write a synthetic inflow CSV to the configured inflow path"),
    ]:
        sp_ = sub.add_parser(name, parents=[common], help=hlp)
        if name == "simulate":
            sp_.add_argument("--years", type=int)
            sp_.add_argument("--seed", type=int)
            sp_.add_argument("--trajectory", action="store_true", help="also write trajectory.csv")
        if name == "init-config":
            sp_.add_argument("path")
        if name == "synthesize":
            sp_.add_argument("--years", type=int, default=74)
            sp_.add_argument("--seed", type=int, default=1)
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.inflow:
        changes["inflow_csv"] = args.inflow
    if args.inflow_units:
        changes["inflow_units"] = args.inflow_units
    if args.output_dir:
        changes["output_dir"] = args.output_dir
    if args.levels:
        try:
            changes["levels"] = [float(x) for x in args.levels.split(",")]
        except ValueError:
            raise ConfigError(f"bad --levels {args.levels!r}") from None
    if args.harmonics is not None:
        changes["quantile_harmonics"] = args.harmonics
    if args.storage_blocks is not None:
        changes["system"] = dataclasses.replace(cfg.system, storage_blocks=args.storage_blocks)
    cfg = dataclasses.replace(cfg, **changes) if changes else cfg
    parse_units(cfg.inflow_units)
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "init-config":
            cfg.save(args.path)
            print(args.path)
        elif args.command == "synthesize":
            series = synthesize_inflow(SyntheticParams(), args.years, args.seed)
            Path(cfg.inflow_csv).parent.mkdir(parents=True, exist_ok=True)
            write_inflow_csv(series, cfg.inflow_csv)
            print(cfg.inflow_csv)
        elif args.command == "fit-quantiles":
            cmd_fit_quantiles(cfg)
        elif args.command == "fit-chain":
            cmd_fit_chain(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "build":
            cmd_build(cfg)
        elif args.command == "solve":
            cmd_solve(cfg)
        elif args.command == "simulate":
            cmd_simulate(cfg, args.years, args.seed, args.trajectory)
        elif args.command == "export-figures":
            cmd_export_figures(cfg)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (PricingError, LPError, BarrierError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (ConfigError, InflowDataError, ModelError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
