"""Command-line front end.

Subcommands ``fit``, ``simulate``, ``bandwidth`` and ``diagnose`` write CSV
and JSON files into ``--out``.  Options may also come from a JSON file given
with ``--config``; explicit flags override it.  Exit codes: 0 success,
2 usage, 3 data, 4 numerical.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .asymptotics import (
    CI_MODES,
    ConditionalVariance,
    confidence_interval,
    default_derivative_bandwidth,
    estimate_V1,
    estimate_beta1,
    estimate_derivative,
)
from .bandwidth import PlsConfig, ZeroBiasError, minimize_pls, plugin_bandwidth
from .basis import BASIS_FAMILIES, BasisSpec, build_basis, gram_check
from .data import DataError, Dataset, load_csv, make_dataset
from .first_stage import FirstStageConfig, IdentifiabilityError, fit_first_stage, q_hat_diagnostic
from .kernels import quartic_kernel
from .link import LINKS, get_link
from .montecarlo import ESTIMATORS, Dgp, ExperimentAborted, ExperimentConfig, generate_sample, run_experiment
from .second_stage import HESSIANS, SMOOTHERS, SecondStageConfig, estimate_component, pilot_from_fit, variance_min_weight

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

logger = logging.getLogger(__name__)


class UsageError(Exception):
    pass


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path: Path, data):
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers separated by commas, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers separated by commas, got {text!r}") from None


# Defaults for options that may appear in config files.
DEFAULTS = {
    "fit": {"response": None, "covariates": None, "link": "logit", "kappa": [4], "basis": BASIS_FAMILIES[0],
            "h": None, "C_h": None, "bandwidth": None, "smoother": "local-linear", "hessian": "observed",
            "weight": "none", "grid_size": 201, "alpha": 0.05, "ci_mode": "undersmoothed", "gamma": 0.3},
    "simulate": {"d": 2, "n": 500, "noise": "bernoulli", "estimator": "two-stage-LL", "kappa": [4, 2],
                 "h": None, "C_h": None, "replications": 200, "seed": 0, "grid_size": 201, "trim": 0.8,
                 "hessian": "observed", "basis": BASIS_FAMILIES[0]},
    "bandwidth": {"response": None, "covariates": None, "d": 2, "n": 500, "seed": 0, "link": "logit",
                  "kappa": [4, 2], "basis": BASIS_FAMILIES[0], "method": "pls", "c_lo": 0.2, "c_hi": 3.0,
                  "grid_points": 10, "candidates": None, "polish": True, "smoother": "local-linear",
                  "hessian": "observed"},
    "diagnose": {"response": None, "covariates": None, "link": "logit", "kappa": [4], "basis": BASIS_FAMILIES[0]},
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON file of option values (flags take precedence)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    p.add_argument("-v", "--verbose", action="store_true")


def _data_opts(p, required=True):
    p.add_argument("--data", type=Path, required=required, help="CSV file with a header row")
    p.add_argument("--response", help="response column (default: first column)")
    p.add_argument("--covariates", type=lambda s: s.split(","), help="comma-separated covariate columns")


def _model_opts(p):
    p.add_argument("--link", choices=sorted(LINKS))
    p.add_argument("--kappa", type=_int_list, help="series length, one value or one per covariate")
    p.add_argument("--basis", choices=BASIS_FAMILIES)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linkadditive", description="Two-stage estimation of additive models with a known link.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to CSV data")
    _common(p)
    _data_opts(p)
    _model_opts(p)
    bw = p.add_mutually_exclusive_group()
    bw.add_argument("--h", type=_float_list, help="bandwidths on the cube scale, one per covariate")
    bw.add_argument("--C-h", dest="C_h", type=_float_list, help="bandwidth constants, h = C n^(-1/5)")
    bw.add_argument("--bandwidth", choices=("plugin", "pls"), help="select bandwidths from the data")
    p.add_argument("--smoother", choices=SMOOTHERS)
    p.add_argument("--hessian", choices=HESSIANS)
    p.add_argument("--weight", choices=("none", "variance-min"))
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--ci-mode", dest="ci_mode", choices=CI_MODES)
    p.add_argument("--gamma", type=float)

    p = sub.add_parser("simulate", help="Monte Carlo EIMSE experiment")
    _common(p)
    p.add_argument("--d", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--noise", choices=("bernoulli", "heteroskedastic"))
    p.add_argument("--estimator")
    p.add_argument("--kappa", type=_int_list)
    p.add_argument("--basis", choices=BASIS_FAMILIES)
    bw = p.add_mutually_exclusive_group()
    bw.add_argument("--h", type=_float_list)
    bw.add_argument("--C-h", dest="C_h", type=_float_list)
    p.add_argument("--replications", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--grid-size", dest="grid_size", type=int)
    p.add_argument("--trim", help="'none', 'boundary' or a half-width such as 0.8")
    p.add_argument("--hessian", choices=HESSIANS)

    p = sub.add_parser("bandwidth", help="select bandwidth constants")
    _common(p)
    _data_opts(p, required=False)
    p.add_argument("--d", type=int, help="simulate a design sample when --data is absent")
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    _model_opts(p)
    p.add_argument("--method", choices=("plugin", "pls"))
    p.add_argument("--c-lo", dest="c_lo", type=float)
    p.add_argument("--c-hi", dest="c_hi", type=float)
    p.add_argument("--grid-points", dest="grid_points", type=int)
    p.add_argument("--candidates", type=_float_list, help="explicit candidate constants (all coordinates)")
    p.add_argument("--no-polish", dest="polish", action="store_const", const=False)
    p.add_argument("--smoother", choices=SMOOTHERS)
    p.add_argument("--hessian", choices=HESSIANS)

    p = sub.add_parser("diagnose", help="first-stage fit and conditioning diagnostics")
    _common(p)
    _data_opts(p)
    _model_opts(p)
    return parser


def merge_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then config-file keys, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file {args.config} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        if "grid" in loaded and "grid_size" not in loaded:
            loaded["grid_size"] = loaded.pop("grid")
        if isinstance(loaded.get("dgp"), dict):
            loaded.update(loaded.pop("dgp"))
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "data", None) is not None:
        cfg["data"] = str(args.data)
    for key in ("h", "C_h"):
        if getattr(args, key, None) is not None:
            other = "C_h" if key == "h" else "h"
            cfg[other] = None
            if command == "fit":
                cfg["bandwidth"] = None
    if command == "fit" and getattr(args, "bandwidth", None) is not None:
        cfg["h"] = cfg["C_h"] = None
    for key in ("kappa", "h", "C_h", "candidates"):
        if key in cfg and cfg[key] is not None and np.isscalar(cfg[key]):
            cfg[key] = [cfg[key]]
    return cfg


def _load(cfg) -> Dataset:
    Y, X_raw, names = load_csv(cfg["data"], cfg.get("response"), cfg.get("covariates"))
    return make_dataset(Y, X_raw, names)


def _first_stage(cfg, ds: Dataset):
    link = get_link(cfg["link"])
    kappa = cfg["kappa"][0] if len(cfg["kappa"]) == 1 else cfg["kappa"]
    kappas = FirstStageConfig(kappa=kappa).kappas(ds.d)
    basis = build_basis(BasisSpec(cfg["basis"], max(kappas)))
    fit = fit_first_stage(ds, basis, link, FirstStageConfig(kappa=kappas))
    return link, basis, fit


def _per_coordinate(values, d, name):
    values = list(values)
    if len(values) == 1:
        values = values * d
    if len(values) != d:
        raise UsageError(f"{name} needs 1 or {d} values, got {len(values)}")
    return values


def _fit_summary(fit, ds, link):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, lam = q_hat_diagnostic(fit, ds, link)
    return {
        "n": ds.n,
        "d": ds.d,
        "names": list(ds.names) if ds.names else None,
        "kappa": fit.kappas,
        "mu": fit.mu,
        "theta": fit.theta,
        "objective": fit.objective,
        "initial_objective": fit.initial_objective,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "q_hat_min_eigenvalue": lam,
        "warnings": [str(w.message) for w in caught],
    }


def cmd_fit(cfg, out: Path, threads: int):
    ds = _load(cfg)
    link, basis, fit = _first_stage(cfg, ds)
    n, d = ds.n, ds.d
    kernel = quartic_kernel()
    selection = None
    if cfg["h"] is not None:
        h = _per_coordinate(cfg["h"], d, "h")
    elif cfg["C_h"] is not None:
        h = [c * n ** (-0.2) for c in _per_coordinate(cfg["C_h"], d, "C_h")]
    elif cfg["bandwidth"] == "pls":
        res = minimize_pls(PlsConfig(smoother=cfg["smoother"], hessian=cfg["hessian"]), ds, fit, link, kernel)
        h = list(res.C * n ** (-0.2))
        selection = {"method": "pls", "C_h": res.C, "objective": res.objective}
    else:
        C = [plugin_bandwidth(fit, ds, link, j, kernel, cfg["smoother"], cfg["hessian"]) for j in range(d)]
        h = [c * n ** (-0.2) for c in C]
        selection = {"method": "plugin", "C_h": C}
    if not 0.0 < cfg["alpha"] < 1.0:
        raise UsageError("alpha must lie in (0, 1)")

    grid = np.linspace(-1.0, 1.0, cfg["grid_size"])
    summary = _fit_summary(fit, ds, link)
    summary.update({"h": h, "C_h": [hj * n ** 0.2 for hj in h], "selection": selection, "components": []})
    for j in range(d):
        pilot = pilot_from_fit(fit, ds, j)
        variance = ConditionalVariance.from_fit(fit, ds, link, 1.5 * np.asarray(h), kernel)
        weight = None
        if cfg["weight"] == "variance-min":
            weight = variance_min_weight(fit, ds, link, variance, j, h[j], kernel)
        scfg = SecondStageConfig(j, h[j], cfg["smoother"], kernel, weight, cfg["hessian"])
        est = estimate_component(fit, ds, link, scfg, grid)
        if cfg["ci_mode"] == "undersmoothed":
            C_eff = h[j] * n ** cfg["gamma"]
            V = estimate_V1(grid, pilot, ds, link, kernel, h[j], C_eff, variance, weight)
            beta = None
        else:
            C_eff = h[j] * n ** 0.2
            V = estimate_V1(grid, pilot, ds, link, kernel, h[j], C_eff, variance, weight)
            fine = np.linspace(-1.0, 1.0, 1024)
            fine_est = estimate_component(fit, ds, link, scfg, fine).values
            ok = np.isfinite(fine_est)
            vals = np.interp(fine, fine[ok], fine_est[ok])
            g = default_derivative_bandwidth(n)
            d1 = estimate_derivative(fine, vals, 1, g, kernel)(grid)
            d2 = estimate_derivative(fine, vals, 2, g, kernel)(grid)
            beta = estimate_beta1(grid, pilot, ds, link, kernel, h[j], C_eff, d1, d2, cfg["smoother"])
        ci = confidence_interval(grid, est.values, beta, V, n, cfg["alpha"], cfg["ci_mode"], cfg["gamma"], C_eff)
        name = ds.names[j] if ds.names else f"x{j + 1}"
        x_orig = ds.rescale.inverse_coordinate(j, grid) if ds.rescale is not None else grid
        beta_col = ci.beta if ci.beta is not None else np.full(grid.shape, np.nan)
        rows = zip(grid, x_orig, est.pilot, est.values, est.boundary, est.degenerate, beta_col, V, ci.lower, ci.upper)
        _write_csv(out / f"component_{j + 1}.csv",
                   ["x_cube", "x", "m_tilde", "m_hat", "boundary", "degenerate", "beta", "V", "ci_lower", "ci_upper"], rows)
        summary["components"].append({"index": j + 1, "name": name, "h": h[j], "degenerate_points": int(est.degenerate.sum()),
                                      "variance_fallbacks": variance.fallbacks, "variance_clamped": variance.clamped})
    _write_json(out / "summary.json", summary)


def cmd_simulate(cfg, out: Path, threads: int):
    trim = cfg["trim"]
    if isinstance(trim, str) and trim not in ("none", "boundary"):
        try:
            trim = float(trim)
        except ValueError:
            raise UsageError(f"invalid trim {trim!r}") from None
    if cfg["estimator"] not in ESTIMATORS:
        raise UsageError(f"invalid estimator {cfg['estimator']!r}; valid values: {', '.join(ESTIMATORS)}")
    try:
        exp = ExperimentConfig(
            dgp=Dgp(cfg["d"], cfg["n"], cfg["noise"]), estimator=cfg["estimator"], kappa=tuple(cfg["kappa"]),
            h=None if cfg["h"] is None else tuple(cfg["h"]), C_h=None if cfg["C_h"] is None else tuple(cfg["C_h"]),
            replications=cfg["replications"], seed=cfg["seed"], grid_size=cfg["grid_size"], trim=trim,
            basis_family=cfg["basis"], hessian=cfg["hessian"],
        ) if (cfg["h"] is not None or cfg["C_h"] is not None) else None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if exp is None:
        raise UsageError("give --h or --C-h")
    report = run_experiment(exp, workers=threads)
    se = report.standard_error
    _write_csv(out / "report.csv", ["component", "eimse", "standard_error", "replications", "failures"],
               [(j + 1, report.eimse[j], se[j], report.ise.shape[0], len(report.failures)) for j in range(report.ise.shape[1])])
    _write_csv(out / "ise.csv", ["replication"] + [f"ise_{j + 1}" for j in range(report.ise.shape[1])],
               [(int(r), *row) for r, row in zip(report.replication_ids, report.ise)])
    _write_json(out / "report.json", report.to_dict())


def cmd_bandwidth(cfg, out: Path, threads: int):
    if cfg.get("data"):
        ds = _load(cfg)
    else:
        ds = generate_sample(Dgp(cfg["d"], cfg["n"]), cfg["seed"])
    link, basis, fit = _first_stage(cfg, ds)
    result = {"method": cfg["method"], "n": ds.n, "d": ds.d}
    if cfg["method"] == "plugin":
        C = [plugin_bandwidth(fit, ds, link, j, smoother=cfg["smoother"], hessian=cfg["hessian"]) for j in range(ds.d)]
        result["C_h"] = C
    else:
        try:
            pcfg = PlsConfig(cfg["c_lo"], cfg["c_hi"], cfg["grid_points"],
                             None if cfg["candidates"] is None else tuple(cfg["candidates"]),
                             polish=cfg["polish"], smoother=cfg["smoother"], hessian=cfg["hessian"])
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        res = minimize_pls(pcfg, ds, fit, link)
        result.update({"C_h": res.C, "objective": res.objective, "evaluations": len(res.trace)})
        header = ["stage"] + [f"C_{j + 1}" for j in range(ds.d)] + ["rss", "penalty", "objective", "best"]
        with (out / "trace.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for t in res.trace:
                w.writerow([t["stage"]] + [_fmt(v) for v in (*t["C"], t["rss"], t["penalty"], t["objective"], t["best"])])
    result["h"] = [c * ds.n ** (-0.2) for c in result["C_h"]]
    _write_json(out / "bandwidth.json", result)


def cmd_diagnose(cfg, out: Path, threads: int):
    ds = _load(cfg)
    link, basis, fit = _first_stage(cfg, ds)
    summary = _fit_summary(fit, ds, link)
    mean_err, gram_err = gram_check(basis)
    summary.update({"basis": cfg["basis"], "basis_mean_error": mean_err, "basis_gram_error": gram_err,
                    "objective_history": fit.history})
    for w in summary["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    _write_json(out / "diagnose.json", summary)


COMMANDS = {"fit": cmd_fit, "simulate": cmd_simulate, "bandwidth": cmd_bandwidth, "diagnose": cmd_diagnose}


def _fail(out: Path | None, code: int, kind: str, exc: BaseException) -> int:
    record = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            _write_json(out / "error.json", record)
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out: Path = args.out
    try:
        if args.threads < 1:
            raise UsageError("--threads must be at least 1")
        cfg = merge_config(args.command, args)
        if cfg.get("data") and not Path(cfg["data"]).exists():
            raise DataError(f"{cfg['data']}: file not found")
        out.mkdir(parents=True, exist_ok=True)
        stale = out / "error.json"
        if stale.exists():
            stale.unlink()
        _write_json(out / "config.json", {"command": args.command, **cfg})
        COMMANDS[args.command](cfg, out, args.threads)
    except UsageError as exc:
        return _fail(out, EXIT_USAGE, "usage", exc)
    except (DataError, IdentifiabilityError) as exc:
        return _fail(out, EXIT_DATA, "data", exc)
    except (ArithmeticError, ZeroBiasError, ExperimentAborted, np.linalg.LinAlgError) as exc:
        return _fail(out, EXIT_NUMERICAL, "numerical", exc)
    except ValueError as exc:
        return _fail(out, EXIT_USAGE, "usage", exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
