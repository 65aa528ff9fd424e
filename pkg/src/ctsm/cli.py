"""Command-line entry point.

Subcommands cover the full workflow: simulate a synthetic panel, estimate a
model on it (or on ingested CSVs), filter a panel at fixed parameters,
evaluate held-out pricing, and aggregate results into report tables.  Every
run writes a manifest JSON recording the command, normalized arguments, a
config hash, and library versions; manifests carry no timestamps so a rerun
is byte-identical.

Exit codes: 0 success, 1 domain or input error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__, models
from .errors import CtsmError
from .estimation import FitConfig, fit_mle, loglik_for
from .evaluation import evaluation_table, out_of_sample
from .data_io import join_panels, load_futures_csv, load_yields_csv, panel_from_csv, panel_to_csv
from .models import ParamSet
from .simulation import simulate_panel

logger = logging.getLogger(__name__)

DEFAULT_ESTIMATION = ("F2", "F4", "F6", "F8", "F10")
DEFAULT_HOLDOUT = ("F3", "F5", "F7", "F9", "F11")
OUTPUT_ENV = "CTSM_OUTPUT_DIR"


def _out_dir(arg: str | None) -> str:
    out = arg or os.environ.get(OUTPUT_ENV) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(out_dir: str, command: str, args: dict) -> None:
    import pandas
    import scipy

    norm = {k: v for k, v in sorted(args.items()) if k != "func"}
    blob = json.dumps(norm, sort_keys=True, default=str)
    manifest = {
        "command": command,
        "args": json.loads(blob),
        "config_hash": hashlib.sha256(blob.encode()).hexdigest(),
        "versions": {
            "ctsm": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pandas.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    path = os.path.join(out_dir, f"manifest_{command}.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _model_id(raw: str) -> str:
    mid = raw.upper().replace("-", "")
    if mid not in models.MODEL_IDS:
        raise CtsmError(f"unknown model {raw!r}; choose from {', '.join(models.MODEL_IDS)}")
    return mid


def _parse_taus(raw: str) -> np.ndarray:
    try:
        vals = np.array([float(tok) for tok in raw.split(",") if tok.strip()])
    except ValueError:
        raise CtsmError(f"cannot parse maturity list {raw!r}") from None
    if vals.size == 0 or np.any(vals <= 0):
        raise CtsmError("maturity list must contain positive numbers")
    return vals


def _parse_labels(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def _load_param_file(path: str) -> tuple[ParamSet, str | None, list | None]:
    """Accepts either a bare ParamSet JSON or an estimate-result JSON."""
    with open(path) as fh:
        data = json.load(fh)
    if "params" in data and isinstance(data["params"], dict):
        params = ParamSet.from_json(json.dumps(data["params"]))
        return params, data.get("mode"), data.get("futures_labels")
    return ParamSet.from_json(json.dumps(data)), None, None


def _load_panel(args) -> "Panel":
    if getattr(args, "yields_csv", None):
        fut = load_futures_csv(args.panel, _parse_labels(args.contracts) if args.contracts else None)
        yld = load_yields_csv(args.yields_csv)
        return join_panels(fut, yld)
    if getattr(args, "raw_futures", False):
        return load_futures_csv(args.panel, _parse_labels(args.contracts) if args.contracts else None)
    return panel_from_csv(args.panel)


def _cmd_simulate(args) -> int:
    out = _out_dir(args.out)
    mid = _model_id(args.model)
    fut_tau = _parse_taus(args.futures_taus)
    yld_tau = None if args.no_yields else _parse_taus(args.yield_taus)
    n_yld = 0 if yld_tau is None else yld_tau.size
    if args.params:
        params = _load_param_file(args.params)[0]
    else:
        params = models.default_params(mid, fut_tau.size, n_yld)
    sim = simulate_panel(
        params, fut_tau, yld_tau, n_days=args.days, seed=args.seed,
        sigma_eps=args.sigma_eps, sigma_psi=None if yld_tau is None else args.sigma_psi,
    )
    panel_to_csv(sim.panel, os.path.join(out, "panel.csv"))
    sim.truth_to_csv(os.path.join(out, "truth.csv"))
    with open(os.path.join(out, "gen_params.json"), "w") as fh:
        fh.write(sim.params.to_json())
        fh.write("\n")
    _write_manifest(out, "simulate", vars(args))
    print(f"wrote panel.csv, truth.csv, gen_params.json to {out}")
    return 0


def _select_available(panel, wanted, what: str):
    have = [lab for lab in wanted if lab in panel.fut_labels]
    if not have:
        raise CtsmError(
            f"none of the {what} series {','.join(wanted)} are in the panel "
            f"(columns: {','.join(panel.fut_labels)})"
        )
    return have


def _cmd_estimate(args) -> int:
    out = _out_dir(args.out)
    mid = _model_id(args.model)
    panel = _load_panel(args)
    wanted = _parse_labels(args.maturities) if args.maturities else DEFAULT_ESTIMATION
    labels = _select_available(panel, wanted, "estimation")
    sub = panel.select_futures(labels)
    if args.config:
        with open(args.config) as fh:
            config = FitConfig.from_json(fh.read())
    else:
        config = FitConfig()
    config.mode = args.mode or config.mode
    if args.seed is not None:
        config.seed = args.seed
    if args.max_iter is not None:
        config.max_iter = args.max_iter
    if args.starts is not None:
        config.n_starts = args.starts
    if config.mode == "joint" and sub.n_yields == 0:
        raise CtsmError("joint mode requested but the panel has no yield columns")
    res = fit_mle(mid, sub, config)
    stem = mid.lower()
    with open(os.path.join(out, f"estimate_{stem}.json"), "w") as fh:
        fh.write(res.to_json())
        fh.write("\n")
    if res.filter_output is not None:
        res.filter_output.to_csv(os.path.join(out, f"states_{stem}.csv"))
    _write_manifest(out, "estimate", vars(args))
    print(
        f"{mid}: loglik {res.loglik:.3f}, AIC {res.aic:.2f}, BIC {res.bic:.2f}, "
        f"converged {res.converged}; wrote estimate_{stem}.json"
    )
    return 0


def _cmd_filter(args) -> int:
    out = _out_dir(args.out)
    params, mode, labels = _load_param_file(args.params)
    panel = _load_panel(args)
    if args.maturities:
        labels = list(_parse_labels(args.maturities))
    if labels:
        panel = panel.select_futures(_select_available(panel, labels, "requested"))
    mode = args.mode or mode or ("joint" if panel.n_yields else "futures")
    if mode == "futures":
        panel = panel.without_yields()
    if len(params.sigma_eps) != panel.n_futures or len(params.sigma_psi) != panel.n_yields:
        raise CtsmError(
            f"parameter noise dimensions ({len(params.sigma_eps)} futures, "
            f"{len(params.sigma_psi)} yields) do not match the panel "
            f"({panel.n_futures}, {panel.n_yields})"
        )
    ll, fout = loglik_for(params, panel)
    fout.to_csv(os.path.join(out, "filtered.csv"))
    with open(os.path.join(out, "filter_summary.json"), "w") as fh:
        fh.write(fout.summary_json())
        fh.write("\n")
    _write_manifest(out, "filter", vars(args))
    print(f"{params.model_id}: loglik {ll:.3f} over {panel.n_dates} dates; wrote filtered.csv")
    return 0


def _cmd_evaluate(args) -> int:
    out = _out_dir(args.out)
    params, mode, est_labels = _load_param_file(args.params)
    panel = _load_panel(args)
    holdout = _parse_labels(args.holdout) if args.holdout else DEFAULT_HOLDOUT
    holdout = tuple(_select_available(panel, holdout, "holdout"))
    mode = args.mode or mode or "futures"
    if est_labels:
        keep = [l for l in panel.fut_labels if l in set(est_labels) | set(holdout)]
        panel = panel.select_futures(keep)
    rep = out_of_sample(params, panel, holdout, mode=mode, burn_in=args.burn_in)
    stem = params.model_id.lower()
    with open(os.path.join(out, f"eval_{stem}.json"), "w") as fh:
        fh.write(rep.to_json())
        fh.write("\n")
    _write_manifest(out, "evaluate", vars(args))
    print(
        f"{params.model_id}: holdout RMSE mean {rep.rmse_mean:.4f}%, "
        f"MAPE mean {rep.mape_mean:.4f}%, predictive loglik {rep.predictive_loglik:.3f}"
    )
    return 0


def _cmd_report(args) -> int:
    out = _out_dir(args.out)
    fits, evals = [], []
    for path in args.inputs:
        with open(path) as fh:
            data = json.load(fh)
        if "predictive_loglik" in data:
            evals.append(data)
        elif "loglik" in data:
            fits.append(data)
        else:
            raise CtsmError(f"{path}: not an estimate or evaluation result")
    wrote = []
    if fits:
        lines = ["model,mode,loglik,aic,bic,aic_per_obs,bic_per_obs,n_obs,converged"]
        for d in fits:
            lines.append(
                f"{d['model_id']},{d.get('mode', '')},{d['loglik']:.4f},"
                f"{d['aic']:.4f},{d['bic']:.4f},{d['aic_per_obs']:.6f},"
                f"{d['bic_per_obs']:.6f},{d['n_obs']},{d['converged']}"
            )
        path = os.path.join(out, "table_models.csv")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        wrote.append("table_models.csv")
    if evals:
        from .evaluation import EvalReport

        reports = [
            EvalReport(
                model_id=d["model_id"], mode=d.get("mode", ""),
                holdout_labels=tuple(d["holdout_labels"]),
                rmse_by_label=d["rmse_by_label"], mape_by_label=d["mape_by_label"],
                rmse_mean=d["rmse_mean"], mape_mean=d["mape_mean"],
                rmse_by_label_full=d.get("rmse_by_label_full", {}),
                mape_by_label_full=d.get("mape_by_label_full", {}),
                rmse_mean_full=d.get("rmse_mean_full", float("nan")),
                mape_mean_full=d.get("mape_mean_full", float("nan")),
                predictive_loglik=d["predictive_loglik"],
                n_dates=d.get("n_dates", 0), burn_in=d.get("burn_in", 0),
            )
            for d in evals
        ]
        path = os.path.join(out, "table_oos.csv")
        with open(path, "w") as fh:
            fh.write(evaluation_table(reports))
        wrote.append("table_oos.csv")
    if not wrote:
        raise CtsmError("no inputs given")
    _write_manifest(out, "report", vars(args))
    print(f"wrote {', '.join(wrote)} to {out}")
    return 0


def _add_panel_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--panel", required=True, help="panel CSV (package schema, or vendor prices with --raw-futures)")
    p.add_argument("--raw-futures", action="store_true", help="treat --panel as a vendor price file (date,F1,F2,...)")
    p.add_argument("--yields-csv", help="vendor Treasury par-yield CSV to join on dates (implies --raw-futures)")
    p.add_argument("--contracts", help="comma list of contract labels to keep from a vendor file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ctsm",
        description="Affine commodity term-structure models: simulate, estimate, filter, evaluate.",
    )
    ap.add_argument("--version", action="version", version=f"ctsm {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("simulate", help="generate a synthetic panel with hidden truth")
    ps.add_argument("--model", required=True, help="model id, e.g. srv4f")
    ps.add_argument("--days", type=int, required=True)
    ps.add_argument("--seed", type=int, required=True)
    ps.add_argument("--futures-taus", default="0.0833,0.1667,0.25,0.3333,0.4167,0.5,0.5833,0.6667,0.75,0.8333,0.9167",
                    help="comma list of futures maturities in years")
    ps.add_argument("--yield-taus", default="0.25,0.5", help="comma list of yield tenors in years")
    ps.add_argument("--no-yields", action="store_true")
    ps.add_argument("--sigma-eps", type=float, default=0.01)
    ps.add_argument("--sigma-psi", type=float, default=0.002)
    ps.add_argument("--params", help="JSON file with generating parameters")
    ps.add_argument("--out")
    ps.set_defaults(func=_cmd_simulate)

    pe = sub.add_parser("estimate", help="fit a model by quasi-maximum likelihood")
    pe.add_argument("--model", required=True)
    _add_panel_args(pe)
    pe.add_argument("--mode", choices=("futures", "joint"))
    pe.add_argument("--maturities", help=f"estimation series (default {','.join(DEFAULT_ESTIMATION)})")
    pe.add_argument("--config", help="FitConfig JSON file")
    pe.add_argument("--seed", type=int)
    pe.add_argument("--max-iter", type=int)
    pe.add_argument("--starts", type=int)
    pe.add_argument("--out")
    pe.set_defaults(func=_cmd_estimate)

    pf = sub.add_parser("filter", help="run the filter at fixed parameters")
    pf.add_argument("--params", required=True, help="ParamSet JSON or estimate result JSON")
    _add_panel_args(pf)
    pf.add_argument("--mode", choices=("futures", "joint"))
    pf.add_argument("--maturities")
    pf.add_argument("--out")
    pf.set_defaults(func=_cmd_filter)

    pv = sub.add_parser("evaluate", help="out-of-sample pricing of held-out maturities")
    pv.add_argument("--params", required=True, help="ParamSet JSON or estimate result JSON")
    _add_panel_args(pv)
    pv.add_argument("--mode", choices=("futures", "joint"))
    pv.add_argument("--holdout", help=f"held-out series (default {','.join(DEFAULT_HOLDOUT)})")
    pv.add_argument("--burn-in", type=int, default=50)
    pv.add_argument("--out")
    pv.set_defaults(func=_cmd_evaluate)

    pr = sub.add_parser("report", help="aggregate result JSONs into tables")
    pr.add_argument("--inputs", nargs="+", required=True)
    pr.add_argument("--out")
    pr.set_defaults(func=_cmd_report)
    return ap


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CTSM_LOGLEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CtsmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
