"""Out-of-sample pricing errors and predictive likelihood.

The protocol filters states from the estimation maturities only, prices the
held-out maturities from those filtered states, and reports RMSE and MAPE
on log prices in percent.  The predictive log-likelihood runs the same
filter code path over the held-out futures stack at the fitted parameters,
so with an identical stack it reproduces the in-sample value exactly.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPanel, LengthMismatch, ZeroDenominator
from .kalman import NoiseSpec, Panel, run_filter
from .loadings import loading_curves
from .models import ParamSet, build_model

logger = logging.getLogger(__name__)

BURN_IN = 50


def rmse(observed, predicted) -> float:
    y = np.asarray(observed, dtype=float).ravel()
    yh = np.asarray(predicted, dtype=float).ravel()
    if y.shape != yh.shape:
        raise LengthMismatch(f"length {y.shape[0]} vs {yh.shape[0]}")
    if y.size == 0:
        raise LengthMismatch("empty input")
    return float(np.sqrt(np.mean((y - yh) ** 2)))


def mape(observed, predicted, absolute: bool = False) -> float:
    """Mean absolute error relative to the observation.

    The default divides by the signed observation, which is the definition
    used in the reported tables; absolute=True divides by |observation|
    instead (the conventional variant, labeled as such in reports).
    """
    y = np.asarray(observed, dtype=float).ravel()
    yh = np.asarray(predicted, dtype=float).ravel()
    if y.shape != yh.shape:
        raise LengthMismatch(f"length {y.shape[0]} vs {yh.shape[0]}")
    if y.size == 0:
        raise LengthMismatch("empty input")
    if np.any(y == 0.0):
        raise ZeroDenominator("observation equal to zero in MAPE denominator")
    den = np.abs(y) if absolute else y
    return float(np.mean(np.abs(y - yh) / den))


@dataclass
class EvalReport:
    """Held-out pricing errors for one model, in percent of log price."""

    model_id: str
    mode: str
    holdout_labels: tuple[str, ...]
    rmse_by_label: dict
    mape_by_label: dict
    rmse_mean: float
    mape_mean: float
    rmse_by_label_full: dict
    mape_by_label_full: dict
    rmse_mean_full: float
    mape_mean_full: float
    predictive_loglik: float
    n_dates: int
    burn_in: int
    extras: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {
            "model_id": self.model_id,
            "mode": self.mode,
            "holdout_labels": list(self.holdout_labels),
            "rmse_by_label": self.rmse_by_label,
            "mape_by_label": self.mape_by_label,
            "rmse_mean": self.rmse_mean,
            "mape_mean": self.mape_mean,
            "rmse_by_label_full": self.rmse_by_label_full,
            "mape_by_label_full": self.mape_by_label_full,
            "rmse_mean_full": self.rmse_mean_full,
            "mape_mean_full": self.mape_mean_full,
            "predictive_loglik": self.predictive_loglik,
            "n_dates": self.n_dates,
            "burn_in": self.burn_in,
        }
        if self.extras:
            d["extras"] = self.extras
        return json.dumps(d, indent=2, sort_keys=True)


def evaluation_table(reports) -> str:
    """CSV with metric rows and one column per model."""
    reports = list(reports)
    if not reports:
        raise LengthMismatch("no reports")
    labels = reports[0].holdout_labels
    for r in reports[1:]:
        if r.holdout_labels != labels:
            raise LengthMismatch("reports cover different holdout series")
    lines = ["metric," + ",".join(r.model_id for r in reports)]
    for lab in labels:
        lines.append(
            f"RMSE({lab})," + ",".join(f"{r.rmse_by_label[lab]:.6f}" for r in reports)
        )
    lines.append("RMSE mean," + ",".join(f"{r.rmse_mean:.6f}" for r in reports))
    for lab in labels:
        lines.append(
            f"MAPE({lab})," + ",".join(f"{r.mape_by_label[lab]:.6f}" for r in reports)
        )
    lines.append("MAPE mean," + ",".join(f"{r.mape_mean:.6f}" for r in reports))
    lines.append(
        "predictive loglik," + ",".join(f"{r.predictive_loglik:.4f}" for r in reports)
    )
    return "\n".join(lines) + "\n"


def _masked_metrics(values, mask, preds, labels, absolute):
    rm, mp = {}, {}
    for j, lab in enumerate(labels):
        m = mask[:, j]
        if m.sum() == 0:
            rm[lab] = float("nan")
            mp[lab] = float("nan")
            continue
        rm[lab] = 100.0 * rmse(values[m, j], preds[m, j])
        mp[lab] = 100.0 * mape(values[m, j], preds[m, j], absolute=absolute)
    finite = [v for v in rm.values() if np.isfinite(v)]
    rmean = float(np.mean(finite)) if finite else float("nan")
    finite = [v for v in mp.values() if np.isfinite(v)]
    mmean = float(np.mean(finite)) if finite else float("nan")
    return rm, mp, rmean, mmean


def out_of_sample(
    params: ParamSet,
    panel: Panel,
    holdout,
    mode: str = "futures",
    burn_in: int = BURN_IN,
    allow_overlap: bool = False,
    absolute_mape: bool = False,
    tau_margin: float = 0.05,
) -> EvalReport:
    """Price held-out maturities from states filtered on the rest.

    params carries the fitted values, with sigma_eps aligned to the
    estimation series.  mode says which data the filter may see when
    extracting states: "futures" drops yields, "joint" keeps them.  The
    predictive log-likelihood always uses the held-out futures stack only,
    with each held-out series assigned the noise level of the estimation
    series nearest to it in median maturity.  allow_overlap exists for the
    consistency identity where holdout equals the estimation set.
    """
    if mode not in ("futures", "joint"):
        raise ValueError("mode must be 'futures' or 'joint'")
    holdout = tuple(holdout)
    if not holdout:
        raise LengthMismatch("no holdout series given")
    missing = [l for l in holdout if l not in panel.fut_labels]
    if missing:
        raise LengthMismatch(f"holdout series not in panel: {missing}")
    if allow_overlap:
        est_labels = [l for l in panel.fut_labels]
    else:
        est_labels = [l for l in panel.fut_labels if l not in holdout]
        if not est_labels:
            raise EmptyPanel("holdout removes every futures series")

    est_panel = panel.select_futures(est_labels)
    if mode == "futures" or est_panel.n_yields == 0:
        est_panel = est_panel.without_yields()
        use_yields = False
    else:
        use_yields = True
    if len(params.sigma_eps) != len(est_labels):
        raise LengthMismatch(
            f"sigma_eps has {len(params.sigma_eps)} entries for "
            f"{len(est_labels)} estimation series"
        )
    if use_yields and len(params.sigma_psi) != est_panel.n_yields:
        raise LengthMismatch("sigma_psi does not match the yield series")

    hold_panel = panel.select_futures(holdout).without_yields()

    tau_all = panel.fut_tau[panel.fut_mask]
    tau_max = float(tau_all.max()) if tau_all.size else 0.5
    if panel.n_yields:
        tau_max = max(tau_max, float(panel.yld_tau.max()))
    spec = build_model(params)
    curves = loading_curves(spec, tau_max=tau_max + tau_margin, with_bonds=use_yields)

    noise_est = NoiseSpec(
        params.sigma_eps, params.sigma_psi if use_yields else ()
    )
    out_est = run_filter(spec, curves, est_panel, noise_est)
    x = out_est.x_filt

    alpha = curves.alpha_at(np.where(hold_panel.fut_mask, hold_panel.fut_tau, 0.0))
    beta = curves.beta_at(np.where(hold_panel.fut_mask, hold_panel.fut_tau, 0.0))
    preds = alpha + np.einsum("tmj,tj->tm", beta, x)

    t_len = panel.n_dates
    if burn_in >= t_len:
        raise LengthMismatch("burn-in longer than the panel")
    sl = slice(burn_in, None)
    rm, mp, rmean, mmean = _masked_metrics(
        hold_panel.fut_values[sl], hold_panel.fut_mask[sl], preds[sl],
        holdout, absolute_mape,
    )
    rm_f, mp_f, rmean_f, mmean_f = _masked_metrics(
        hold_panel.fut_values, hold_panel.fut_mask, preds, holdout, absolute_mape
    )

    est_med = [
        float(np.median(est_panel.fut_tau[:, j][est_panel.fut_mask[:, j]]))
        for j in range(est_panel.n_futures)
    ]
    sigma_map = []
    for j in range(hold_panel.n_futures):
        col = hold_panel.fut_tau[:, j][hold_panel.fut_mask[:, j]]
        med = float(np.median(col)) if col.size else 0.0
        nearest = int(np.argmin([abs(med - e) for e in est_med]))
        sigma_map.append(params.sigma_eps[nearest])
    pred_out = run_filter(spec, curves, hold_panel, NoiseSpec(tuple(sigma_map)))

    logger.info(
        "%s out-of-sample on %s: RMSE mean %.4f%%, predictive loglik %.2f",
        params.model_id, ",".join(holdout), rmean, pred_out.loglik,
    )
    return EvalReport(
        model_id=params.model_id,
        mode=mode,
        holdout_labels=holdout,
        rmse_by_label=rm,
        mape_by_label=mp,
        rmse_mean=rmean,
        mape_mean=mmean,
        rmse_by_label_full=rm_f,
        mape_by_label_full=mp_f,
        rmse_mean_full=rmean_f,
        mape_mean_full=mmean_f,
        predictive_loglik=pred_out.loglik,
        n_dates=t_len,
        burn_in=burn_in,
    )
