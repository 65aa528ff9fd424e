"""Quasi-likelihood estimation of term-structure model parameters.

The objective is the negative filter log-likelihood plus linear penalties
for covariance admissibility (positive semidefiniteness at the stationary
variance level) and for the positivity condition of square-root factors.
Optimization runs a multi-start Nelder-Mead search in unconstrained
coordinates, optionally polished by BFGS with central-difference gradients.
Standard errors come from the central-difference Hessian of the
log-likelihood in the constrained parameterization.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from . import models
from .errors import ConstraintViolation, CtsmError, DegenerateObjective
from .kalman import FilterOutput, NoiseSpec, Panel, run_filter
from .loadings import loading_curves
from .models import ParamSet

logger = logging.getLogger(__name__)

PENALTY_WEIGHT = 1e4
BAD_OBJECTIVE = 1e12
HESS_STEP = 1e-4


@dataclass
class FitConfig:
    """Budgets and switches for fit_mle.

    mode selects which series enter the likelihood: "futures" drops any
    yield columns, "joint" uses both.  free, when given, restricts the
    search to the named parameters and holds the rest at the start point.
    fatol is a relative likelihood tolerance; it is scaled by the starting
    objective magnitude before being handed to the simplex.
    """

    mode: str = "futures"
    seed: int = 0
    n_starts: int = 5
    max_iter: int = 4000
    fatol: float = 1e-7
    xatol: float = 1e-6
    polish: bool = True
    polish_maxiter: int = 150
    perturb_sigma: float = 0.25
    free: tuple[str, ...] | None = None
    start: ParamSet | None = None
    compute_se: bool = True
    tau_margin: float = 0.05

    def __post_init__(self):
        if self.mode not in ("futures", "joint"):
            raise ValueError("mode must be 'futures' or 'joint'")
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.max_iter < 0 or self.polish_maxiter < 0:
            raise ValueError("iteration budgets must be non-negative")
        if self.free is not None:
            self.free = tuple(self.free)

    def to_json(self) -> str:
        d = {
            "mode": self.mode, "seed": self.seed, "n_starts": self.n_starts,
            "max_iter": self.max_iter, "fatol": self.fatol, "xatol": self.xatol,
            "polish": self.polish, "polish_maxiter": self.polish_maxiter,
            "perturb_sigma": self.perturb_sigma,
            "free": list(self.free) if self.free is not None else None,
            "start": json.loads(self.start.to_json()) if self.start is not None else None,
            "compute_se": self.compute_se, "tau_margin": self.tau_margin,
        }
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FitConfig":
        d = json.loads(text)
        start = d.pop("start", None)
        free = d.pop("free", None)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        if free is not None:
            cfg.free = tuple(free)
        if start is not None:
            cfg.start = ParamSet.from_json(json.dumps(start))
        return cfg


@dataclass
class EstimationResult:
    model_id: str
    params: ParamSet
    loglik: float
    penalty: float
    se: dict
    aic: float
    bic: float
    aic_per_obs: float
    bic_per_obs: float
    n_obs: int
    mode: str
    converged: bool
    trace: list = field(default_factory=list)
    filter_output: FilterOutput | None = None

    def to_json(self) -> str:
        d = {
            "model_id": self.model_id,
            "params": json.loads(self.params.to_json()),
            "loglik": self.loglik,
            "penalty": self.penalty,
            "se": {k: (v if math.isfinite(v) else None) for k, v in self.se.items()},
            "aic": self.aic, "bic": self.bic,
            "aic_per_obs": self.aic_per_obs, "bic_per_obs": self.bic_per_obs,
            "n_obs": self.n_obs, "mode": self.mode,
            "converged": self.converged, "trace": self.trace,
        }
        if self.filter_output is not None:
            labs = list(self.filter_output.labels)
            k = len(self.params.sigma_eps)
            d["futures_labels"] = labs[:k]
            d["yield_labels"] = labs[k:]
        return json.dumps(d, indent=2, sort_keys=True)


def information_criteria(loglik: float, k: int, n_obs: int) -> dict:
    """AIC/BIC totals plus the per-observation normalization of each."""
    if k < 0:
        raise ValueError("k must be non-negative")
    if n_obs < 1:
        raise ValueError("n_obs must be at least 1")
    aic = 2.0 * k - 2.0 * loglik
    bic = k * math.log(n_obs) - 2.0 * loglik
    return {
        "aic": aic,
        "bic": bic,
        "aic_per_obs": aic / n_obs,
        "bic_per_obs": bic / n_obs,
    }


def _panel_tau_max(panel: Panel, margin: float) -> float:
    taus = panel.fut_tau[panel.fut_mask]
    tmax = float(taus.max()) if taus.size else 0.5
    if panel.n_yields:
        tmax = max(tmax, float(panel.yld_tau.max()))
    return tmax + margin


def penalty_terms(spec) -> float:
    return models.psd_gap(spec) + models.feller_gap(spec, "p") + models.feller_gap(spec, "q")


def loglik_for(params: ParamSet, panel: Panel, tau_margin: float = 0.05) -> tuple[float, FilterOutput]:
    """Filter log-likelihood of a panel at fixed parameters."""
    spec = models.build_model(params)
    curves = loading_curves(
        spec, tau_max=_panel_tau_max(panel, tau_margin), with_bonds=panel.n_yields > 0
    )
    noise = NoiseSpec(params.sigma_eps, params.sigma_psi)
    out = run_filter(spec, curves, panel, noise)
    return out.loglik, out


def _objective(model_id: str, panel: Panel, theta_full: np.ndarray,
               free_idx: np.ndarray, tau_max: float):
    n_fut, n_yld = panel.n_futures, panel.n_yields

    def fun(u: np.ndarray) -> float:
        theta = theta_full.copy()
        theta[free_idx] = u
        try:
            params = models.unpack(model_id, theta, n_fut, n_yld)
            spec = models.build_model(params, check=False)
            pen = PENALTY_WEIGHT * penalty_terms(spec)
            curves = loading_curves(spec, tau_max=tau_max, with_bonds=n_yld > 0)
            noise = NoiseSpec(params.sigma_eps, params.sigma_psi)
            out = run_filter(spec, curves, panel, noise)
            if not math.isfinite(out.loglik):
                return BAD_OBJECTIVE
            return -out.loglik + pen
        except CtsmError:
            return BAD_OBJECTIVE
        except (np.linalg.LinAlgError, ValueError, OverflowError, FloatingPointError):
            return BAD_OBJECTIVE

    return fun


def _align_start(start: ParamSet, model_id: str, n_fut: int, n_yld: int) -> ParamSet:
    if start.model_id != model_id:
        raise ConstraintViolation(
            f"start parameters are for {start.model_id}, fitting {model_id}"
        )
    eps = start.sigma_eps
    psi = start.sigma_psi
    if len(eps) != n_fut:
        if len(eps) == 0:
            eps = (models.DEFAULT_SIGMA_EPS,) * n_fut
        else:
            raise ConstraintViolation("start sigma_eps count does not match panel")
    if len(psi) != n_yld:
        if n_yld == 0:
            psi = ()
        elif len(psi) == 0:
            psi = (models.DEFAULT_SIGMA_PSI,) * n_yld
        else:
            raise ConstraintViolation("start sigma_psi count does not match panel")
    return ParamSet(model_id, dict(start.values), eps, psi)


def _apply_constrained(params: ParamSet, names, vals) -> ParamSet:
    values = dict(params.values)
    eps = list(params.sigma_eps)
    psi = list(params.sigma_psi)
    for nm, v in zip(names, vals):
        if nm.startswith("sigma_eps_"):
            eps[int(nm.rsplit("_", 1)[1]) - 1] = float(v)
        elif nm.startswith("sigma_psi_"):
            psi[int(nm.rsplit("_", 1)[1]) - 1] = float(v)
        else:
            values[nm] = float(v)
    return ParamSet(params.model_id, values, tuple(eps), tuple(psi))


def _constrained_values(params: ParamSet, names) -> np.ndarray:
    out = []
    for nm in names:
        if nm.startswith("sigma_eps_"):
            out.append(params.sigma_eps[int(nm.rsplit("_", 1)[1]) - 1])
        elif nm.startswith("sigma_psi_"):
            out.append(params.sigma_psi[int(nm.rsplit("_", 1)[1]) - 1])
        else:
            out.append(params.values[nm])
    return np.asarray(out, dtype=float)


def hessian(fun, x: np.ndarray, step: float = HESS_STEP) -> np.ndarray:
    """Central-difference Hessian with per-coordinate steps step*(1+|x_i|)."""
    x = np.asarray(x, dtype=float)
    k = x.shape[0]
    hs = step * (1.0 + np.abs(x))
    f0 = fun(x)
    h_mat = np.empty((k, k))
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = hs[i]
        h_mat[i, i] = (fun(x + ei) - 2.0 * f0 + fun(x - ei)) / hs[i] ** 2
    for i in range(k):
        ei = np.zeros(k)
        ei[i] = hs[i]
        for j in range(i + 1, k):
            ej = np.zeros(k)
            ej[j] = hs[j]
            val = (
                fun(x + ei + ej) - fun(x + ei - ej)
                - fun(x - ei + ej) + fun(x - ei - ej)
            ) / (4.0 * hs[i] * hs[j])
            h_mat[i, j] = h_mat[j, i] = val
    return h_mat


def standard_errors(loglik_fn, theta: np.ndarray, step: float = HESS_STEP) -> np.ndarray:
    """Observed-information standard errors at a maximum of loglik_fn.

    Returns sqrt of the diagonal of the inverse negative Hessian; entries
    where the Hessian is not usable come back as NaN rather than raising.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.full(theta.shape[0], np.nan)
    try:
        h_mat = hessian(loglik_fn, theta, step)
    except Exception:
        logger.warning("Hessian evaluation failed; standard errors unavailable")
        return out
    if not np.isfinite(h_mat).all():
        logger.warning("Hessian has non-finite entries; standard errors unavailable")
        return out
    try:
        cov = np.linalg.inv(-h_mat)
    except np.linalg.LinAlgError:
        logger.warning("Hessian is singular; standard errors unavailable")
        return out
    diag = np.diag(cov)
    good = diag > 0
    out[good] = np.sqrt(diag[good])
    if not good.all():
        logger.warning(
            "Hessian not negative definite; %d of %d standard errors unavailable",
            int((~good).sum()), good.size,
        )
    return out


def fit_mle(model_id: str, panel: Panel, config: FitConfig | None = None) -> EstimationResult:
    """Maximize the filter quasi-likelihood over model parameters.

    Deterministic for a fixed config.seed.  A failed convergence test flags
    the result instead of raising; DegenerateObjective is raised only when
    every start produced a non-finite likelihood.
    """
    config = config if config is not None else FitConfig()
    panel_use = panel.without_yields() if config.mode == "futures" else panel
    if config.mode == "joint" and panel_use.n_yields < 1:
        raise ValueError("joint mode requires at least one yield series")
    n_fut, n_yld = panel_use.n_futures, panel_use.n_yields

    start = _align_start(
        config.start if config.start is not None else models.default_params(model_id, n_fut, n_yld),
        model_id, n_fut, n_yld,
    )
    names = models.param_names(model_id, n_fut, n_yld)
    if config.free is None:
        free_names = list(names)
    else:
        unknown = [nm for nm in config.free if nm not in names]
        if unknown:
            raise ConstraintViolation(f"unknown free parameters: {unknown}")
        free_names = [nm for nm in names if nm in config.free]
    free_idx = np.array([names.index(nm) for nm in free_names], dtype=int)

    tau_max = _panel_tau_max(panel_use, config.tau_margin)
    theta_full = models.pack(start)
    fun = _objective(model_id, panel_use, theta_full, free_idx, tau_max)

    rng = np.random.default_rng(config.seed)
    u0 = theta_full[free_idx]
    starts = [u0]
    for _ in range(config.n_starts - 1):
        starts.append(u0 + config.perturb_sigma * rng.standard_normal(u0.shape[0]))

    trace = []
    best_u, best_f, best_ok = None, np.inf, False
    for si, u in enumerate(starts):
        f_init = fun(u)
        if config.max_iter == 0:
            rec = {"start": si, "nit": 0, "nfev": 1, "fun": f_init, "converged": True}
            cand_u, cand_f, cand_ok = u, f_init, True
        else:
            scale = max(1.0, abs(f_init)) if f_init < BAD_OBJECTIVE else 1.0
            res = optimize.minimize(
                fun, u, method="Nelder-Mead",
                options={
                    "maxiter": config.max_iter,
                    "maxfev": 2 * config.max_iter,
                    "fatol": config.fatol * scale,
                    "xatol": config.xatol,
                    "adaptive": True,
                },
            )
            rec = {
                "start": si, "nit": int(res.nit), "nfev": int(res.nfev),
                "fun": float(res.fun), "converged": bool(res.success),
            }
            cand_u, cand_f, cand_ok = res.x, float(res.fun), bool(res.success)
        trace.append(rec)
        logger.info("start %d: objective %.6f after %d evals", si, rec["fun"], rec["nfev"])
        if cand_f < best_f:
            best_u, best_f, best_ok = cand_u, cand_f, cand_ok

    if best_f >= BAD_OBJECTIVE:
        raise DegenerateObjective(
            f"all {config.n_starts} starts produced a non-finite likelihood"
        )

    if config.polish and config.polish_maxiter > 0 and config.max_iter > 0:
        res = optimize.minimize(
            fun, best_u, method="BFGS", jac="3-point",
            options={"maxiter": config.polish_maxiter, "finite_diff_rel_step": HESS_STEP},
        )
        trace.append({
            "start": "polish", "nit": int(res.nit), "nfev": int(res.nfev),
            "fun": float(res.fun), "converged": bool(res.success),
        })
        if math.isfinite(res.fun) and res.fun < best_f:
            best_u, best_f = res.x, float(res.fun)
            best_ok = True
    if not best_ok:
        logger.warning("optimizer did not meet its convergence test; result flagged")

    theta_star = theta_full.copy()
    theta_star[free_idx] = best_u
    params_star = models.unpack(model_id, theta_star, n_fut, n_yld)
    spec_star = models.build_model(params_star, check=False)
    pen_star = PENALTY_WEIGHT * penalty_terms(spec_star)
    curves = loading_curves(spec_star, tau_max=tau_max, with_bonds=n_yld > 0)
    out_star = run_filter(
        spec_star, curves, panel_use, NoiseSpec(params_star.sigma_eps, params_star.sigma_psi)
    )

    se = {nm: float("nan") for nm in names}
    if config.compute_se:
        c_star = _constrained_values(params_star, free_names)

        def ll_c(c):
            try:
                p = _apply_constrained(params_star, free_names, c)
                return loglik_for(p, panel_use, config.tau_margin)[0]
            except CtsmError:
                return np.nan
            except (np.linalg.LinAlgError, ValueError, OverflowError):
                return np.nan

        se_vals = standard_errors(ll_c, c_star)
        for nm, v in zip(free_names, se_vals):
            se[nm] = float(v)

    n_obs = panel_use.n_obs
    ics = information_criteria(out_star.loglik, len(free_names), n_obs)
    return EstimationResult(
        model_id=model_id,
        params=params_star,
        loglik=out_star.loglik,
        penalty=pen_star,
        se=se,
        aic=ics["aic"], bic=ics["bic"],
        aic_per_obs=ics["aic_per_obs"], bic_per_obs=ics["bic_per_obs"],
        n_obs=n_obs,
        mode=config.mode,
        converged=best_ok,
        trace=trace,
        filter_output=out_star,
    )
