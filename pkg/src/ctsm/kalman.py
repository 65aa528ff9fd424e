"""Quasi-optimal Kalman filtering of futures/yield panels.

The state transition is the Euler discretization of the physical-measure
dynamics, except that square-root coordinates advance by their exact
conditional mean exp(-k h) (x + h k mu).  The predicted covariance uses the
linearized propagator (I + B h) plus h times the diffusion covariance
evaluated at the filtered state.  Observations stack log futures prices over
the date's contract maturities and, when present, zero yields at fixed
tenors; the update is the standard linear step with per-series measurement
variances, and the per-date Gaussian log-likelihood uses the number of
observations actually seen on that date.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .affine import AffineModelSpec, covariance_at_state
from .errors import EmptyPanel, LengthMismatch, SingularInnovation
from .loadings import LoadingCurves, initial_slope

logger = logging.getLogger(__name__)

V_FLOOR = 1e-8
COND_LIMIT = 1e14
TRADING_DAYS = 252.0


@dataclass
class Panel:
    """Aligned panel of log futures prices and zero yields.

    fut_values are log prices with per-date maturities fut_tau; yields are
    decimals at fixed tenors yld_tau.  Masks flag which entries are observed.
    """

    dates: np.ndarray
    fut_values: np.ndarray
    fut_tau: np.ndarray
    fut_labels: tuple[str, ...]
    fut_mask: np.ndarray | None = None
    yld_values: np.ndarray | None = None
    yld_tau: np.ndarray | None = None
    yld_labels: tuple[str, ...] = ()
    yld_mask: np.ndarray | None = None
    h: float = 1.0 / TRADING_DAYS

    def __post_init__(self):
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        t = self.dates.shape[0]
        if t == 0:
            raise EmptyPanel("panel has no dates")
        if t > 1 and not (self.dates[1:] > self.dates[:-1]).all():
            raise ValueError("panel dates must be strictly increasing")
        self.fut_values = np.atleast_2d(np.asarray(self.fut_values, dtype=float))
        self.fut_tau = np.atleast_2d(np.asarray(self.fut_tau, dtype=float))
        self.fut_labels = tuple(self.fut_labels)
        if self.fut_values.shape != (t, len(self.fut_labels)):
            raise LengthMismatch("futures values shape does not match dates/labels")
        if self.fut_tau.shape != self.fut_values.shape:
            raise LengthMismatch("futures maturity array shape mismatch")
        if self.fut_mask is None:
            self.fut_mask = np.isfinite(self.fut_values)
        self.fut_mask = np.asarray(self.fut_mask, dtype=bool)
        if self.fut_mask.shape != self.fut_values.shape:
            raise LengthMismatch("futures mask shape mismatch")
        if self.yld_values is None:
            self.yld_values = np.zeros((t, 0))
            self.yld_tau = np.zeros(0)
            self.yld_mask = np.zeros((t, 0), dtype=bool)
        else:
            self.yld_values = np.atleast_2d(np.asarray(self.yld_values, dtype=float))
            self.yld_tau = np.atleast_1d(np.asarray(self.yld_tau, dtype=float))
            if self.yld_values.shape != (t, self.yld_tau.shape[0]):
                raise LengthMismatch("yield values shape does not match tenors")
            if self.yld_mask is None:
                self.yld_mask = np.isfinite(self.yld_values)
            self.yld_mask = np.asarray(self.yld_mask, dtype=bool)
            if self.yld_mask.shape != self.yld_values.shape:
                raise LengthMismatch("yield mask shape mismatch")
        self.yld_labels = tuple(self.yld_labels)
        if len(self.yld_labels) != self.yld_tau.shape[0]:
            self.yld_labels = tuple(f"R{i + 1}" for i in range(self.yld_tau.shape[0]))
        if not np.isfinite(self.fut_values[self.fut_mask]).all():
            raise ValueError("observed futures entries must be finite")
        if self.fut_mask.any() and not (self.fut_tau[self.fut_mask] > 0).all():
            raise ValueError("observed futures must have positive time to maturity")
        if self.yld_mask.size and not np.isfinite(self.yld_values[self.yld_mask]).all():
            raise ValueError("observed yield entries must be finite")

    @property
    def n_dates(self) -> int:
        return self.dates.shape[0]

    @property
    def n_futures(self) -> int:
        return len(self.fut_labels)

    @property
    def n_yields(self) -> int:
        return self.yld_tau.shape[0]

    @property
    def n_obs(self) -> int:
        return int(self.fut_mask.sum() + self.yld_mask.sum())

    def select_futures(self, labels) -> "Panel":
        """Panel restricted to the given futures labels (yields kept)."""
        labels = list(labels)
        missing = [l for l in labels if l not in self.fut_labels]
        if missing:
            raise LengthMismatch(f"labels not in panel: {missing}")
        idx = [self.fut_labels.index(l) for l in labels]
        return Panel(
            self.dates, self.fut_values[:, idx], self.fut_tau[:, idx],
            tuple(labels), self.fut_mask[:, idx],
            self.yld_values.copy() if self.n_yields else None,
            self.yld_tau.copy() if self.n_yields else None,
            self.yld_labels, self.yld_mask.copy() if self.n_yields else None, self.h,
        )

    def without_yields(self) -> "Panel":
        return Panel(self.dates, self.fut_values, self.fut_tau, self.fut_labels,
                     self.fut_mask, None, None, (), None, self.h)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-series measurement noise standard deviations."""

    sigma_eps: tuple[float, ...]
    sigma_psi: tuple[float, ...] = ()

    def __post_init__(self):
        eps = tuple(float(s) for s in self.sigma_eps)
        psi = tuple(float(s) for s in self.sigma_psi)
        object.__setattr__(self, "sigma_eps", eps)
        object.__setattr__(self, "sigma_psi", psi)
        for s in eps + psi:
            if not (np.isfinite(s) and s > 0):
                raise ValueError("noise standard deviations must be strictly positive")

    def variances(self) -> np.ndarray:
        return np.asarray(self.sigma_eps + self.sigma_psi, dtype=float) ** 2


@dataclass
class FilterState:
    """Mean and covariance of the state conditional on data seen so far."""

    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float).copy()
        self.p = np.asarray(self.p, dtype=float).copy()
        n = self.x.shape[0]
        if self.p.shape != (n, n):
            raise LengthMismatch("state covariance shape mismatch")


@dataclass
class FilterOutput:
    dates: np.ndarray
    labels: tuple[str, ...]
    x_filt: np.ndarray
    p_filt: np.ndarray
    x_pred: np.ndarray
    innovations: np.ndarray
    innovation_cov: list
    loglik_terms: np.ndarray
    loglik: float

    def innovation_summary(self) -> dict:
        out = {}
        for j, label in enumerate(self.labels):
            col = self.innovations[:, j]
            col = col[np.isfinite(col)]
            out[label] = {
                "n": int(col.size),
                "mean": float(col.mean()) if col.size else float("nan"),
                "std": float(col.std(ddof=1)) if col.size > 1 else float("nan"),
            }
        return out

    def to_csv(self, path) -> None:
        import pandas as pd

        n = self.x_filt.shape[1]
        cols = {"date": self.dates.astype(str)}
        for i in range(n):
            cols[f"x_{i + 1}"] = self.x_filt[:, i]
        for j, label in enumerate(self.labels):
            cols[f"innov_{label}"] = self.innovations[:, j]
        cols["loglik"] = self.loglik_terms
        pd.DataFrame(cols).to_csv(path, index=False)

    def summary_json(self) -> str:
        return json.dumps(
            {
                "loglik": self.loglik,
                "n_dates": int(self.dates.shape[0]),
                "innovations": self.innovation_summary(),
            },
            indent=2,
        )


def predict_state(spec: AffineModelSpec, state: FilterState, h: float) -> FilterState:
    """One-step-ahead state prediction under the physical measure."""
    x, p = state.x, state.p
    f = np.eye(spec.n) + spec.b_p * h
    x_pred = spec.a_p * h + f @ x
    for fac in spec.sqrt_factors:
        x_pred[fac.index] = np.exp(-fac.k_p * h) * (x[fac.index] + h * fac.a_p)
    sig = covariance_at_state(spec, x, clamp=True)
    p_pred = f @ p @ f.T + h * sig
    return FilterState(x_pred, 0.5 * (p_pred + p_pred.T))


def build_observation(
    curves: LoadingCurves,
    fut_tau: np.ndarray,
    yld_tau: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Intercept vector and loading matrix for one date's observation stack.

    Futures rows are (alpha(tau_i), beta(tau_i)); yield rows follow as
    (-gamma(tau_j)/tau_j, -zeta(tau_j)/tau_j).
    """
    fut_tau = np.atleast_1d(np.asarray(fut_tau, dtype=float))
    a = curves.alpha_at(fut_tau)
    h_mat = curves.beta_at(fut_tau)
    if yld_tau is not None and len(np.atleast_1d(yld_tau)):
        yt = np.atleast_1d(np.asarray(yld_tau, dtype=float))
        a = np.concatenate([a, -curves.gamma_at(yt) / yt])
        h_mat = np.vstack([h_mat, -curves.zeta_at(yt) / yt[:, None]])
    return a, h_mat


def update(
    state_pred: FilterState,
    intercept: np.ndarray,
    loading: np.ndarray,
    y: np.ndarray,
    noise_var: np.ndarray,
) -> tuple[FilterState, np.ndarray, np.ndarray, float]:
    """Measurement update; returns (state, innovation, V, loglik term)."""
    x, p = state_pred.x, state_pred.p
    hp = loading @ p
    v = hp @ loading.T + np.diag(noise_var)
    e = y - intercept - loading @ x
    try:
        low = np.linalg.cholesky(v)
    except np.linalg.LinAlgError:
        raise SingularInnovation("innovation covariance is not positive definite")
    dmin, dmax = np.diag(low).min(), np.diag(low).max()
    if dmin <= 0 or (dmax / dmin) ** 2 > COND_LIMIT:
        raise SingularInnovation(
            f"innovation covariance condition above {COND_LIMIT:g}"
        )
    u = solve_triangular(low, e, lower=True, check_finite=False)
    w = solve_triangular(low, hp, lower=True, check_finite=False)
    x_new = x + w.T @ u
    p_new = p - w.T @ w
    p_new = 0.5 * (p_new + p_new.T)
    d = y.shape[0]
    ll = -0.5 * (d * np.log(2.0 * np.pi) + 2.0 * np.log(np.diag(low)).sum() + u @ u)
    return FilterState(x_new, p_new), e, v, float(ll)


def default_init(spec: AffineModelSpec, panel: Panel) -> FilterState:
    """Data-driven starting state: spot from the shortest log futures price,
    the rate from the shortest yield (stationary level without yields), the
    carry factor backed out of the annualized slope of the two shortest log
    futures, variance at its stationary level, diffuse prior variances."""
    x = (
        np.array(spec.typical_state, dtype=float)
        if spec.typical_state is not None
        else np.zeros(spec.n)
    )
    obs = panel.fut_mask[0]
    order = np.argsort(panel.fut_tau[0])
    order = [i for i in order if obs[i]]
    if order:
        x[0] = panel.fut_values[0, order[0]]
        for i in spec.unit_root_indices:
            x[i] = x[0]
    if spec.short_rate_index is not None and panel.n_yields:
        yobs = panel.yld_mask[0]
        yorder = [j for j in np.argsort(panel.yld_tau) if yobs[j]]
        if yorder:
            x[spec.short_rate_index] = panel.yld_values[0, yorder[0]]
    if spec.vol_index is not None:
        x[spec.vol_index] = max(spec.stationary_v(), spec.v_min)
    if spec.carry_index is not None and len(order) >= 2:
        i0, i1 = order[0], order[1]
        dt = panel.fut_tau[0, i1] - panel.fut_tau[0, i0]
        if dt > 1e-10:
            slope = (panel.fut_values[0, i1] - panel.fut_values[0, i0]) / dt
            a0, b0 = initial_slope(spec)
            coeff = b0[spec.carry_index]
            if abs(coeff) > 1e-12:
                rest = a0 + b0 @ x - coeff * x[spec.carry_index]
                x[spec.carry_index] = (slope - rest) / coeff
    p0 = np.eye(spec.n) * 1e-2
    for i in spec.unit_root_indices:
        p0[i, i] = 1e-1
    return FilterState(x, p0)


def run_filter(
    spec: AffineModelSpec,
    curves: LoadingCurves,
    panel: Panel,
    noise: NoiseSpec,
    init: FilterState | None = None,
) -> FilterOutput:
    """Filter a panel and accumulate the quasi-likelihood.

    The initial state acts as the prediction for the first date (no time
    step before the first update).  Missing observations are dropped
    row-wise from the date's stack.  Deterministic: no randomness anywhere.
    """
    if len(noise.sigma_eps) != panel.n_futures or len(noise.sigma_psi) != panel.n_yields:
        raise LengthMismatch("noise dimensions do not match panel series")
    if init is None:
        init = default_init(spec, panel)
    if init.x.shape[0] != spec.n:
        raise LengthMismatch("initial state dimension does not match model")

    t_len, n = panel.n_dates, spec.n
    n_fut, n_yld = panel.n_futures, panel.n_yields
    m = n_fut + n_yld

    alpha_f = curves.alpha_at(np.where(panel.fut_mask, panel.fut_tau, 0.0))
    beta_f = curves.beta_at(np.where(panel.fut_mask, panel.fut_tau, 0.0))
    if n_yld:
        a_y, h_y = build_observation(curves, np.zeros(0), panel.yld_tau)
    var_all = noise.variances()

    x_filt = np.empty((t_len, n))
    p_filt = np.empty((t_len, n, n))
    x_pred = np.empty((t_len, n))
    innov = np.full((t_len, m), np.nan)
    vmats: list = []
    ll_terms = np.zeros(t_len)

    state = FilterState(init.x, init.p)
    floor_idx = sorted(
        {spec.vol_index} | {f.index for f in spec.sqrt_factors}
        if spec.vol_index is not None
        else {f.index for f in spec.sqrt_factors}
    )
    for t in range(t_len):
        if t > 0:
            state = predict_state(spec, state, panel.h)
        x_pred[t] = state.x
        fmask = panel.fut_mask[t]
        ymask = panel.yld_mask[t] if n_yld else np.zeros(0, dtype=bool)
        rows = np.concatenate([fmask, ymask])
        if rows.any():
            a_t = alpha_f[t]
            h_t = beta_f[t]
            y_t = panel.fut_values[t]
            if n_yld:
                a_t = np.concatenate([a_t, a_y])
                h_t = np.vstack([h_t, h_y])
                y_t = np.concatenate([y_t, panel.yld_values[t]])
            try:
                state, e, v, ll = update(
                    state, a_t[rows], h_t[rows], y_t[rows], var_all[rows]
                )
            except SingularInnovation as exc:
                raise SingularInnovation(f"{exc} on {panel.dates[t]}") from None
            innov[t, rows] = e
            vmats.append(v)
            ll_terms[t] = ll
        else:
            vmats.append(np.zeros((0, 0)))
        for i in floor_idx:
            if state.x[i] < V_FLOOR:
                state.x[i] = V_FLOOR
        x_filt[t] = state.x
        p_filt[t] = state.p

    labels = panel.fut_labels + panel.yld_labels
    return FilterOutput(
        dates=panel.dates,
        labels=labels,
        x_filt=x_filt,
        p_filt=p_filt,
        x_pred=x_pred,
        innovations=innov,
        innovation_cov=vmats,
        loglik_terms=ll_terms,
        loglik=float(ll_terms.sum()),
    )
