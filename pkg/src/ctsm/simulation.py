"""Path simulation under either measure and Monte Carlo pricing checks.

Non-square-root coordinates advance by an Euler step with shocks drawn
through the factor of the state-dependent covariance.  Square-root
coordinates advance by a Lamperti/Lie-Trotter split step that is
non-negative by construction and whose one-step mean equals
exp(-k h) (v + h k mu) exactly.  The same standard normal vector drives
both parts of the step, so cross-correlations between the variance row
and the Euler rows are respected.

Paths are generated in fixed-size chunks of 8192 with one splittable RNG
substream per chunk; results are deterministic per seed and do not depend
on scheduling, and growing n_paths leaves earlier paths unchanged.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .affine import AffineModelSpec, cholesky_stack, psd_factor
from .errors import FellerViolation, LengthMismatch
from .kalman import Panel, TRADING_DAYS
from .loadings import loading_curves
from .models import ParamSet, build_model

logger = logging.getLogger(__name__)

CHUNK = 8192
MC_STEP = 1.0 / 504.0


@dataclass(frozen=True)
class SimConfig:
    n_paths: int
    n_steps: int
    h: float
    seed: int
    measure: str = "p"
    x0: np.ndarray | None = None
    antithetic: bool = False

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be at least 1")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")
        if not (self.h > 0):
            raise ValueError("step size h must be positive")
        if self.seed is None or int(self.seed) < 0:
            raise ValueError("a non-negative integer seed is required")
        if self.measure not in ("p", "q"):
            raise ValueError("measure must be 'p' or 'q'")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even n_paths")
        if self.x0 is not None:
            object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).copy())


def lie_trotter_step(v, k: float, mu: float, gamma, shocks, h: float):
    """Split-step update for a square-root coordinate.

    v' = exp(-k h) (sqrt(v + 2 nu h) + sum_i gamma_i sqrt(h) shock_i)^2
    with nu = (4 k mu - sum_i (2 gamma_i)^2) / 8.  Broadcasts over leading
    axes of v and shocks.
    """
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    nu = (4.0 * k * mu - np.sum((2.0 * gamma) ** 2)) / 8.0
    if nu <= 0:
        raise FellerViolation(
            f"split-step scheme needs 4 k mu > sum (2 gamma_i)^2; nu = {nu:.3e}"
        )
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("v must be non-negative")
    shocks = np.asarray(shocks, dtype=float)
    dz = math.sqrt(h) * shocks @ gamma
    return np.exp(-k * h) * (np.sqrt(v + 2.0 * nu * h) + dz) ** 2


def default_x0(spec: AffineModelSpec) -> np.ndarray:
    """Plausible starting state for synthetic runs: spot near log(20),
    mean-reverting factors at their stationary levels."""
    if spec.typical_state is not None:
        x = np.array(spec.typical_state, dtype=float)
        x[0] = math.log(20.0)
        return x
    x = np.zeros(spec.n)
    x[0] = math.log(20.0)
    sqrt_idx = {f.index for f in spec.sqrt_factors}
    for fac in spec.sqrt_factors:
        x[fac.index] = max(fac.level_p(), spec.v_min)
    if spec.vol_index is not None and spec.vol_index not in sqrt_idx:
        x[spec.vol_index] = max(spec.stationary_v(), spec.v_min)
    for i in range(1, spec.n):
        if i in sqrt_idx or i == spec.vol_index or i in spec.unit_root_indices:
            continue
        row = np.asarray(spec.b_p)[i]
        off = np.delete(row, i)
        if row[i] < 0 and np.all(off == 0):
            x[i] = spec.a_p[i] / (-row[i])
    for i in spec.unit_root_indices:
        x[i] = x[0]
    return x


def _measure_arrays(spec: AffineModelSpec, measure: str):
    if measure == "q":
        a, b = np.asarray(spec.a_q), np.asarray(spec.b_q)
    else:
        a, b = np.asarray(spec.a_p), np.asarray(spec.b_p)
    facs = []
    for f in spec.sqrt_factors:
        k, drift_const = (f.k_q, f.a_q) if measure == "q" else (f.k_p, f.a_p)
        facs.append((f.index, k, drift_const))
    return a, b, facs


def _sqrt_setup(spec: AffineModelSpec, measure: str):
    """Per square-root coordinate: (index, k, gamma weights, nu)."""
    state_mats = dict(spec.omega_state)
    out = []
    for index, k, drift_const in _measure_arrays(spec, measure)[2]:
        if index == spec.vol_index:
            mat = np.asarray(spec.omega1)
        else:
            mat = np.asarray(state_mats[index])
        gamma = 0.5 * psd_factor(mat)[index]
        nu = (4.0 * drift_const - np.sum((2.0 * gamma) ** 2)) / 8.0
        if nu <= 0:
            raise FellerViolation(
                f"coordinate {index}: 4 k mu = {4 * drift_const:.4g} does not "
                f"dominate the squared diffusion weights"
            )
        out.append((index, k, gamma, nu))
    return out


def _sigma_stack(spec: AffineModelSpec, x: np.ndarray) -> np.ndarray:
    npaths = x.shape[0]
    sig = np.broadcast_to(spec.omega0, (npaths, spec.n, spec.n)).copy()
    if spec.vol_index is not None:
        v = np.clip(x[:, spec.vol_index], spec.v_min, spec.v_max)
        sig += np.asarray(spec.omega1)[None] * v[:, None, None]
    for idx, mat in spec.omega_state:
        s = np.clip(x[:, idx], 0.0, None)
        sig += np.asarray(mat)[None] * s[:, None, None]
    return sig


def _chunk_rng(seed: int, chunk_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence(entropy=int(seed), spawn_key=(0, chunk_index))
    )


def _mirror(base: np.ndarray, negate: bool) -> np.ndarray:
    out = np.empty((2 * base.shape[0],) + base.shape[1:], dtype=base.dtype)
    out[0::2] = base
    out[1::2] = -base if negate else base
    return out


def _simulate(spec: AffineModelSpec, config: SimConfig, record_full: bool) -> np.ndarray:
    n = spec.n
    a_vec, b_mat, _ = _measure_arrays(spec, config.measure)
    sqrtfacs = _sqrt_setup(spec, config.measure)
    x0 = config.x0 if config.x0 is not None else default_x0(spec)
    if x0.shape != (n,):
        raise LengthMismatch("x0 dimension does not match the model")
    h = config.h
    sqrt_h = math.sqrt(h)
    constant_sigma = spec.vol_index is None and not spec.omega_state
    if constant_sigma:
        l_const = psd_factor(np.asarray(spec.omega0))
    jump = spec.jump if (config.measure == "q" and spec.jump is not None
                         and spec.jump.intensity > 0) else None
    if jump is not None:
        jump_mean = math.log1p(jump.mean_jump) - 0.5 * jump.jump_vol ** 2

    if record_full:
        out = np.empty((config.n_paths, config.n_steps + 1, n))
    else:
        out = np.empty((config.n_paths, n))

    n_chunks = (config.n_paths + CHUNK - 1) // CHUNK
    half = CHUNK // 2
    for c in range(n_chunks):
        lo = c * CHUNK
        m = min(config.n_paths, lo + CHUNK) - lo
        rng = _chunk_rng(config.seed, c)
        x = np.tile(x0, (m, 1))
        if record_full:
            out[lo:lo + m, 0] = x
        for t in range(config.n_steps):
            # draw counts are fixed per step so a partial chunk sees the
            # same leading values as a full one
            if config.antithetic:
                w = _mirror(rng.standard_normal((half, n)), negate=True)[:m]
            else:
                w = rng.standard_normal((CHUNK, n))[:m]
            drift = a_vec + x @ b_mat.T
            if constant_sigma:
                diff = w @ l_const.T
            else:
                lmat = cholesky_stack(_sigma_stack(spec, x))
                diff = np.einsum("kij,kj->ki", lmat, w)
            x_new = x + h * drift + sqrt_h * diff
            for idx, k, gamma, nu in sqrtfacs:
                dz = sqrt_h * (w @ gamma)
                vin = np.maximum(x[:, idx], 0.0)
                x_new[:, idx] = np.exp(-k * h) * (np.sqrt(vin + 2.0 * nu * h) + dz) ** 2
            if jump is not None:
                if config.antithetic:
                    base_counts = rng.poisson(jump.intensity * h, half)
                    zj = _mirror(rng.standard_normal(half), negate=True)[:m]
                    base_vj = rng.gamma(base_counts.astype(float), jump.vol_jump_scale)
                    counts = np.repeat(base_counts, 2)[:m]
                    vj = np.repeat(base_vj, 2)[:m]
                else:
                    counts = rng.poisson(jump.intensity * h, CHUNK)[:m]
                    zj = rng.standard_normal(CHUNK)[:m]
                    vj = rng.gamma(counts.astype(float), jump.vol_jump_scale)
                x_new[:, 0] += counts * jump_mean + np.sqrt(counts) * jump.jump_vol * zj
                if spec.vol_index is not None and jump.vol_jump_scale > 0:
                    x_new[:, spec.vol_index] += vj
            x = x_new
            if record_full:
                out[lo:lo + m, t + 1] = x
        if not record_full:
            out[lo:lo + m] = x
    return out


def simulate_paths(spec: AffineModelSpec, config: SimConfig) -> np.ndarray:
    """Full path array of shape (n_paths, n_steps + 1, n).

    Materializes everything; for large path counts where only the endpoint
    matters use simulate_terminal.
    """
    return _simulate(spec, config, record_full=True)


def simulate_terminal(spec: AffineModelSpec, config: SimConfig) -> np.ndarray:
    """Terminal states only, shape (n_paths, n)."""
    return _simulate(spec, config, record_full=False)


def mc_futures_price(
    spec: AffineModelSpec,
    x0: np.ndarray,
    tau: float,
    n_paths: int,
    seed: int,
    h: float = MC_STEP,
    antithetic: bool = False,
) -> tuple[float, float]:
    """Risk-neutral Monte Carlo futures price E_Q[S(tau)] with its standard
    error.  tau = 0 returns exp(x0[0]) exactly."""
    x0 = np.asarray(x0, dtype=float)
    if tau <= 0:
        return float(np.exp(x0[0])), 0.0
    n_steps = max(1, round(tau / h))
    config = SimConfig(
        n_paths=n_paths, n_steps=n_steps, h=tau / n_steps, seed=seed,
        measure="q", x0=x0, antithetic=antithetic,
    )
    s = np.exp(simulate_terminal(spec, config)[:, 0])
    se = float(s.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0
    return float(s.mean()), se


@dataclass
class SimulatedPanel:
    """Synthetic observation panel together with the hidden state path."""

    panel: Panel
    states: np.ndarray
    params: ParamSet

    def truth_to_csv(self, path) -> None:
        import pandas as pd

        cols = {"date": self.panel.dates.astype(str)}
        for i in range(self.states.shape[1]):
            cols[f"x_{i + 1}"] = self.states[:, i]
        pd.DataFrame(cols).to_csv(path, index=False)


def simulate_panel(
    params: ParamSet,
    fut_tau,
    yld_tau,
    n_days: int,
    seed: int,
    sigma_eps=None,
    sigma_psi=None,
    x0: np.ndarray | None = None,
    start_date: str = "2015-01-05",
    v_range: tuple[float, float] | None = None,
    fut_labels=None,
) -> SimulatedPanel:
    """Physical-measure panel with Gaussian observation noise.

    fut_tau is either a fixed maturity ladder (one value per series) or a
    full (n_days, H) array of per-date maturities, e.g. from the contract
    calendar.  Zero noise values are allowed here (useful for consistency
    checks) even though the filter itself requires positive ones."""
    if n_days < 1:
        raise ValueError("n_days must be at least 1")
    fut_tau = np.asarray(fut_tau, dtype=float)
    if fut_tau.ndim == 0:
        fut_tau = fut_tau[None]
    if fut_tau.ndim == 1:
        tau_mat = np.tile(fut_tau, (n_days, 1))
    elif fut_tau.ndim == 2:
        if fut_tau.shape[0] != n_days:
            raise LengthMismatch("per-date maturity array must have n_days rows")
        tau_mat = fut_tau
    else:
        raise LengthMismatch("fut_tau must be 1-D or 2-D")
    n_fut = tau_mat.shape[1]
    yld_tau = np.atleast_1d(np.asarray(yld_tau, dtype=float)) if yld_tau is not None else np.zeros(0)
    spec = build_model(params, v_range=v_range)
    if yld_tau.size and spec.short_rate_index is None:
        raise ValueError("model has no short rate; cannot generate yields")

    def _sigmas(arg, stored, m, fallback):
        if arg is None:
            vals = np.asarray(stored, dtype=float) if len(stored) else np.full(m, fallback)
        else:
            vals = np.asarray(arg, dtype=float)
            if vals.ndim == 0:
                vals = np.full(m, float(vals))
        if vals.shape != (m,):
            raise LengthMismatch("noise sigma length does not match maturities")
        if np.any(vals < 0) or not np.isfinite(vals).all():
            raise ValueError("noise sigmas must be finite and non-negative")
        return vals

    eps = _sigmas(sigma_eps, params.sigma_eps, n_fut, 0.01)
    psi = _sigmas(sigma_psi, params.sigma_psi, yld_tau.size, 0.002)

    config = SimConfig(
        n_paths=1, n_steps=n_days - 1, h=1.0 / TRADING_DAYS, seed=seed,
        measure="p", x0=x0 if x0 is not None else default_x0(spec),
    )
    states = simulate_paths(spec, config)[0]

    tau_max = float(max(tau_mat.max(), yld_tau.max() if yld_tau.size else 0.0)) + 0.1
    curves = loading_curves(spec, tau_max=tau_max, with_bonds=bool(yld_tau.size))
    obs_rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(1,)))

    alpha = curves.alpha_at(tau_mat)
    beta = curves.beta_at(tau_mat)
    fut_values = alpha + np.einsum("tmj,tj->tm", beta, states)
    fut_values = fut_values + eps[None, :] * obs_rng.standard_normal((n_days, n_fut))
    if fut_labels is None:
        fut_labels = tuple(f"F{j + 1}" for j in range(n_fut))
    else:
        fut_labels = tuple(fut_labels)
        if len(fut_labels) != n_fut:
            raise LengthMismatch("fut_labels length does not match maturities")

    yld_values = None
    yld_labels = ()
    if yld_tau.size:
        gam = curves.gamma_at(yld_tau)
        zet = curves.zeta_at(yld_tau)
        yld_values = (-gam[None, :] - states @ zet.T) / yld_tau[None, :]
        yld_values = yld_values + psi[None, :] * obs_rng.standard_normal((n_days, yld_tau.size))
        yld_labels = tuple(f"R{max(1, round(t * 12))}" for t in yld_tau)

    start = np.datetime64(start_date, "D")
    dates = np.busday_offset(start, np.arange(n_days), roll="forward")
    panel = Panel(
        dates, fut_values, tau_mat, fut_labels,
        None, yld_values, yld_tau if yld_tau.size else None, yld_labels,
    )
    logger.info(
        "simulated %d-day panel for %s: %d futures, %d yields",
        n_days, params.model_id, fut_tau.size, yld_tau.size,
    )
    return SimulatedPanel(panel=panel, states=states, params=params)
