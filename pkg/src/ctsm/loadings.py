"""Maturity loadings for log futures prices and zero-coupon bond yields.

With X the state under the pricing measure, log futures prices and log bond
prices are affine in X:

    ln F(t, tau) = alpha(tau) + beta(tau) . X(t)
    ln P(t, tau) = gamma(tau) + zeta(tau) . X(t),    yield R = -ln P / tau.

The coefficient functions solve first-order ODE systems in tau driven by the
pricing-measure drift and covariance.  The variance coordinate (and, for the
model with a square-root rate, the rate coordinate) picks up the quadratic
Riccati term; the short-rate coordinate of the bond system carries a unit
discount source.  For the jump model, the spot-jump compensator in the drift
is cancelled exactly by the jump transform because the spot loading is
identically one and the variance loading identically zero, so the transform
contributes the constant ``intensity * mean_jump`` to the intercept slope and
no jump integrals are needed.

Curves are integrated by fixed-step fourth-order Runge-Kutta on a uniform
grid and interpolated with cubic Hermite polynomials using the exact ODE
slopes at the nodes, which keeps the interpolation error fourth order
uniformly, including at the grid ends.
"""
from __future__ import annotations

import hashlib
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .affine import AffineModelSpec
from .errors import OdeBlowup, OutOfGrid

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1.0 / 500.0
BLOWUP_GUARD = 1e6

_cache: OrderedDict[tuple, "LoadingCurves"] = OrderedDict()
_cache_lock = threading.Lock()
_CACHE_CAP = 128


def _futures_rhs(spec: AffineModelSpec):
    b_t = np.ascontiguousarray(spec.b_q.T)
    jump_rate = spec.jump.intensity * spec.jump.mean_jump if spec.jump is not None else 0.0

    def rhs(y: np.ndarray) -> np.ndarray:
        beta = y[1:]
        out = np.empty_like(y)
        out[0] = beta @ spec.a_q + 0.5 * beta @ spec.omega0 @ beta + jump_rate
        dbeta = b_t @ beta
        if spec.vol_index is not None:
            dbeta[spec.vol_index] += 0.5 * beta @ spec.omega1 @ beta
        for idx, mat in spec.omega_state:
            dbeta[idx] += 0.5 * beta @ mat @ beta
        out[1:] = dbeta
        return out

    return rhs


def _bond_rhs(spec: AffineModelSpec):
    if spec.short_rate_index is None:
        raise ValueError(f"{spec.model_id} has no short-rate factor; bond loadings undefined")
    b_t = np.ascontiguousarray(spec.b_q.T)
    r_idx = spec.short_rate_index

    def rhs(y: np.ndarray) -> np.ndarray:
        zeta = y[1:]
        out = np.empty_like(y)
        out[0] = zeta @ spec.a_q + 0.5 * zeta @ spec.omega0 @ zeta
        dzeta = b_t @ zeta
        if spec.vol_index is not None:
            dzeta[spec.vol_index] += 0.5 * zeta @ spec.omega1 @ zeta
        for idx, mat in spec.omega_state:
            dzeta[idx] += 0.5 * zeta @ mat @ zeta
        dzeta[r_idx] -= 1.0
        out[1:] = dzeta
        return out

    return rhs


def _rk4_grid(rhs, y0: np.ndarray, n_steps: int, step: float):
    """Fixed-step RK4; returns node values and exact node slopes."""
    dim = y0.shape[0]
    vals = np.empty((n_steps + 1, dim))
    slopes = np.empty((n_steps + 1, dim))
    y = y0.astype(float).copy()
    vals[0] = y
    for i in range(n_steps):
        k1 = rhs(y)
        slopes[i] = k1
        k2 = rhs(y + 0.5 * step * k1)
        k3 = rhs(y + 0.5 * step * k2)
        k4 = rhs(y + step * k3)
        y = y + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.abs(y).max() > BLOWUP_GUARD:
            raise OdeBlowup(f"loading coordinate exceeded {BLOWUP_GUARD:g} at tau={(i + 1) * step:.4f}")
        vals[i + 1] = y
    slopes[n_steps] = rhs(y)
    return vals, slopes


def _rk4_single(rhs, y0: np.ndarray, tau: float, step: float) -> np.ndarray:
    """One-shot RK4 integration to an arbitrary tau (full steps plus remainder)."""
    y = y0.astype(float).copy()
    n_full = int(tau / step)
    rem = tau - n_full * step

    def advance(y, hh):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * hh * k1)
        k3 = rhs(y + 0.5 * hh * k2)
        k4 = rhs(y + hh * k3)
        return y + (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    for _ in range(n_full):
        y = advance(y, step)
        if np.abs(y).max() > BLOWUP_GUARD:
            raise OdeBlowup("loading coordinate exceeded guard during integration")
    if rem > 1e-14:
        y = advance(y, rem)
    return y


@dataclass
class LoadingCurves:
    """Tabulated loading functions on a uniform maturity grid."""

    model_id: str
    tau: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    dalpha: np.ndarray
    dbeta: np.ndarray
    gamma: np.ndarray | None = None
    zeta: np.ndarray | None = None
    dgamma: np.ndarray | None = None
    dzeta: np.ndarray | None = None

    def __post_init__(self):
        self._alpha_ip = CubicHermiteSpline(self.tau, self.alpha, self.dalpha)
        self._beta_ip = CubicHermiteSpline(self.tau, self.beta, self.dbeta, axis=0)
        self._gamma_ip = None
        self._zeta_ip = None
        if self.gamma is not None:
            self._gamma_ip = CubicHermiteSpline(self.tau, self.gamma, self.dgamma)
            self._zeta_ip = CubicHermiteSpline(self.tau, self.zeta, self.dzeta, axis=0)

    @property
    def n(self) -> int:
        return self.beta.shape[1]

    @property
    def tau_max(self) -> float:
        return float(self.tau[-1])

    @property
    def has_bonds(self) -> bool:
        return self.gamma is not None

    def _check(self, taus: np.ndarray) -> np.ndarray:
        taus = np.asarray(taus, dtype=float)
        finite = taus[np.isfinite(taus)]
        if finite.size and (finite.min() < 0.0 or finite.max() > self.tau_max + 1e-12):
            raise OutOfGrid(
                f"maturity outside tabulated range [0, {self.tau_max:.4f}]"
            )
        return taus

    def alpha_at(self, taus) -> np.ndarray:
        return self._alpha_ip(self._check(taus))

    def beta_at(self, taus) -> np.ndarray:
        return self._beta_ip(self._check(taus))

    def gamma_at(self, taus) -> np.ndarray:
        if self._gamma_ip is None:
            raise ValueError("curves carry no bond block")
        return self._gamma_ip(self._check(taus))

    def zeta_at(self, taus) -> np.ndarray:
        if self._zeta_ip is None:
            raise ValueError("curves carry no bond block")
        return self._zeta_ip(self._check(taus))

    def to_csv(self, path) -> None:
        import pandas as pd

        cols = {"tau": self.tau, "alpha": self.alpha}
        for i in range(self.n):
            cols[f"beta_{i + 1}"] = self.beta[:, i]
        if self.has_bonds:
            cols["gamma"] = self.gamma
            for i in range(self.n):
                cols[f"zeta_{i + 1}"] = self.zeta[:, i]
        pd.DataFrame(cols).to_csv(path, index=False)


def _spec_key(spec: AffineModelSpec, kind: str, n_steps: int, step: float) -> tuple:
    hasher = hashlib.sha1()
    for arr in (spec.a_q, spec.b_q, spec.omega0, spec.omega1):
        hasher.update(np.ascontiguousarray(arr).tobytes())
    for idx, mat in spec.omega_state:
        hasher.update(bytes([idx]))
        hasher.update(np.ascontiguousarray(mat).tobytes())
    if spec.jump is not None:
        hasher.update(np.asarray(
            [spec.jump.intensity, spec.jump.mean_jump, spec.jump.jump_vol], dtype=float
        ).tobytes())
    return (spec.model_id, kind, n_steps, round(step, 12), hasher.hexdigest())


def loading_curves(
    spec: AffineModelSpec,
    tau_max: float = 2.0,
    step: float = DEFAULT_STEP,
    with_bonds: bool = False,
) -> LoadingCurves:
    """Integrate (and cache) the loading curves out to ``tau_max``.

    The grid is the uniform lattice of width ``step`` covering ``tau_max``.
    Cached per (model, parameter-hash, grid); safe for concurrent reads with
    single-writer insertion.
    """
    if tau_max <= 0:
        raise ValueError("tau_max must be positive")
    n_steps = int(np.ceil(tau_max / step - 1e-9))
    kind = "fb" if with_bonds else "f"
    key = _spec_key(spec, kind, n_steps, step)
    with _cache_lock:
        hit = _cache.get(key)
        if hit is not None:
            _cache.move_to_end(key)
            return hit

    grid = np.arange(n_steps + 1) * step
    n = spec.n
    y0 = np.zeros(n + 1)
    y0[1] = 1.0
    fvals, fslopes = _rk4_grid(_futures_rhs(spec), y0, n_steps, step)
    kw: dict = {}
    if with_bonds:
        bvals, bslopes = _rk4_grid(_bond_rhs(spec), np.zeros(n + 1), n_steps, step)
        kw = dict(gamma=bvals[:, 0], zeta=bvals[:, 1:], dgamma=bslopes[:, 0], dzeta=bslopes[:, 1:])
    curves = LoadingCurves(
        model_id=spec.model_id,
        tau=grid,
        alpha=fvals[:, 0],
        beta=fvals[:, 1:],
        dalpha=fslopes[:, 0],
        dbeta=fslopes[:, 1:],
        **kw,
    )
    with _cache_lock:
        _cache[key] = curves
        while len(_cache) > _CACHE_CAP:
            _cache.popitem(last=False)
    return curves


def futures_loadings(spec: AffineModelSpec, tau_max: float = 2.0, step: float = DEFAULT_STEP) -> LoadingCurves:
    return loading_curves(spec, tau_max, step, with_bonds=False)


def bond_loadings(spec: AffineModelSpec, tau_max: float = 2.0, step: float = DEFAULT_STEP) -> LoadingCurves:
    return loading_curves(spec, tau_max, step, with_bonds=True)


def futures_loadings_exact(spec: AffineModelSpec, tau: float, step: float = DEFAULT_STEP):
    """Direct re-integration to one maturity; returns (alpha, beta)."""
    if tau < 0:
        raise OutOfGrid("maturity must be non-negative")
    y0 = np.zeros(spec.n + 1)
    y0[1] = 1.0
    y = _rk4_single(_futures_rhs(spec), y0, float(tau), step)
    return float(y[0]), y[1:]


def bond_loadings_exact(spec: AffineModelSpec, tau: float, step: float = DEFAULT_STEP):
    """Direct re-integration of the bond system; returns (gamma, zeta)."""
    if tau < 0:
        raise OutOfGrid("maturity must be non-negative")
    y = _rk4_single(_bond_rhs(spec), np.zeros(spec.n + 1), float(tau), step)
    return float(y[0]), y[1:]


def initial_slope(spec: AffineModelSpec) -> tuple[float, np.ndarray]:
    """Slope of the log futures curve at tau = 0: d lnF/d tau = a0 + b0 . x."""
    y0 = np.zeros(spec.n + 1)
    y0[1] = 1.0
    d = _futures_rhs(spec)(y0)
    return float(d[0]), d[1:]


def futures_log_price(curves: LoadingCurves, tau, x: np.ndarray) -> np.ndarray:
    """Model log futures price alpha(tau) + beta(tau) . x; tau may be an array."""
    x = np.asarray(x, dtype=float)
    return curves.alpha_at(tau) + curves.beta_at(tau) @ x


def bond_yield(curves: LoadingCurves, tau, x: np.ndarray) -> np.ndarray:
    """Continuously compounded zero yield -(gamma(tau) + zeta(tau) . x) / tau."""
    taus = np.asarray(tau, dtype=float)
    if np.any(taus <= 0.0):
        raise OutOfGrid("bond yield requires tau > 0")
    x = np.asarray(x, dtype=float)
    return -(curves.gamma_at(taus) + curves.zeta_at(taus) @ x) / taus
