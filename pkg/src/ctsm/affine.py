"""Affine diffusion state representation shared by every model in the zoo.

A model is a state vector X with dynamics

    dX = (A + B X) dt + sqrt(Sigma(X)) dZ,

where Sigma(X) = omega0 + omega1 * v and v is one coordinate of X.  Models
with a square-root interest rate carry additional state-scaled covariance
terms in ``omega_state``.  Both a pricing-measure (A_q, B_q) and a
physical-measure (A_p, B_p) drift are stored on the same spec.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import IndefiniteMatrix, SingularCovariance

logger = logging.getLogger(__name__)

# Eigenvalues of a nominally-PSD matrix are clipped at -tol and rejected below.
PSD_TOL_SCALE = 1e-10


@dataclass(frozen=True)
class JumpSpec:
    """Compound-Poisson jump on the log spot and the variance factor.

    The spot jumps multiplicatively by (1 + J) with
    ln(1 + J) ~ N(ln(1 + mean_jump) - jump_vol**2 / 2, jump_vol**2), so
    E[J] = mean_jump; the variance factor jumps by an Exp(vol_jump_scale)
    increment.  Jumps are specified under the pricing measure only.
    """

    intensity: float
    mean_jump: float
    jump_vol: float
    vol_jump_scale: float

    def __post_init__(self):
        if not np.isfinite([self.intensity, self.mean_jump, self.jump_vol, self.vol_jump_scale]).all():
            raise ValueError("jump parameters must be finite")
        if self.intensity < 0 or self.jump_vol < 0:
            raise ValueError("jump intensity and volatility must be non-negative")
        if self.mean_jump <= -1.0:
            raise ValueError("mean proportional jump must exceed -1")
        if self.vol_jump_scale <= 0:
            raise ValueError("variance jump scale must be positive")


@dataclass(frozen=True)
class SqrtFactor:
    """A coordinate with square-root diffusion, advanced by the positivity scheme.

    k is the mean-reversion speed and a the constant drift term (k times the
    long-run level) under each measure; the drift row of the owning spec must
    equal a - k * x at this index.
    """

    index: int
    k_q: float
    a_q: float
    k_p: float
    a_p: float

    def level_p(self) -> float:
        return self.a_p / self.k_p if self.k_p > 0 else 0.0


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AffineModelSpec:
    """Immutable matrix representation of one model at fixed parameters."""

    model_id: str
    a_q: np.ndarray
    b_q: np.ndarray
    a_p: np.ndarray
    b_p: np.ndarray
    omega0: np.ndarray
    omega1: np.ndarray
    vol_index: int | None
    short_rate_index: int | None = None
    sqrt_factors: tuple[SqrtFactor, ...] = ()
    omega_state: tuple[tuple[int, np.ndarray], ...] = ()
    jump: JumpSpec | None = None
    v_min: float = 1e-8
    v_max: float = 10.0
    carry_index: int | None = None
    unit_root_indices: tuple[int, ...] = ()
    typical_state: np.ndarray | None = None

    def __post_init__(self):
        n = len(np.atleast_1d(self.a_q))
        for name in ("a_q", "a_p"):
            vec = _freeze(np.atleast_1d(getattr(self, name)))
            if vec.shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
            object.__setattr__(self, name, vec)
        for name in ("b_q", "b_p", "omega0", "omega1"):
            mat = _freeze(np.atleast_2d(getattr(self, name)))
            if mat.shape != (n, n):
                raise ValueError(f"{name} must have shape ({n}, {n})")
            object.__setattr__(self, name, mat)
        for name in ("omega0", "omega1"):
            mat = getattr(self, name)
            if not np.array_equal(mat, mat.T):
                raise ValueError(f"{name} must be exactly symmetric")
        cleaned = []
        for idx, mat in self.omega_state:
            mat = _freeze(np.atleast_2d(mat))
            if mat.shape != (n, n) or not np.array_equal(mat, mat.T):
                raise ValueError("omega_state terms must be symmetric n-by-n")
            cleaned.append((int(idx), mat))
        object.__setattr__(self, "omega_state", tuple(cleaned))
        if self.typical_state is not None:
            object.__setattr__(self, "typical_state", _freeze(self.typical_state))
        for arr in (self.a_q, self.a_p, self.b_q, self.b_p, self.omega0, self.omega1):
            if not np.isfinite(arr).all():
                raise ValueError("spec matrices must be finite")
        if self.vol_index is not None and not 0 <= self.vol_index < n:
            raise ValueError("vol_index out of range")
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be below v_max")

    @property
    def n(self) -> int:
        return self.a_q.shape[0]

    def stationary_v(self) -> float:
        """Long-run variance level under the physical measure (v_min if none)."""
        if self.vol_index is None:
            return 0.0
        for f in self.sqrt_factors:
            if f.index == self.vol_index and f.k_p > 0:
                return f.level_p()
        i = self.vol_index
        if self.b_p[i, i] < 0:
            return float(-self.a_p[i] / self.b_p[i, i])
        return self.v_min


def covariance_at(spec: AffineModelSpec, v: float) -> np.ndarray:
    """Diffusion covariance omega0 + omega1 * v at variance level v."""
    v = float(v)
    if not np.isfinite(v):
        raise ValueError("variance level must be finite")
    return spec.omega0 + spec.omega1 * v


def covariance_at_state(spec: AffineModelSpec, x: np.ndarray, clamp: bool = False) -> np.ndarray:
    """Diffusion covariance at a full state vector.

    Includes the state-scaled terms of models with a square-root rate.  With
    ``clamp`` the scaling coordinates are clipped into their admissible range
    before evaluation, which is how the filter and simulator stay inside the
    PSD region.
    """
    x = np.asarray(x, dtype=float)
    v = x[spec.vol_index] if spec.vol_index is not None else 0.0
    if clamp:
        v = min(max(v, spec.v_min), spec.v_max)
    sig = spec.omega0 + spec.omega1 * v
    for idx, mat in spec.omega_state:
        s = x[idx]
        if clamp:
            s = max(s, 0.0)
        sig = sig + mat * s
    return sig


def psd_tolerance(m: np.ndarray) -> float:
    return max(PSD_TOL_SCALE * float(np.trace(m)), 0.0)


def _crout_factor(m: np.ndarray, tol: float) -> np.ndarray:
    """Lower-triangular factor of a PSD matrix, with zero-pivot columns zeroed."""
    n = m.shape[0]
    low = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - low[j, :j] @ low[j, :j]
        if d <= tol:
            d = 0.0
        low[j, j] = np.sqrt(d)
        if low[j, j] > 0.0:
            for i in range(j + 1, n):
                low[i, j] = (m[i, j] - low[i, :j] @ low[j, :j]) / low[j, j]
    return low

def psd_factor(m: np.ndarray, tol: float | None = None) -> np.ndarray:
    """Lower-triangular factor L with L @ L.T == m for PSD m.

    Strictly positive-definite input goes through a plain Cholesky; singular
    but PSD input falls back to a clipped factorization that zeroes the
    dependent columns.  Raises IndefiniteMatrix when the smallest eigenvalue
    is below -tol (default tol = 1e-10 * trace).
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("psd_factor expects a square matrix")
    scale = max(float(np.abs(m).max()), 1.0)
    if np.abs(m - m.T).max() > 1e-8 * scale:
        raise ValueError("psd_factor expects a symmetric matrix")
    m = 0.5 * (m + m.T)
    if tol is None:
        tol = psd_tolerance(m)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    lam_min = float(np.linalg.eigvalsh(m)[0])
    if lam_min < -max(tol, 1e-14 * scale):
        raise IndefiniteMatrix(
            f"matrix has eigenvalue {lam_min:.3e} below tolerance {-tol:.3e}"
        )
    return _crout_factor(m, tol)


def cholesky_stack(mats: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Clipped Cholesky of a stack of small PSD matrices, shape (m, n, n).

    Vectorized over the leading axis; pivots below tol are treated as zero and
    their columns zeroed, matching psd_factor on singular input.  No
    indefiniteness check is performed, so callers must pass admissible input.
    """
    mats = np.asarray(mats, dtype=float)
    n = mats.shape[-1]
    low = np.zeros_like(mats)
    for j in range(n):
        d = mats[..., j, j] - np.einsum("...k,...k->...", low[..., j, :j], low[..., j, :j])
        low[..., j, j] = np.sqrt(np.maximum(d, 0.0))
        piv = low[..., j, j]
        safe = np.where(piv > tol, piv, 1.0)
        for i in range(j + 1, n):
            num = mats[..., i, j] - np.einsum("...k,...k->...", low[..., i, :j], low[..., j, :j])
            low[..., i, j] = np.where(piv > tol, num / safe, 0.0)
    return low


def drift(spec: AffineModelSpec, x: np.ndarray, measure: str = "q") -> np.ndarray:
    """Instantaneous drift A + B x under measure "q" or "p"."""
    x = np.asarray(x, dtype=float)
    if measure == "q":
        return spec.a_q + spec.b_q @ x
    if measure == "p":
        return spec.a_p + spec.b_p @ x
    raise ValueError(f"unknown measure {measure!r}")


def risk_premium(spec: AffineModelSpec, x: np.ndarray) -> np.ndarray:
    """Market price of risk Lambda(x) mapping pricing to physical dynamics.

    Defined through sqrt(Sigma(x)) @ Lambda = (A_p - A_q) + (B_p - B_q) @ x so
    that the change of measure dZ_q = dZ_p + Lambda dt reproduces the physical
    drift exactly.
    """
    x = np.asarray(x, dtype=float)
    rhs = (spec.a_p - spec.a_q) + (spec.b_p - spec.b_q) @ x
    low = psd_factor(covariance_at_state(spec, x))
    if np.any(np.diag(low) <= 0.0):
        raise SingularCovariance("diffusion covariance is singular at this state")
    from scipy.linalg import solve_triangular

    return solve_triangular(low, rhs, lower=True)
