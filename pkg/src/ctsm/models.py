"""Model zoo: named parameter sets and builders for the seven pricing models.

Every model is expressed on the shared affine scaffold of :mod:`ctsm.affine`.
State layouts:

    SRV4F  (ln S, delta, r, v)        four-factor model with stochastic rate
                                      and stochastic variance
    SCH1F  (ln S,)                    mean-reverting log spot
    SCH2F  (ln S, delta)              constant rate, OU convenience yield
    SCH3F  (ln S, delta, r)           adds an OU interest rate
    HU3F   (ln S, delta, v)           shifted-variance three-factor model
    YAN4F  (ln S, delta, r, v)        square-root rate and variance plus
                                      lognormal spot jumps
    SS4F   (ln S, theta, q, v)        unit-root long-run level theta and
                                      carry-cost factor q

Physical-measure drifts mirror the pricing-measure structure with hatted
counterparts of each drift parameter; for models whose risk-neutral spot
drift carries the interest rate, the physical spot drift replaces it by a
constant expected return (``mu1_hat``).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .affine import AffineModelSpec, JumpSpec, SqrtFactor, covariance_at
from .errors import ConstraintViolation, PSDViolation

logger = logging.getLogger(__name__)

MODEL_IDS = ("SRV4F", "SCH1F", "SCH2F", "SCH3F", "HU3F", "YAN4F", "SS4F")

CORR_CAP = 0.999
DEFAULT_SIGMA_EPS = 0.01
DEFAULT_SIGMA_PSI = 0.002


@dataclass(frozen=True)
class ParamDef:
    name: str
    transform: str  # "id" | "exp" | "neg_exp" | "corr"
    default: float


def to_unconstrained(transform: str, value: float, name: str = "") -> float:
    if not math.isfinite(value):
        raise ConstraintViolation(f"parameter {name or '?'} is not finite")
    if transform == "id":
        return value
    if transform == "exp":
        if value <= 0.0:
            raise ConstraintViolation(f"parameter {name} must be positive to map, got {value}")
        return math.log(value)
    if transform == "neg_exp":
        if value >= 0.0:
            raise ConstraintViolation(f"parameter {name} must be negative to map, got {value}")
        return math.log(-value)
    if transform == "corr":
        if abs(value) >= CORR_CAP:
            raise ConstraintViolation(f"parameter {name} must lie in (-{CORR_CAP}, {CORR_CAP})")
        return math.atanh(value / CORR_CAP)
    raise ValueError(f"unknown transform {transform!r}")


def to_constrained(transform: str, coord: float) -> float:
    if transform == "id":
        return coord
    if transform == "exp":
        return math.exp(coord)
    if transform == "neg_exp":
        return -math.exp(coord)
    if transform == "corr":
        return CORR_CAP * math.tanh(coord)
    raise ValueError(f"unknown transform {transform!r}")


def _pd(name, transform, default):
    return ParamDef(name, transform, default)


# Dynamics parameters per model, in packing order.  Correlations use the
# capped tanh map, volatility-like scales the exponential map, everything
# else is unconstrained.  The hatted variance parameters of SRV4F and the
# hatted square-root parameters of YAN4F are exponential because the
# filtering transition requires them positive.
MODEL_PARAMS: dict[str, tuple[ParamDef, ...]] = {
    "SRV4F": (
        _pd("mu1_hat", "id", 0.05),
        _pd("k2", "id", 1.2), _pd("mu2", "id", 0.06),
        _pd("k2_hat", "id", 1.5), _pd("mu2_hat", "id", 0.05),
        _pd("k3", "id", 0.4), _pd("mu3", "id", 0.04),
        _pd("k3_hat", "id", 0.5), _pd("mu3_hat", "id", 0.035),
        _pd("k4", "id", 2.2), _pd("mu4", "id", 0.09),
        _pd("k4_hat", "exp", 1.8), _pd("mu4_hat", "exp", 0.10),
        _pd("s12", "id", 4e-4), _pd("s22", "exp", 0.02),
        _pd("s13", "id", 1e-4), _pd("s23", "id", 2e-4),
        _pd("s33", "exp", 4e-3),
        _pd("rho12", "corr", 0.50), _pd("rho13", "corr", -0.20),
        _pd("rho14", "corr", 0.35), _pd("rho23", "corr", -0.30),
        _pd("rho24", "corr", 0.25), _pd("rho34", "corr", 0.10),
        _pd("sigma22", "exp", 0.25), _pd("sigma33", "exp", 0.02),
        _pd("sigma44", "exp", 0.35),
    ),
    "SCH1F": (
        _pd("kappa", "id", 1.0), _pd("alpha", "id", 4.0),
        _pd("lam", "id", 0.10), _pd("sigma", "exp", 0.35),
    ),
    "SCH2F": (
        _pd("r", "id", 0.04), _pd("mu", "id", 0.08),
        _pd("kappa", "id", 1.3), _pd("alpha", "id", 0.05),
        _pd("lam", "id", 0.05),
        _pd("sigma1", "exp", 0.32), _pd("sigma2", "exp", 0.25),
        _pd("rho", "corr", 0.50),
    ),
    "SCH3F": (
        _pd("mu", "id", 0.08),
        _pd("kappa", "id", 1.3), _pd("alpha", "id", 0.05), _pd("alpha_hat", "id", 0.06),
        _pd("a", "id", 0.4), _pd("m", "id", 0.04), _pd("m_hat", "id", 0.045),
        _pd("sigma1", "exp", 0.32), _pd("sigma2", "exp", 0.25), _pd("sigma3", "exp", 0.01),
        _pd("rho1", "corr", 0.50), _pd("rho2", "corr", 0.10), _pd("rho3", "corr", 0.05),
    ),
    "HU3F": (
        _pd("mu2", "id", 0.25), _pd("mu3", "id", 0.18),
        _pd("kappa12", "id", -0.05), _pd("kappa22", "id", -1.5),
        _pd("kappa23", "id", 0.20), _pd("kappa33", "id", -2.0),
        _pd("mu1_hat", "id", 0.05), _pd("mu2_hat", "id", 0.28), _pd("mu3_hat", "id", 0.20),
        _pd("kappa12_hat", "id", -0.05), _pd("kappa22_hat", "id", -1.6),
        _pd("kappa23_hat", "id", 0.20), _pd("kappa33_hat", "id", -2.2),
        _pd("s12", "id", 3e-4), _pd("s22", "exp", 0.02),
        _pd("theta0", "neg_exp", -0.01),
        _pd("sigma12", "id", 0.12), _pd("sigma13", "id", 0.08),
        _pd("sigma22", "exp", 0.09), _pd("sigma23", "id", 0.02),
        _pd("sigma33", "exp", 0.12),
    ),
    "YAN4F": (
        _pd("sigma_x", "exp", 0.15),
        _pd("rho_xd", "corr", 0.40), _pd("rho_xv", "corr", 0.30),
        _pd("kappa_d", "id", 1.2), _pd("mu_d", "id", 0.05), _pd("sigma_d", "exp", 0.25),
        _pd("kappa_r", "id", 0.4), _pd("mu_r", "id", 0.016), _pd("sigma_r", "exp", 0.08),
        _pd("kappa_v", "id", 2.0), _pd("mu_v", "id", 0.18), _pd("sigma_v", "exp", 0.30),
        _pd("mu1_hat", "id", 0.06),
        _pd("kappa_d_hat", "id", 1.3), _pd("mu_d_hat", "id", 0.05),
        _pd("kappa_r_hat", "exp", 0.45), _pd("mu_r_hat", "exp", 0.04),
        _pd("kappa_v_hat", "exp", 1.8), _pd("mu_v_hat", "exp", 0.09),
        _pd("nu", "exp", 0.6), _pd("mu_j", "id", -0.03),
        _pd("sigma_j", "exp", 0.08), _pd("theta_j", "exp", 0.01),
    ),
    "SS4F": (
        _pd("kappa11", "id", 1.5), _pd("kappa14", "id", -0.40),
        _pd("kappa33", "id", 1.0), _pd("kappa44", "id", 3.0),
        _pd("mu2", "id", 0.02), _pd("mu3", "id", 0.03), _pd("mu4", "id", 0.12),
        _pd("mu1_hat", "id", 0.05),
        _pd("kappa11_hat", "id", 1.5), _pd("kappa14_hat", "id", -0.40),
        _pd("kappa33_hat", "id", 1.1), _pd("kappa44_hat", "id", 2.8),
        _pd("mu2_hat", "id", 0.02), _pd("mu3_hat", "id", 0.03), _pd("mu4_hat", "id", 0.11),
        _pd("s12", "id", 3e-4), _pd("s13", "id", 2e-4), _pd("s23", "id", 1e-4),
        _pd("s22", "exp", 0.01), _pd("s33", "exp", 0.008),
        _pd("theta0", "neg_exp", -0.005),
        _pd("sigma12", "id", 0.10), _pd("sigma13", "id", 0.05), _pd("sigma14", "id", 0.05),
        _pd("sigma22", "exp", 0.06), _pd("sigma23", "id", 0.02), _pd("sigma24", "id", 0.02),
        _pd("sigma33", "exp", 0.05), _pd("sigma34", "id", 0.01),
        _pd("sigma44", "exp", 0.10),
    ),
}

STATE_DIM = {"SRV4F": 4, "SCH1F": 1, "SCH2F": 2, "SCH3F": 3, "HU3F": 3, "YAN4F": 4, "SS4F": 4}

# Parameters that must stay strictly positive even outside the packed
# parameterization (the filtering transition divides by or exponentiates them).
_STRICT_POSITIVE = {
    "SRV4F": {"sigma22", "sigma33", "sigma44", "k4_hat", "mu4_hat"},
    "YAN4F": {"kappa_r_hat", "mu_r_hat", "kappa_v_hat", "mu_v_hat"},
}


@dataclass(frozen=True)
class ParamSet:
    """Named scalar parameters for one model plus per-series noise scales."""

    model_id: str
    values: dict[str, float]
    sigma_eps: tuple[float, ...] = ()
    sigma_psi: tuple[float, ...] = ()

    def __post_init__(self):
        if self.model_id not in MODEL_PARAMS:
            raise ConstraintViolation(f"unknown model_id {self.model_id!r}")
        names = [d.name for d in MODEL_PARAMS[self.model_id]]
        missing = [n for n in names if n not in self.values]
        extra = [n for n in self.values if n not in names]
        if missing or extra:
            raise ConstraintViolation(
                f"{self.model_id} parameters mismatch; missing={missing} unknown={extra}"
            )
        object.__setattr__(self, "values", dict(self.values))
        object.__setattr__(self, "sigma_eps", tuple(float(s) for s in self.sigma_eps))
        object.__setattr__(self, "sigma_psi", tuple(float(s) for s in self.sigma_psi))

    def validate(self) -> None:
        """Raise ConstraintViolation when any parameter breaks its sign/range rule."""
        strict = _STRICT_POSITIVE.get(self.model_id, set())
        for d in MODEL_PARAMS[self.model_id]:
            v = self.values[d.name]
            if not math.isfinite(v):
                raise ConstraintViolation(f"parameter {d.name} is not finite")
            if d.transform == "corr" and abs(v) >= 1.0:
                raise ConstraintViolation(f"parameter {d.name}={v} must lie in (-1, 1)")
            if d.transform == "exp" and (v < 0.0 or (v == 0.0 and d.name in strict)):
                raise ConstraintViolation(f"parameter {d.name}={v} must be positive")
            if d.transform == "neg_exp" and v > 0.0:
                raise ConstraintViolation(f"parameter {d.name}={v} must be non-positive")
        for label, sigmas in (("sigma_eps", self.sigma_eps), ("sigma_psi", self.sigma_psi)):
            for i, s in enumerate(sigmas):
                if not (math.isfinite(s) and s > 0.0):
                    raise ConstraintViolation(f"{label}_{i + 1}={s} must be strictly positive")

    def replace(self, **updates) -> "ParamSet":
        """Copy with some dynamics values replaced."""
        vals = dict(self.values)
        for k, v in updates.items():
            if k not in vals:
                raise ConstraintViolation(f"unknown parameter {k!r} for {self.model_id}")
            vals[k] = float(v)
        return ParamSet(self.model_id, vals, self.sigma_eps, self.sigma_psi)

    def to_json(self) -> str:
        flat: dict[str, object] = {"model_id": self.model_id}
        flat.update({k: self.values[k] for k in (d.name for d in MODEL_PARAMS[self.model_id])})
        flat.update({f"sigma_eps_{i + 1}": s for i, s in enumerate(self.sigma_eps)})
        flat.update({f"sigma_psi_{j + 1}": s for j, s in enumerate(self.sigma_psi)})
        return json.dumps(flat, indent=2, sort_keys=False)

    @staticmethod
    def from_json(text: str) -> "ParamSet":
        flat = json.loads(text)
        if "model_id" not in flat:
            raise ConstraintViolation("parameter JSON lacks model_id")
        model_id = flat.pop("model_id")
        if model_id not in MODEL_PARAMS:
            raise ConstraintViolation(f"unknown model_id {model_id!r}")
        names = {d.name for d in MODEL_PARAMS[model_id]}
        values, eps, psi = {}, {}, {}
        for key, val in flat.items():
            if key in names:
                values[key] = float(val)
            elif key.startswith("sigma_eps_"):
                eps[int(key.rsplit("_", 1)[1])] = float(val)
            elif key.startswith("sigma_psi_"):
                psi[int(key.rsplit("_", 1)[1])] = float(val)
            else:
                raise ConstraintViolation(f"unknown parameter key {key!r}")
        for d, label in ((eps, "sigma_eps"), (psi, "sigma_psi")):
            if d and sorted(d) != list(range(1, len(d) + 1)):
                raise ConstraintViolation(f"{label} indices must be contiguous from 1")
        return ParamSet(
            model_id,
            values,
            tuple(eps[i] for i in sorted(eps)),
            tuple(psi[i] for i in sorted(psi)),
        )


def default_params(model_id: str, n_futures: int = 0, n_yields: int = 0) -> ParamSet:
    """Documented default ParamSet used as the first optimizer start."""
    defs = MODEL_PARAMS[model_id]
    return ParamSet(
        model_id,
        {d.name: d.default for d in defs},
        (DEFAULT_SIGMA_EPS,) * n_futures,
        (DEFAULT_SIGMA_PSI,) * n_yields,
    )


def pack(params: ParamSet) -> np.ndarray:
    """Map a ParamSet to the unconstrained coordinate vector used by optimizers."""
    params.validate()
    coords = [
        to_unconstrained(d.transform, params.values[d.name], d.name)
        for d in MODEL_PARAMS[params.model_id]
    ]
    coords += [to_unconstrained("exp", s, "sigma_eps") for s in params.sigma_eps]
    coords += [to_unconstrained("exp", s, "sigma_psi") for s in params.sigma_psi]
    out = np.asarray(coords, dtype=float)
    if not np.isfinite(out).all():
        raise ConstraintViolation("packed coordinates are not finite")
    return out


def unpack(model_id: str, coords: np.ndarray, n_futures: int = 0, n_yields: int = 0) -> ParamSet:
    """Inverse of :func:`pack`; always yields a sign/range-valid ParamSet."""
    defs = MODEL_PARAMS[model_id]
    expected = len(defs) + n_futures + n_yields
    coords = np.asarray(coords, dtype=float)
    if coords.shape != (expected,):
        raise ConstraintViolation(f"expected {expected} coordinates, got {coords.shape}")
    values = {d.name: to_constrained(d.transform, c) for d, c in zip(defs, coords)}
    k = len(defs)
    eps = tuple(math.exp(c) for c in coords[k : k + n_futures])
    psi = tuple(math.exp(c) for c in coords[k + n_futures :])
    return ParamSet(model_id, values, eps, psi)


def param_names(model_id: str, n_futures: int = 0, n_yields: int = 0) -> tuple[str, ...]:
    """Parameter names in pack order, noise sigmas included."""
    names = tuple(d.name for d in MODEL_PARAMS[model_id])
    names += tuple(f"sigma_eps_{i + 1}" for i in range(n_futures))
    names += tuple(f"sigma_psi_{j + 1}" for j in range(n_yields))
    return names


def n_params(model_id: str, n_futures: int = 0, n_yields: int = 0) -> int:
    return len(MODEL_PARAMS[model_id]) + n_futures + n_yields


def _corr_block(vols: list[float], corr: dict[tuple[int, int], float]) -> np.ndarray:
    n = len(vols)
    out = np.zeros((n, n))
    for i in range(n):
        out[i, i] = vols[i] ** 2
        for j in range(i + 1, n):
            c = corr.get((i, j), 0.0)
            out[i, j] = out[j, i] = c * vols[i] * vols[j]
    return out


def _sym(m: list[list[float]]) -> np.ndarray:
    arr = np.array(m, dtype=float)
    return 0.5 * (arr + arr.T)


def _psd_v_range(omega0: np.ndarray, omega1: np.ndarray, hint: float) -> tuple[float, float]:
    """Smallest admissible variance interval inside [1e-8, 10].

    lambda_min(omega0 + v * omega1) is concave in v, so the admissible set is
    an interval; its endpoints are located by scan plus bisection.
    """
    lo_cap, hi_cap = 1e-8, 10.0
    scale = max(np.abs(omega0).max(), np.abs(omega1).max(), 1e-12)
    slack = -1e-12 * scale

    def ok(v: float) -> bool:
        return float(np.linalg.eigvalsh(omega0 + v * omega1)[0]) >= slack

    if ok(lo_cap) and ok(hi_cap):
        return lo_cap, hi_cap
    candidates = np.unique(
        np.concatenate(
            [
                np.geomspace(lo_cap, hi_cap, 41),
                np.asarray([hint]) if lo_cap < hint < hi_cap else np.empty(0),
            ]
        )
    )
    flags = [ok(float(v)) for v in candidates]
    if not any(flags):
        raise PSDViolation("no admissible variance level keeps the covariance PSD")
    first = next(i for i, f in enumerate(flags) if f)
    last = len(flags) - 1 - next(i for i, f in enumerate(reversed(flags)) if f)
    lo = float(candidates[first])
    if first > 0:
        bad, good = float(candidates[first - 1]), lo
        for _ in range(60):
            mid = 0.5 * (bad + good)
            if ok(mid):
                good = mid
            else:
                bad = mid
        lo = good
    hi = float(candidates[last])
    if last < len(flags) - 1:
        good, bad = hi, float(candidates[last + 1])
        for _ in range(60):
            mid = 0.5 * (bad + good)
            if ok(mid):
                good = mid
            else:
                bad = mid
        hi = good
    return lo, hi


def _build_srv4f(p: dict) -> dict:
    a_q = [0.0, p["k2"] * p["mu2"], p["k3"] * p["mu3"], p["k4"] * p["mu4"]]
    b_q = [[0, -1, 1, -0.5], [0, -p["k2"], 0, 0], [0, 0, -p["k3"], 0], [0, 0, 0, -p["k4"]]]
    a_p = [p["mu1_hat"], p["k2_hat"] * p["mu2_hat"], p["k3_hat"] * p["mu3_hat"],
           p["k4_hat"] * p["mu4_hat"]]
    b_p = [[0, -1, 0, -0.5], [0, -p["k2_hat"], 0, 0], [0, 0, -p["k3_hat"], 0],
           [0, 0, 0, -p["k4_hat"]]]
    omega0 = _sym([
        [0, p["s12"], p["s13"], 0],
        [p["s12"], p["s22"], p["s23"], 0],
        [p["s13"], p["s23"], p["s33"], 0],
        [0, 0, 0, 0],
    ])
    omega1 = _corr_block(
        [1.0, p["sigma22"], p["sigma33"], p["sigma44"]],
        {(0, 1): p["rho12"], (0, 2): p["rho13"], (0, 3): p["rho14"],
         (1, 2): p["rho23"], (1, 3): p["rho24"], (2, 3): p["rho34"]},
    )
    return dict(
        a_q=a_q, b_q=b_q, a_p=a_p, b_p=b_p, omega0=omega0, omega1=omega1,
        vol_index=3, short_rate_index=2, carry_index=1,
        sqrt_factors=(SqrtFactor(3, p["k4"], p["k4"] * p["mu4"],
                                 p["k4_hat"], p["k4_hat"] * p["mu4_hat"]),),
        typical_state=[4.0, p["mu2_hat"], p["mu3_hat"], p["mu4_hat"]],
    )


def _build_sch1f(p: dict) -> dict:
    return dict(
        a_q=[p["kappa"] * (p["alpha"] - p["lam"])], b_q=[[-p["kappa"]]],
        a_p=[p["kappa"] * p["alpha"]], b_p=[[-p["kappa"]]],
        omega0=[[p["sigma"] ** 2]], omega1=[[0.0]], vol_index=None,
        typical_state=[p["alpha"]],
    )


def _build_sch2f(p: dict) -> dict:
    omega0 = _corr_block([p["sigma1"], p["sigma2"]], {(0, 1): p["rho"]})
    return dict(
        a_q=[p["r"] - 0.5 * p["sigma1"] ** 2, p["kappa"] * p["alpha"] - p["lam"]],
        b_q=[[0, -1], [0, -p["kappa"]]],
        a_p=[p["mu"] - 0.5 * p["sigma1"] ** 2, p["kappa"] * p["alpha"]],
        b_p=[[0, -1], [0, -p["kappa"]]],
        omega0=omega0, omega1=np.zeros((2, 2)), vol_index=None, carry_index=1,
        typical_state=[4.0, p["alpha"]],
    )


def _build_sch3f(p: dict) -> dict:
    omega0 = _corr_block(
        [p["sigma1"], p["sigma2"], p["sigma3"]],
        {(0, 1): p["rho1"], (1, 2): p["rho2"], (0, 2): p["rho3"]},
    )
    return dict(
        a_q=[-0.5 * p["sigma1"] ** 2, p["kappa"] * p["alpha"], p["a"] * p["m"]],
        b_q=[[0, -1, 1], [0, -p["kappa"], 0], [0, 0, -p["a"]]],
        a_p=[p["mu"] - 0.5 * p["sigma1"] ** 2, p["kappa"] * p["alpha_hat"], p["a"] * p["m_hat"]],
        b_p=[[0, -1, 0], [0, -p["kappa"], 0], [0, 0, -p["a"]]],
        omega0=omega0, omega1=np.zeros((3, 3)), vol_index=None,
        short_rate_index=2, carry_index=1,
        typical_state=[4.0, p["alpha_hat"], p["m_hat"]],
    )


def _build_hu3f(p: dict) -> dict:
    omega1 = _sym([
        [1.0, p["sigma12"], p["sigma13"]],
        [p["sigma12"], p["sigma22"], p["sigma23"]],
        [p["sigma13"], p["sigma23"], p["sigma33"]],
    ])
    th = p["theta0"]
    omega0 = _sym([
        [0.0, p["s12"], p["sigma13"] * th],
        [p["s12"], p["s22"], p["sigma23"] * th],
        [p["sigma13"] * th, p["sigma23"] * th, p["sigma33"] * th],
    ])
    v_bar = -p["mu3_hat"] / p["kappa33_hat"] if p["kappa33_hat"] < 0 else 0.1
    if p["kappa22_hat"] < 0:
        d_bar = -(p["mu2_hat"] + p["kappa12_hat"] * 4.0 + p["kappa23_hat"] * v_bar) / p["kappa22_hat"]
    else:
        d_bar = 0.05
    return dict(
        a_q=[0.0, p["mu2"], p["mu3"]],
        b_q=[[0, 1, -0.5],
             [p["kappa12"], p["kappa22"], p["kappa23"]],
             [0, 0, p["kappa33"]]],
        a_p=[p["mu1_hat"], p["mu2_hat"], p["mu3_hat"]],
        b_p=[[0, 1, -0.5],
             [p["kappa12_hat"], p["kappa22_hat"], p["kappa23_hat"]],
             [0, 0, p["kappa33_hat"]]],
        omega0=omega0, omega1=omega1, vol_index=2, carry_index=1,
        typical_state=[4.0, d_bar, v_bar],
    )


def _build_yan4f(p: dict) -> dict:
    omega0 = np.zeros((4, 4))
    omega0[0, 0] = p["sigma_x"] ** 2
    omega0[1, 1] = p["sigma_d"] ** 2
    omega0[0, 1] = omega0[1, 0] = p["rho_xd"] * p["sigma_x"] * p["sigma_d"]
    omega1 = np.zeros((4, 4))
    omega1[0, 0] = 1.0
    omega1[0, 3] = omega1[3, 0] = p["sigma_v"]
    omega1[3, 3] = p["sigma_v"] ** 2
    omega_r = np.zeros((4, 4))
    omega_r[2, 2] = p["sigma_r"] ** 2
    return dict(
        a_q=[-p["nu"] * p["mu_j"] - 0.5 * p["sigma_x"] ** 2, p["mu_d"], p["mu_r"], p["mu_v"]],
        b_q=[[0, -1, 1, -0.5], [0, -p["kappa_d"], 0, 0],
             [0, 0, -p["kappa_r"], 0], [0, 0, 0, -p["kappa_v"]]],
        a_p=[p["mu1_hat"] - 0.5 * p["sigma_x"] ** 2, p["kappa_d_hat"] * p["mu_d_hat"],
             p["kappa_r_hat"] * p["mu_r_hat"], p["kappa_v_hat"] * p["mu_v_hat"]],
        b_p=[[0, -1, 0, -0.5], [0, -p["kappa_d_hat"], 0, 0],
             [0, 0, -p["kappa_r_hat"], 0], [0, 0, 0, -p["kappa_v_hat"]]],
        omega0=omega0, omega1=omega1, vol_index=3, short_rate_index=2, carry_index=1,
        omega_state=((2, omega_r),),
        sqrt_factors=(
            SqrtFactor(2, p["kappa_r"], p["mu_r"], p["kappa_r_hat"],
                       p["kappa_r_hat"] * p["mu_r_hat"]),
            SqrtFactor(3, p["kappa_v"], p["mu_v"], p["kappa_v_hat"],
                       p["kappa_v_hat"] * p["mu_v_hat"]),
        ),
        jump=JumpSpec(p["nu"], p["mu_j"], p["sigma_j"], p["theta_j"]),
        typical_state=[4.0, p["mu_d_hat"], p["mu_r_hat"], p["mu_v_hat"]],
    )


def _build_ss4f(p: dict) -> dict:
    omega1 = _sym([
        [1.0, p["sigma12"], p["sigma13"], p["sigma14"]],
        [p["sigma12"], p["sigma22"], p["sigma23"], p["sigma24"]],
        [p["sigma13"], p["sigma23"], p["sigma33"], p["sigma34"]],
        [p["sigma14"], p["sigma24"], p["sigma34"], p["sigma44"]],
    ])
    th = p["theta0"]
    omega0 = _sym([
        [0.0, p["s12"], p["s13"], th * p["sigma14"]],
        [p["s12"], p["s22"], p["s23"], th * p["sigma24"]],
        [p["s13"], p["s23"], p["s33"], th * p["sigma34"]],
        [th * p["sigma14"], th * p["sigma24"], th * p["sigma34"], th * p["sigma44"]],
    ])
    return dict(
        a_q=[0.0, p["mu2"], p["kappa33"] * p["mu3"], p["kappa44"] * p["mu4"]],
        b_q=[[-p["kappa11"], p["kappa11"], -1, p["kappa14"]],
             [0, 0, 0, 0],
             [0, 0, -p["kappa33"], 0],
             [0, 0, 0, -p["kappa44"]]],
        a_p=[p["mu1_hat"], p["mu2_hat"], p["kappa33_hat"] * p["mu3_hat"],
             p["kappa44_hat"] * p["mu4_hat"]],
        b_p=[[-p["kappa11_hat"], p["kappa11_hat"], -1, p["kappa14_hat"]],
             [0, 0, 0, 0],
             [0, 0, -p["kappa33_hat"], 0],
             [0, 0, 0, -p["kappa44_hat"]]],
        omega0=omega0, omega1=omega1, vol_index=3, carry_index=2,
        unit_root_indices=(1,),
        typical_state=[4.0, 4.0, p["mu3_hat"], p["mu4_hat"]],
    )


_BUILDERS = {
    "SRV4F": _build_srv4f,
    "SCH1F": _build_sch1f,
    "SCH2F": _build_sch2f,
    "SCH3F": _build_sch3f,
    "HU3F": _build_hu3f,
    "YAN4F": _build_yan4f,
    "SS4F": _build_ss4f,
}


def build_model(
    params: ParamSet,
    v_range: tuple[float, float] | None = None,
    check: bool = True,
) -> AffineModelSpec:
    """Construct the affine spec for a ParamSet.

    The admissible variance range is located automatically unless ``v_range``
    is given, in which case the covariance must be PSD at both endpoints.
    Raises ConstraintViolation for sign/range violations and PSDViolation when
    no admissible variance level exists.  check=False suppresses the PSD
    errors and falls back to a nominal range so that penalty terms can
    measure the violation instead (used inside optimizer objectives).
    """
    params.validate()
    kw = _BUILDERS[params.model_id](params.values)
    omega0 = np.asarray(kw["omega0"], dtype=float)
    omega1 = np.asarray(kw["omega1"], dtype=float)
    if kw.get("vol_index") is None:
        lam = float(np.linalg.eigvalsh(omega0)[0])
        if check and lam < -1e-12 * max(1.0, np.abs(omega0).max()):
            raise PSDViolation(f"constant covariance has eigenvalue {lam:.3e}")
        v_lo, v_hi = 1e-8, 10.0
    elif v_range is not None:
        v_lo, v_hi = v_range
        if check:
            for v in (v_lo, v_hi):
                lam = float(np.linalg.eigvalsh(omega0 + v * omega1)[0])
                if lam < -1e-12 * max(1.0, np.abs(omega0).max(), np.abs(omega1).max()):
                    raise PSDViolation(f"covariance at v={v} has eigenvalue {lam:.3e}")
    else:
        hint = 0.1
        ts = kw.get("typical_state")
        if ts is not None:
            hint = float(np.asarray(ts, dtype=float)[kw["vol_index"]])
        try:
            v_lo, v_hi = _psd_v_range(omega0, omega1, hint)
        except PSDViolation:
            if check:
                raise
            v_lo, v_hi = 1e-8, 10.0
    return AffineModelSpec(model_id=params.model_id, v_min=v_lo, v_max=v_hi, **kw)


def feller_gap(spec: AffineModelSpec, measure: str = "p") -> float:
    """Total violation of the positivity condition across square-root factors.

    For each factor the scheme needs 4 * k * mu > sum (2 gamma_i)^2, and the
    right side equals the factor's own diagonal covariance coefficient.  Zero
    when every factor satisfies the condition.
    """
    gap = 0.0
    for f in spec.sqrt_factors:
        diag = spec.omega1[f.index, f.index] if f.index == spec.vol_index else 0.0
        for idx, mat in spec.omega_state:
            if idx == f.index:
                diag += mat[f.index, f.index]
        a = f.a_p if measure == "p" else f.a_q
        gap += max(0.0, diag - 4.0 * a)
    return gap


def psd_gap(spec: AffineModelSpec) -> float:
    """Magnitude of any PSD violation at the stationary variance level."""
    gap = 0.0
    if spec.vol_index is not None:
        gap += max(0.0, -float(np.linalg.eigvalsh(spec.omega1)[0]))
        v_bar = min(max(spec.stationary_v(), spec.v_min), spec.v_max)
    else:
        v_bar = 0.0
    gap += max(0.0, -float(np.linalg.eigvalsh(covariance_at(spec, v_bar))[0]))
    return gap
