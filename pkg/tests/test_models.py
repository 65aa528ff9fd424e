from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctsm.errors import ConstraintViolation, PSDViolation
from ctsm.models import (
    CORR_CAP,
    MODEL_IDS,
    MODEL_PARAMS,
    STATE_DIM,
    ParamSet,
    build_model,
    default_params,
    feller_gap,
    n_params,
    pack,
    param_names,
    psd_gap,
    to_constrained,
    to_unconstrained,
    unpack,
)

finite = st.floats(allow_nan=False, allow_infinity=False, min_value=-50.0, max_value=50.0)


def test_registry_tables_agree():
    assert set(MODEL_IDS) == set(MODEL_PARAMS) == set(STATE_DIM)


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_default_models_build(model_id):
    spec = build_model(default_params(model_id))
    assert spec.model_id == model_id
    assert spec.n == STATE_DIM[model_id]
    assert np.isfinite(spec.a_p).all() and np.isfinite(spec.b_q).all()
    np.testing.assert_array_equal(spec.omega0, spec.omega0.T)
    np.testing.assert_array_equal(spec.omega1, spec.omega1.T)
    assert spec.v_min < spec.v_max


def test_variance_drift_constant_is_speed_times_level():
    params = default_params("SRV4F").replace(k4_hat=2.075, mu4_hat=0.227)
    spec = build_model(params, check=False)
    assert spec.a_p[3] == pytest.approx(2.075 * 0.227, abs=1e-14)
    assert spec.a_p[3] == pytest.approx(0.471025, abs=1e-12)
    assert spec.b_p[3, 3] == pytest.approx(-2.075, abs=1e-14)


def test_one_factor_zero_sigma_is_deterministic():
    params = default_params("SCH1F").replace(sigma=0.0)
    spec = build_model(params, check=False)
    np.testing.assert_array_equal(spec.omega0, np.zeros((1, 1)))
    kappa, alpha, lam = (params.values[k] for k in ("kappa", "alpha", "lam"))
    assert spec.a_q[0] == pytest.approx(kappa * (alpha - lam), abs=1e-14)
    assert spec.a_p[0] == pytest.approx(kappa * alpha, abs=1e-14)


def test_three_factor_zero_shift_leaves_only_s_block():
    params = default_params("HU3F").replace(theta0=0.0)
    spec = build_model(params, check=False)
    expected = np.zeros((3, 3))
    expected[0, 1] = expected[1, 0] = params.values["s12"]
    expected[1, 1] = params.values["s22"]
    np.testing.assert_array_equal(spec.omega0, expected)


def test_unit_root_models_have_zero_drift_row():
    spec = build_model(default_params("SS4F"))
    assert spec.unit_root_indices == (1,)
    np.testing.assert_array_equal(spec.b_q[1], np.zeros(4))
    np.testing.assert_array_equal(spec.b_p[1], np.zeros(4))


def test_jump_model_carries_sqrt_rate_and_jumps():
    spec = build_model(default_params("YAN4F"))
    assert spec.jump is not None
    assert spec.jump.intensity == pytest.approx(0.6)
    assert tuple(f.index for f in spec.sqrt_factors) == (2, 3)
    assert any(idx == 2 for idx, _ in spec.omega_state)


def test_auto_variance_range_brackets_typical_level():
    spec = build_model(default_params("SRV4F"))
    v_typ = spec.typical_state[spec.vol_index]
    assert spec.v_min <= v_typ <= spec.v_max
    for v in (spec.v_min, spec.v_max):
        sig = spec.omega0 + v * spec.omega1
        lam = np.linalg.eigvalsh(sig)[0]
        assert lam >= -1e-10 * max(1.0, np.abs(sig).max())


def test_explicit_variance_range_is_checked():
    params = default_params("SRV4F")
    spec = build_model(params, v_range=(0.05, 1.0))
    assert (spec.v_min, spec.v_max) == (0.05, 1.0)
    with pytest.raises(PSDViolation):
        # the constant block makes the covariance indefinite as v -> 0
        build_model(params, v_range=(1e-12, 1.0))
    built = build_model(params, v_range=(1e-12, 1.0), check=False)
    assert built.v_min == 1e-12


def test_transform_fixed_points():
    assert to_unconstrained("corr", 0.0) == 0.0
    assert to_constrained("corr", 0.0) == 0.0
    assert to_unconstrained("exp", 1.0) == 0.0
    assert to_constrained("exp", 0.0) == 1.0


def test_corr_transform_stays_inside_cap():
    assert abs(to_constrained("corr", 50.0)) <= CORR_CAP
    assert abs(to_constrained("corr", -50.0)) <= CORR_CAP
    with pytest.raises(ConstraintViolation):
        to_unconstrained("corr", CORR_CAP)


@given(st.floats(min_value=-0.95, max_value=0.95))
def test_corr_transform_round_trip(rho):
    assert to_constrained("corr", to_unconstrained("corr", rho)) == pytest.approx(
        rho, abs=1e-12
    )


@given(st.floats(min_value=-8.0, max_value=8.0))
def test_exp_transform_round_trip(coord):
    value = to_constrained("exp", coord)
    assert to_unconstrained("exp", value) == pytest.approx(coord, abs=1e-12)
    neg = to_constrained("neg_exp", coord)
    assert neg < 0.0
    assert to_unconstrained("neg_exp", neg) == pytest.approx(coord, abs=1e-12)


def test_pack_unpack_round_trip_on_realistic_values():
    params = default_params("SRV4F", n_futures=5, n_yields=2).replace(
        k2=1.075, k3=0.03, k4_hat=1.097, mu4_hat=0.095,
        sigma22=0.309, rho12=0.572, s12=0.045,
    )
    coords = pack(params)
    back = unpack("SRV4F", coords, n_futures=5, n_yields=2)
    for name in param_names("SRV4F"):
        if name.startswith("sigma_eps") or name.startswith("sigma_psi"):
            continue
        assert back.values[name] == pytest.approx(params.values[name], abs=1e-10)
    np.testing.assert_allclose(back.sigma_eps, params.sigma_eps, atol=1e-12)
    np.testing.assert_allclose(back.sigma_psi, params.sigma_psi, atol=1e-12)


def test_pack_is_deterministic():
    params = default_params("SS4F", n_futures=3)
    a, b = pack(params), pack(params)
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("model_id", MODEL_IDS)
def test_param_names_align_with_packing(model_id):
    names = param_names(model_id, n_futures=2, n_yields=1)
    assert len(names) == n_params(model_id, n_futures=2, n_yields=1)
    coords = pack(default_params(model_id, n_futures=2, n_yields=1))
    assert coords.shape == (len(names),)
    assert names[-3:] == ("sigma_eps_1", "sigma_eps_2", "sigma_psi_1")


def test_unpack_rejects_wrong_length():
    with pytest.raises(ConstraintViolation):
        unpack("SCH1F", np.zeros(3))


def test_validate_rejects_out_of_range_values():
    with pytest.raises(ConstraintViolation):
        default_params("SRV4F").replace(rho12=1.0).validate()
    with pytest.raises(ConstraintViolation):
        default_params("SRV4F").replace(k4_hat=0.0).validate()
    with pytest.raises(ConstraintViolation):
        default_params("HU3F").replace(theta0=0.2).validate()
    bad_noise = ParamSet(
        "SCH1F", default_params("SCH1F").values, sigma_eps=(0.0,)
    )
    with pytest.raises(ConstraintViolation):
        bad_noise.validate()


def test_replace_rejects_unknown_name():
    with pytest.raises(ConstraintViolation):
        default_params("SCH1F").replace(nonsense=1.0)


def test_paramset_rejects_missing_and_unknown_keys():
    vals = dict(default_params("SCH1F").values)
    del vals["kappa"]
    with pytest.raises(ConstraintViolation):
        ParamSet("SCH1F", vals)
    vals = dict(default_params("SCH1F").values)
    vals["extra"] = 1.0
    with pytest.raises(ConstraintViolation):
        ParamSet("SCH1F", vals)


def test_json_round_trip_is_exact():
    params = default_params("YAN4F", n_futures=4, n_yields=1).replace(mu_j=-0.0312)
    back = ParamSet.from_json(params.to_json())
    assert back.model_id == params.model_id
    assert back.values == params.values
    assert back.sigma_eps == params.sigma_eps
    assert back.sigma_psi == params.sigma_psi


def test_json_parsing_rejects_bad_input():
    with pytest.raises(ConstraintViolation):
        ParamSet.from_json(json.dumps({"kappa": 1.0}))
    with pytest.raises(ConstraintViolation):
        ParamSet.from_json(json.dumps({"model_id": "NOPE"}))
    good = json.loads(default_params("SCH1F").to_json())
    good["sigma_eps_2"] = 0.01  # index 1 missing
    with pytest.raises(ConstraintViolation):
        ParamSet.from_json(json.dumps(good))


def test_default_params_noise_dimensions():
    params = default_params("SCH2F", n_futures=3, n_yields=2)
    assert params.sigma_eps == (0.01, 0.01, 0.01)
    assert params.sigma_psi == (0.002, 0.002)


def test_feller_gap_zero_at_defaults_and_positive_when_violated():
    spec = build_model(default_params("SRV4F"))
    assert feller_gap(spec, "p") == 0.0
    assert feller_gap(spec, "q") == 0.0
    bad = build_model(
        default_params("SRV4F").replace(sigma44=2.0), check=False
    )
    # variance diffusion 2.0**2 against 4 * 1.8 * 0.10 of drift headroom
    assert feller_gap(bad, "p") == pytest.approx(4.0 - 0.72, abs=1e-12)


def test_psd_gap_zero_at_defaults_and_positive_when_indefinite():
    assert psd_gap(build_model(default_params("SRV4F"))) == 0.0
    bad = build_model(
        default_params("SRV4F").replace(rho12=0.99, rho13=0.99, rho23=-0.99),
        check=False,
    )
    assert psd_gap(bad) > 0.0
