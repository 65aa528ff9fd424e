from __future__ import annotations

import logging
from datetime import date

import numpy as np
import pytest

from ctsm.data_io import (
    balanced,
    contract_schedule,
    contract_taus,
    front_delivery_month,
    join_panels,
    last_trading_day,
    load_futures_csv,
    load_yields_csv,
    maturity_date,
    maturity_of,
    panel_from_csv,
    panel_to_csv,
    panel_to_vendor_csv,
    us_federal_holidays,
)
from ctsm.errors import EmptyPanel, LengthMismatch, ParseError
from ctsm.kalman import Panel
from ctsm.models import default_params
from ctsm.simulation import simulate_panel


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_maturity_is_wednesday_of_mid_month_week():
    # the 15th of March 2020 is a Sunday, so its week runs to Saturday the
    # 21st and the Wednesday is the 18th
    assert maturity_date(2020, 3) == np.datetime64("2020-03-18")
    for month in range(1, 13):
        d = maturity_date(2021, month)
        assert (d.astype(date).weekday()) == 2


def test_last_trading_day_counts_back_three_business_days():
    # 2020-03-01 is a Sunday; the first business day is Monday the 2nd and
    # three business days back lands on Wednesday 2020-02-26
    assert last_trading_day(2020, 3) == np.datetime64("2020-02-26")


def test_front_contract_worked_example():
    # early-January observation: the second alive contract delivers in March
    # and matures on the 18th, 76 calendar days out
    obs = np.datetime64("2020-01-02")
    assert front_delivery_month(obs) == (2020, 2)
    tau = maturity_of(obs, 2)
    assert tau == pytest.approx(76.0 / 365.0, abs=1e-12)
    assert tau == pytest.approx(0.20822, abs=5e-6)


def test_observation_on_maturity_date_sees_positive_tau():
    obs = maturity_date(2020, 3)
    assert maturity_of(obs, 1) > 0.0


def test_tau_strictly_decreases_between_rolls():
    dates = np.busday_offset(np.datetime64("2020-01-02"), np.arange(90), roll="forward")
    sched = contract_schedule(dates, "F2")
    same = sched.delivery_month[1:] == sched.delivery_month[:-1]
    dtau = np.diff(sched.tau)
    assert (dtau[same] < 0).all()
    assert (dtau[~same] > 0).all()  # rolls jump out to a farther contract
    assert (sched.tau > 0).all()


def test_holiday_calendar_observance_rules():
    hols = set(us_federal_holidays(2021, 2026))
    assert date(2021, 6, 18) in hols  # June 19 2021 falls on a Saturday
    assert date(2021, 12, 31) in hols  # New Year 2022 observed early
    assert date(2026, 7, 3) in hols  # July 4 2026 falls on a Saturday
    assert date(2024, 11, 28) in hols  # fourth Thursday of November
    early = us_federal_holidays(2019, 2019)
    assert date(2019, 6, 19) not in early  # not yet a federal holiday


def test_load_futures_small_file(tmp_path):
    path = _write(
        tmp_path,
        "fut.csv",
        "date,F1,F2,F3\n"
        "2020-01-02,20.0,21.0,22.0\n"
        "2020-01-03,20.5,21.5,22.5\n"
        "2020-01-06,20.7,21.7,22.7\n",
    )
    panel = load_futures_csv(path)
    assert panel.n_dates == 3
    # the front contract is excluded unless asked for
    assert panel.fut_labels == ("F2", "F3")
    assert panel.fut_values[0, 0] == pytest.approx(np.log(21.0))
    assert panel.fut_mask.all()
    expected_tau = contract_taus(panel.dates, ("F2", "F3"))
    np.testing.assert_array_equal(panel.fut_tau, expected_tau)


def test_load_futures_negative_price_is_masked_not_fatal(tmp_path, caplog):
    path = _write(
        tmp_path,
        "fut.csv",
        "date,F1,F2\n"
        "2020-04-17,18.27,25.03\n"
        "2020-04-20,-37.63,20.43\n"
        "2020-04-21,10.01,11.57\n",
    )
    panel = load_futures_csv(path, contracts=("F2",))
    assert panel.n_dates == 3
    assert panel.fut_mask.all()
    with caplog.at_level(logging.WARNING, logger="ctsm.data_io"):
        both = load_futures_csv(path, contracts=("F1", "F2"))
    assert both.n_dates == 3
    assert not both.fut_mask[1, 0]
    assert both.fut_mask[1, 1]
    assert any("nonpositive" in r.message.lower() or "negative" in r.message.lower()
               for r in caplog.records)


def test_load_futures_duplicate_date_named_in_error(tmp_path):
    path = _write(
        tmp_path,
        "fut.csv",
        "date,F1,F2\n2020-01-02,20,21\n2020-01-02,20,21\n",
    )
    with pytest.raises(ParseError, match="2020-01-02"):
        load_futures_csv(path)


def test_load_futures_bad_cell_names_location(tmp_path):
    path = _write(
        tmp_path,
        "fut.csv",
        "date,F1,F2\n2020-01-02,20,oops\n",
    )
    with pytest.raises(ParseError, match="F2"):
        load_futures_csv(path)


def test_load_futures_empty_file_and_missing_column(tmp_path):
    with pytest.raises(EmptyPanel):
        load_futures_csv(_write(tmp_path, "empty.csv", ""))
    with pytest.raises(EmptyPanel):
        load_futures_csv(_write(tmp_path, "hdr.csv", "date,F1,F2\n"))
    with pytest.raises(ParseError):
        load_futures_csv(
            _write(tmp_path, "dup.csv", "date,F2\n2020-01-02,20\n"),
            contracts=("F3",),
        )


def test_load_yields_percent_conversion_and_gaps(tmp_path):
    path = _write(
        tmp_path,
        "yld.csv",
        "date,R3,R6\n"
        "2020-01-02,5.00,5.25\n"
        "2020-01-03,,5.30\n",
    )
    panel = load_yields_csv(path)
    assert panel.n_futures == 0
    assert panel.yld_labels == ("R3", "R6")
    np.testing.assert_allclose(panel.yld_tau, [0.25, 0.5])
    assert panel.yld_values[0, 0] == pytest.approx(0.05)
    assert not panel.yld_mask[1, 0]
    assert panel.yld_mask[1, 1]


def test_join_panels_inner_join(tmp_path):
    fut = _write(
        tmp_path,
        "fut.csv",
        "date,F1,F2\n2020-01-02,20,21\n2020-01-03,20,21\n2020-01-06,20,21\n",
    )
    yld = _write(
        tmp_path,
        "yld.csv",
        "date,R3\n2020-01-03,1.5\n2020-01-06,1.6\n2020-01-07,1.7\n",
    )
    joined = join_panels(load_futures_csv(fut), load_yields_csv(yld))
    assert joined.n_dates == 2
    assert str(joined.dates[0]) == "2020-01-03"
    assert joined.n_yields == 1
    assert joined.yld_values[0, 0] == pytest.approx(0.015)


def test_join_panels_subset_and_disjoint(tmp_path):
    fut = load_futures_csv(_write(
        tmp_path, "f.csv",
        "date,F1,F2\n2020-01-02,20,21\n2020-01-03,20,21\n",
    ))
    yld_sub = load_yields_csv(_write(
        tmp_path, "y1.csv", "date,R3\n2020-01-03,1.5\n",
    ))
    assert join_panels(fut, yld_sub).n_dates == 1
    yld_far = load_yields_csv(_write(
        tmp_path, "y2.csv", "date,R3\n2021-06-01,1.5\n",
    ))
    with pytest.raises(EmptyPanel):
        join_panels(fut, yld_far)
    with pytest.raises(LengthMismatch):
        join_panels(fut, fut)


def test_balanced_drops_incomplete_dates():
    vals = np.array([[3.0, 3.1], [np.nan, 3.2], [3.3, 3.4]])
    panel = Panel(
        np.array(["2020-01-02", "2020-01-03", "2020-01-06"], dtype="datetime64[D]"),
        vals, np.full((3, 2), 0.5), ("F2", "F3"),
    )
    out = balanced(panel)
    assert out.n_dates == 2
    assert out.fut_mask.all()


def test_panel_csv_round_trip_is_exact():
    params = default_params("SRV4F")
    sim = simulate_panel(params, [0.25, 0.5], [0.25, 1.0], 40, seed=2)
    panel = sim.panel
    panel.fut_values[3, 1] = np.nan
    panel.fut_mask[3, 1] = False
    import tempfile, os

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "panel.csv")
        panel_to_csv(panel, path)
        back = panel_from_csv(path)
    np.testing.assert_array_equal(back.dates, panel.dates)
    np.testing.assert_array_equal(back.fut_mask, panel.fut_mask)
    np.testing.assert_array_equal(back.yld_mask, panel.yld_mask)
    np.testing.assert_array_equal(
        back.fut_values[back.fut_mask], panel.fut_values[panel.fut_mask]
    )
    np.testing.assert_array_equal(back.fut_tau[back.fut_mask],
                                  panel.fut_tau[panel.fut_mask])
    np.testing.assert_array_equal(back.yld_values, panel.yld_values)
    assert back.fut_labels == ("F1", "F2")
    assert back.yld_labels == panel.yld_labels


def test_vendor_round_trip_with_calendar_maturities(tmp_path):
    params = default_params("SRV4F")
    start = "2019-03-04"
    n_days = 30
    dates = np.busday_offset(np.datetime64(start), np.arange(n_days), roll="forward")
    labels = ("F2", "F5")
    taus = contract_taus(dates, labels)
    sim = simulate_panel(params, taus, [0.25], n_days, seed=8,
                         start_date=start, fut_labels=labels)
    fut_path = tmp_path / "fut.csv"
    yld_path = tmp_path / "yld.csv"
    panel_to_vendor_csv(sim.panel, fut_path, yld_path)
    back = join_panels(load_futures_csv(fut_path, contracts=labels),
                       load_yields_csv(yld_path))
    np.testing.assert_array_equal(back.dates, sim.panel.dates)
    np.testing.assert_array_equal(back.fut_tau, sim.panel.fut_tau)
    np.testing.assert_allclose(back.fut_values, sim.panel.fut_values, atol=1e-12)
    np.testing.assert_allclose(back.yld_values, sim.panel.yld_values, atol=1e-12)


def test_vendor_writer_requires_contract_labels():
    panel = Panel(
        np.array(["2020-01-02"], dtype="datetime64[D]"),
        np.array([[3.0]]), np.array([[0.5]]), ("WTI",),
    )
    with pytest.raises(ParseError):
        panel_to_vendor_csv(panel, "/tmp/should_not_exist.csv")
