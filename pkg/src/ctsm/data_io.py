"""CSV ingestion and the futures contract calendar.

Vendor futures files carry prices by contract position (F1, F2, ...) and
Treasury files carry par yields in percent by tenor in months (R3, R6).
Times to maturity are computed here, not read: a contract for delivery
month M stops trading three business days before the first day of M, and
its maturity date is taken as the Wednesday of the week (Sunday start)
containing the 15th of M.  Day count is ACT/365 and the business calendar
is weekdays minus U.S. federal holidays.

Par yields are used directly as continuously compounded zero yields; the
error from skipping a bootstrap is negligible at the short tenors used.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .errors import EmptyPanel, LengthMismatch, ParseError
from .kalman import Panel

logger = logging.getLogger(__name__)

HOLIDAY_FIRST_YEAR = 1998
HOLIDAY_LAST_YEAR = 2030
DAYS_PER_YEAR = 365.0


def _nth_weekday(year: int, month: int, weekday: int, n: int) -> date:
    d = date(year, month, 1)
    offset = (weekday - d.weekday()) % 7 + 7 * (n - 1)
    return d + timedelta(days=offset)


def _last_weekday(year: int, month: int, weekday: int) -> date:
    nxt = date(year + 1, 1, 1) if month == 12 else date(year, month + 1, 1)
    d = nxt - timedelta(days=1)
    return d - timedelta(days=(d.weekday() - weekday) % 7)


def _observed(d: date) -> date:
    if d.weekday() == 5:
        return d - timedelta(days=1)
    if d.weekday() == 6:
        return d + timedelta(days=1)
    return d


def us_federal_holidays(
    first_year: int = HOLIDAY_FIRST_YEAR, last_year: int = HOLIDAY_LAST_YEAR
) -> tuple[date, ...]:
    """Observed U.S. federal holidays, weekend observance shifted."""
    out = []
    for y in range(first_year, last_year + 1):
        out.append(_observed(date(y, 1, 1)))
        out.append(_nth_weekday(y, 1, 0, 3))
        out.append(_nth_weekday(y, 2, 0, 3))
        out.append(_last_weekday(y, 5, 0))
        if y >= 2021:
            out.append(_observed(date(y, 6, 19)))
        out.append(_observed(date(y, 7, 4)))
        out.append(_nth_weekday(y, 9, 0, 1))
        out.append(_nth_weekday(y, 10, 0, 2))
        out.append(_observed(date(y, 11, 11)))
        out.append(_nth_weekday(y, 11, 3, 4))
        out.append(_observed(date(y, 12, 25)))
    return tuple(sorted(set(out)))


BUSDAY_CAL = np.busdaycalendar(
    holidays=[np.datetime64(d, "D") for d in us_federal_holidays()]
)


def last_trading_day(year: int, month: int) -> np.datetime64:
    """Third business day counting back from the first of the delivery month."""
    first = np.datetime64(f"{year:04d}-{month:02d}-01", "D")
    return np.busday_offset(first, -3, roll="forward", busdaycal=BUSDAY_CAL)


def maturity_date(year: int, month: int) -> np.datetime64:
    """Wednesday of the week (starting Sunday) that contains the 15th."""
    fifteenth = date(year, month, 15)
    week_start = fifteenth - timedelta(days=(fifteenth.weekday() + 1) % 7)
    return np.datetime64(week_start + timedelta(days=3), "D")


def _add_months(year: int, month: int, k: int) -> tuple[int, int]:
    idx = year * 12 + (month - 1) + k
    return idx // 12, idx % 12 + 1


def front_delivery_month(obs: np.datetime64) -> tuple[int, int]:
    """Delivery month of the nearest contract still trading at obs."""
    obs = np.datetime64(obs, "D")
    y, m = int(str(obs)[:4]), int(str(obs)[5:7])
    y, m = _add_months(y, m, 1)
    while last_trading_day(y, m) < obs:
        y, m = _add_months(y, m, 1)
    return y, m


def maturity_of(obs, n: int) -> float:
    """Time to maturity in years (ACT/365) of the n-th alive contract."""
    if n < 1:
        raise ValueError("contract position must be at least 1")
    obs = np.datetime64(obs, "D")
    y, m = front_delivery_month(obs)
    y, m = _add_months(y, m, n - 1)
    return float((maturity_date(y, m) - obs) / np.timedelta64(1, "D")) / DAYS_PER_YEAR


@dataclass
class ContractSchedule:
    """Per-date maturity bookkeeping for one contract position."""

    label: str
    dates: np.ndarray
    delivery_month: np.ndarray
    maturity: np.ndarray
    tau: np.ndarray


def contract_schedule(dates, label: str) -> ContractSchedule:
    n = _contract_position(label)
    dates = np.asarray(dates, dtype="datetime64[D]")
    deliv = np.empty(dates.shape[0], dtype="datetime64[M]")
    matur = np.empty(dates.shape[0], dtype="datetime64[D]")
    for i, d in enumerate(dates):
        y, m = front_delivery_month(d)
        y, m = _add_months(y, m, n - 1)
        deliv[i] = np.datetime64(f"{y:04d}-{m:02d}")
        matur[i] = maturity_date(y, m)
    tau = (matur - dates) / np.timedelta64(1, "D") / DAYS_PER_YEAR
    return ContractSchedule(label, dates, deliv, matur, tau.astype(float))


def _contract_position(label: str) -> int:
    if not label.startswith("F") or not label[1:].isdigit() or int(label[1:]) < 1:
        raise ParseError(f"contract label {label!r} is not of the form F<n>")
    return int(label[1:])


def _read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyPanel(f"{path}: file is empty") from None
        rows = [row for row in reader if any(cell.strip() for cell in row)]
    header = [h.strip() for h in header]
    if not rows:
        raise EmptyPanel(f"{path}: no data rows")
    return header, rows


def _parse_dates(rows, path) -> np.ndarray:
    out = np.empty(len(rows), dtype="datetime64[D]")
    seen = {}
    for i, row in enumerate(rows):
        raw = row[0].strip()
        try:
            out[i] = np.datetime64(raw, "D")
        except ValueError:
            raise ParseError(f"{path}: row {i + 2}: bad date {raw!r}") from None
        if raw in seen:
            raise ParseError(f"{path}: duplicate date {raw} (rows {seen[raw]} and {i + 2})")
        seen[raw] = i + 2
    return out


def _parse_column(rows, col: int, name: str, path) -> np.ndarray:
    out = np.full(len(rows), np.nan)
    for i, row in enumerate(rows):
        cell = row[col].strip() if col < len(row) else ""
        if cell in ("", "NA", "NaN", "nan", "."):
            continue
        try:
            out[i] = float(cell)
        except ValueError:
            raise ParseError(
                f"{path}: row {i + 2}, column {name}: cannot parse {cell!r}"
            ) from None
    return out


def load_futures_csv(path, contracts=None) -> Panel:
    """Read a vendor futures price file into a futures-only Panel.

    The file header is date,F1,F2,...; prices convert to natural logs and
    maturities come from the contract calendar.  contracts selects which
    positions to keep; by default every column except F1 is kept, matching
    the usual exclusion of the spot-adjacent contract.  Nonpositive prices
    are masked, reported, and do not fail the load.
    """
    header, rows = _read_rows(path)
    if not header or header[0].lower() != "date":
        raise ParseError(f"{path}: first header column must be 'date'")
    available = header[1:]
    for lab in available:
        _contract_position(lab)
    if contracts is None:
        keep = [lab for lab in available if lab != "F1"]
    else:
        keep = list(contracts)
        missing = [lab for lab in keep if lab not in available]
        if missing:
            raise ParseError(f"{path}: requested contracts not in file: {missing}")
    if not keep:
        raise EmptyPanel(f"{path}: no contracts retained")

    dates = _parse_dates(rows, path)
    order = np.argsort(dates)
    dates = dates[order]

    values = np.empty((len(rows), len(keep)))
    for j, lab in enumerate(keep):
        col = header.index(lab)
        values[:, j] = _parse_column(rows, col, lab, path)[order]

    nonpos = np.isfinite(values) & (values <= 0)
    if nonpos.any():
        n_bad = int(nonpos.sum())
        first = np.argwhere(nonpos)[0]
        logger.warning(
            "%s: masked %d nonpositive price(s), first at %s %s",
            path, n_bad, dates[first[0]], keep[first[1]],
        )
    mask = np.isfinite(values) & (values > 0)
    logs = np.where(mask, np.log(np.where(mask, values, 1.0)), np.nan)

    tau = np.empty_like(values)
    for j, lab in enumerate(keep):
        tau[:, j] = contract_schedule(dates, lab).tau
    return Panel(dates, logs, tau, tuple(keep), mask)


def _tenor_months(label: str, path) -> int:
    if not label.startswith("R") or not label[1:].isdigit() or int(label[1:]) < 1:
        raise ParseError(f"{path}: yield column {label!r} is not of the form R<months>")
    return int(label[1:])


def load_yields_csv(path, tenors=None) -> Panel:
    """Read a Treasury par-yield file (percent) into a yields-only Panel.

    Header is date,R3,R6,... with tenors in months; values convert to
    decimals and are treated as continuously compounded zero yields.
    """
    header, rows = _read_rows(path)
    if not header or header[0].lower() != "date":
        raise ParseError(f"{path}: first header column must be 'date'")
    available = header[1:]
    keep = list(tenors) if tenors is not None else list(available)
    missing = [lab for lab in keep if lab not in available]
    if missing:
        raise ParseError(f"{path}: requested tenors not in file: {missing}")
    if not keep:
        raise EmptyPanel(f"{path}: no tenors retained")

    dates = _parse_dates(rows, path)
    order = np.argsort(dates)
    dates = dates[order]
    values = np.empty((len(rows), len(keep)))
    for j, lab in enumerate(keep):
        col = header.index(lab)
        values[:, j] = _parse_column(rows, col, lab, path)[order] / 100.0
    tau = np.array([_tenor_months(lab, path) / 12.0 for lab in keep])

    return Panel(
        dates,
        np.zeros((dates.shape[0], 0)),
        np.zeros((dates.shape[0], 0)),
        (),
        None,
        values,
        tau,
        tuple(keep),
    )


def join_panels(futures: Panel, yields: Panel) -> Panel:
    """Inner join on dates of a futures block and a yields block."""
    if yields.n_yields < 1:
        raise LengthMismatch("second panel carries no yield series")
    common, idx_f, idx_y = np.intersect1d(
        futures.dates, yields.dates, return_indices=True
    )
    if common.size == 0:
        raise EmptyPanel("date ranges do not overlap")
    dropped = futures.n_dates - common.size + yields.n_dates - common.size
    logger.info(
        "joined panels on %d common dates (%d rows dropped)", common.size, dropped
    )
    return Panel(
        common,
        futures.fut_values[idx_f],
        futures.fut_tau[idx_f],
        futures.fut_labels,
        futures.fut_mask[idx_f],
        yields.yld_values[idx_y],
        yields.yld_tau.copy(),
        yields.yld_labels,
        yields.yld_mask[idx_y],
        futures.h,
    )


def balanced(panel: Panel) -> Panel:
    """Strict replication mode: keep only dates with every series observed."""
    full = panel.fut_mask.all(axis=1)
    if panel.n_yields:
        full &= panel.yld_mask.all(axis=1)
    if not full.any():
        raise EmptyPanel("no fully observed dates")
    return Panel(
        panel.dates[full],
        panel.fut_values[full],
        panel.fut_tau[full],
        panel.fut_labels,
        panel.fut_mask[full],
        panel.yld_values[full] if panel.n_yields else None,
        panel.yld_tau.copy() if panel.n_yields else None,
        panel.yld_labels,
        panel.yld_mask[full] if panel.n_yields else None,
        panel.h,
    )


def _fut_column_index(label: str, fallback: int) -> int:
    if label.startswith("F") and label[1:].isdigit():
        return int(label[1:])
    return fallback


def panel_to_csv(panel: Panel, path) -> None:
    """Write a Panel in the package's own schema.

    Columns: date, ln_F_<n> log prices, R_<months> decimal yields, then
    tau_F_<n>.  Masked entries are left blank.  Yield tenors are stored in
    the header as whole months.
    """
    fut_ids = [
        _fut_column_index(lab, j + 1) for j, lab in enumerate(panel.fut_labels)
    ]
    yld_months = [max(1, round(t * 12)) for t in panel.yld_tau]
    header = (
        ["date"]
        + [f"ln_F_{n}" for n in fut_ids]
        + [f"R_{m}" for m in yld_months]
        + [f"tau_F_{n}" for n in fut_ids]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(panel.n_dates):
            row = [str(panel.dates[t])]
            for j in range(panel.n_futures):
                row.append(
                    f"{panel.fut_values[t, j]:.17g}" if panel.fut_mask[t, j] else ""
                )
            for j in range(panel.n_yields):
                row.append(
                    f"{panel.yld_values[t, j]:.17g}" if panel.yld_mask[t, j] else ""
                )
            for j in range(panel.n_futures):
                row.append(
                    f"{panel.fut_tau[t, j]:.17g}" if panel.fut_mask[t, j] else ""
                )
            writer.writerow(row)


def panel_from_csv(path) -> Panel:
    """Read a Panel written by panel_to_csv."""
    header, rows = _read_rows(path)
    if not header or header[0] != "date":
        raise ParseError(f"{path}: first header column must be 'date'")
    fut_ids = [h[len("ln_F_"):] for h in header if h.startswith("ln_F_")]
    yld_cols = [h for h in header if h.startswith("R_")]
    for n in fut_ids:
        if f"tau_F_{n}" not in header:
            raise ParseError(f"{path}: missing tau_F_{n} column")

    dates = _parse_dates(rows, path)
    order = np.argsort(dates)
    dates = dates[order]

    n_fut = len(fut_ids)
    fut_values = np.empty((len(rows), n_fut))
    fut_tau = np.empty((len(rows), n_fut))
    for j, n in enumerate(fut_ids):
        fut_values[:, j] = _parse_column(rows, header.index(f"ln_F_{n}"), f"ln_F_{n}", path)[order]
        fut_tau[:, j] = _parse_column(rows, header.index(f"tau_F_{n}"), f"tau_F_{n}", path)[order]

    yld_values = None
    yld_tau = None
    labels_y: tuple[str, ...] = ()
    if yld_cols:
        yld_values = np.empty((len(rows), len(yld_cols)))
        for j, lab in enumerate(yld_cols):
            yld_values[:, j] = _parse_column(rows, header.index(lab), lab, path)[order]
        months = [_tenor_months(lab.replace("R_", "R", 1), path) for lab in yld_cols]
        yld_tau = np.array([m / 12.0 for m in months])
        labels_y = tuple(f"R{m}" for m in months)

    return Panel(
        dates, fut_values, fut_tau, tuple(f"F{n}" for n in fut_ids),
        None, yld_values, yld_tau, labels_y,
    )


def contract_taus(dates, labels) -> np.ndarray:
    """Per-date maturities, in years, for a set of contract positions.

    Returns a (n_dates, len(labels)) array consistent with what
    load_futures_csv would attach when reading those columns back."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    out = np.empty((dates.shape[0], len(labels)))
    for j, lab in enumerate(labels):
        out[:, j] = contract_schedule(dates, lab).tau
    return out


def panel_to_vendor_csv(panel: Panel, futures_path, yields_path=None) -> None:
    """Write a Panel in the ingestion schema: price levels and percent yields.

    Futures columns must be labeled F<n> so that load_futures_csv can map
    them back onto the contract calendar.  Maturities are not stored; the
    loader recomputes them, so round trips only make sense for panels whose
    taus came from contract_taus in the first place.
    """
    for lab in panel.fut_labels:
        _contract_position(lab)
    with open(futures_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(panel.fut_labels))
        for t in range(panel.n_dates):
            row = [str(panel.dates[t])]
            for j in range(panel.n_futures):
                row.append(
                    f"{math.exp(panel.fut_values[t, j]):.17g}"
                    if panel.fut_mask[t, j]
                    else ""
                )
            writer.writerow(row)
    if yields_path is None:
        if panel.n_yields:
            raise LengthMismatch("panel carries yields but no yields_path given")
        return
    with open(yields_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date"] + list(panel.yld_labels))
        for t in range(panel.n_dates):
            row = [str(panel.dates[t])]
            for j in range(panel.n_yields):
                row.append(
                    f"{100.0 * panel.yld_values[t, j]:.17g}"
                    if panel.yld_mask[t, j]
                    else ""
                )
            writer.writerow(row)
