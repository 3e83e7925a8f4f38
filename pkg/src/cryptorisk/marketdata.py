"""Price ingestion, log returns and calendar alignment.

Crypto assets trade every calendar day; an equity benchmark trades on
exchange days only.  Panels use the 7-day calendar and the benchmark is
padded with zero log returns on days it has no close.

Dates are taken verbatim from the input files (whatever time-stamping
convention the exporter used); no timezone conversion is applied.
"""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import AlignmentError, DomainError, DuplicateDateError, InsufficientDataError, ParseError

ONE_DAY = np.timedelta64(1, "D")


@dataclass(frozen=True)
class PriceSeries:
    asset_id: str
    dates: np.ndarray  # datetime64[D], strictly increasing
    closes: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        closes = np.asarray(self.closes, dtype=float)
        if dates.shape != closes.shape or dates.ndim != 1:
            raise ValueError("dates and closes must be 1-d arrays of equal length")
        if closes.size and not np.all(np.isfinite(closes)):
            raise DomainError(f"{self.asset_id}: non-finite close")
        if closes.size and np.any(closes <= 0):
            raise DomainError(f"{self.asset_id}: prices must be positive")
        if dates.size > 1 and np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise ValueError(f"{self.asset_id}: dates must be strictly increasing")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "closes", closes)

    def __len__(self):
        return self.closes.size


@dataclass(frozen=True)
class ReturnPanel:
    assets: tuple[str, ...]
    dates: np.ndarray  # datetime64[D]
    returns: np.ndarray  # T x d log returns

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        returns = np.asarray(self.returns, dtype=float)
        if returns.ndim == 1:
            returns = returns[:, None]
        if returns.shape != (dates.size, len(self.assets)):
            raise ValueError(
                f"returns shape {returns.shape} does not match "
                f"{dates.size} dates x {len(self.assets)} assets"
            )
        if not np.all(np.isfinite(returns)):
            raise DomainError("panel contains non-finite returns")
        object.__setattr__(self, "assets", tuple(self.assets))
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "returns", returns)

    def __len__(self):
        return self.dates.size

    def column(self, asset: str) -> np.ndarray:
        return self.returns[:, self.assets.index(asset)]

    def select(self, assets: Sequence[str]) -> "ReturnPanel":
        idx = [self.assets.index(a) for a in assets]
        return ReturnPanel(tuple(assets), self.dates, self.returns[:, idx])

    def slice(self, start: int, stop: int) -> "ReturnPanel":
        return ReturnPanel(self.assets, self.dates[start:stop], self.returns[start:stop])


def _parse_date(text: str) -> np.datetime64:
    return np.datetime64(dt.date.fromisoformat(text.strip()), "D")


def load_prices(
    path,
    date_column: str = "date",
    close_column: str = "close",
    asset_id: Optional[str] = None,
) -> PriceSeries:
    """Read a ``date,close`` CSV (ISO-8601 dates, header row) into a PriceSeries.

    Rows may come in any order; the result is sorted by date.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"price file not found: {path}")
    asset_id = asset_id or path.stem
    rows: list[tuple[np.datetime64, float, int]] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        header = [h.strip().lower() for h in header]
        try:
            di = header.index(date_column.lower())
            ci = header.index(close_column.lower())
        except ValueError:
            raise ParseError(
                f"header must contain {date_column!r} and {close_column!r} columns", path, 1
            ) from None
        for record in reader:
            line = reader.line_num
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) <= max(di, ci):
                raise ParseError(f"expected at least {max(di, ci) + 1} fields", path, line)
            try:
                date = _parse_date(record[di])
            except ValueError:
                raise ParseError(f"bad date {record[di]!r}", path, line) from None
            try:
                close = float(record[ci])
            except ValueError:
                raise ParseError(f"bad close {record[ci]!r}", path, line) from None
            if not math.isfinite(close) or close <= 0:
                raise DomainError(f"{path}:{line}: close must be a positive number, got {record[ci]}")
            rows.append((date, close, line))
    if not rows:
        raise ParseError("no data rows", path)
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise DuplicateDateError(f"{path}:{cur[2]}: duplicate date {cur[0]} (also line {prev[2]})")
    dates = np.array([r[0] for r in rows], dtype="datetime64[D]")
    closes = np.array([r[1] for r in rows], dtype=float)
    return PriceSeries(asset_id, dates, closes)


def log_returns(prices: PriceSeries) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dates, r)`` with ``r_t = ln(S_t / S_{t-1})``; one element shorter than the input."""
    if len(prices) < 2:
        raise InsufficientDataError(f"{prices.asset_id}: need at least 2 prices for a return")
    return prices.dates[1:], np.diff(np.log(prices.closes))


def _daily_calendar(start: np.datetime64, end: np.datetime64) -> np.ndarray:
    return np.arange(start, end + ONE_DAY, ONE_DAY)


def align_panel(
    series: Iterable[PriceSeries],
    benchmark: Optional[PriceSeries] = None,
    start=None,
    end=None,
) -> ReturnPanel:
    """Build a log-return panel on the shared 7-day calendar.

    The calendar runs over the intersection of all input date ranges
    (optionally narrowed by ``start``/``end``).  Crypto series must have a
    close on every calendar day inside it; a gap raises AlignmentError.  The
    benchmark is carried forward over non-trading days, which gives zero
    log returns there.  The benchmark column is appended last.
    """
    series = list(series)
    if not series:
        raise AlignmentError("no price series given")
    names = [s.asset_id for s in series]
    if benchmark is not None:
        names.append(benchmark.asset_id)
    if len(set(names)) != len(names):
        raise AlignmentError(f"duplicate asset ids: {names}")
    everything = series + ([benchmark] if benchmark is not None else [])
    if any(len(s) == 0 for s in everything):
        raise AlignmentError("empty price series")

    lo = max(s.dates[0] for s in everything)
    hi = min(s.dates[-1] for s in everything)
    if start is not None:
        lo = max(lo, np.datetime64(start, "D"))
    if end is not None:
        hi = min(hi, np.datetime64(end, "D"))
    if hi <= lo:
        raise AlignmentError(f"date ranges do not overlap (latest start {lo}, earliest end {hi})")

    calendar = _daily_calendar(lo, hi)
    columns = []
    for s in series:
        pos = np.searchsorted(s.dates, calendar)
        ok = (pos < s.dates.size) & (s.dates[np.minimum(pos, s.dates.size - 1)] == calendar)
        if not np.all(ok):
            missing = calendar[~ok]
            raise AlignmentError(
                f"{s.asset_id}: {missing.size} missing calendar day(s), first {missing[0]}"
            )
        columns.append(np.diff(np.log(s.closes[pos])))
    if benchmark is not None:
        # last benchmark close on or before each calendar day
        pos = np.searchsorted(benchmark.dates, calendar, side="right") - 1
        if pos[0] < 0:
            raise AlignmentError(f"{benchmark.asset_id}: no close on or before {calendar[0]}")
        columns.append(np.diff(np.log(benchmark.closes[pos])))
    return ReturnPanel(tuple(names), calendar[1:], np.column_stack(columns))


def prices_from_panel(panel: ReturnPanel, initial: float = 1.0) -> list[PriceSeries]:
    """Rebuild daily price paths from a panel (first date is one day before the panel)."""
    dates = np.concatenate([[panel.dates[0] - ONE_DAY], panel.dates])
    out = []
    for j, name in enumerate(panel.assets):
        path = initial * np.exp(np.concatenate([[0.0], np.cumsum(panel.returns[:, j])]))
        out.append(PriceSeries(name, dates, path))
    return out


def write_panel_csv(panel: ReturnPanel, path, header_lines: Sequence[str] = ()) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date", *panel.assets])
        for date, row in zip(panel.dates, panel.returns):
            writer.writerow([str(date), *(repr(float(x)) for x in row)])


def read_panel_csv(path) -> ReturnPanel:
    path = Path(path)
    with path.open(newline="") as fh:
        lines = fh.readlines()
    skipped = 0
    while skipped < len(lines) and lines[skipped].startswith("#"):
        skipped += 1
    reader = csv.reader(lines[skipped:])
    header = next(reader)
    if not header or header[0].strip().lower() != "date":
        raise ParseError("panel CSV must start with a 'date' column", path, 1)
    dates, rows = [], []
    for i, record in enumerate(reader, start=skipped + 2):
        if not record:
            continue
        try:
            dates.append(_parse_date(record[0]))
            rows.append([float(x) for x in record[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), path, i) from None
    return ReturnPanel(tuple(h.strip() for h in header[1:]), np.array(dates), np.array(rows, dtype=float))


def monthly_price_std(prices: PriceSeries) -> float:
    """Mean over calendar months of the within-month standard deviation of closes."""
    months = prices.dates.astype("datetime64[M]")
    stds = []
    for m in np.unique(months):
        chunk = prices.closes[months == m]
        if chunk.size > 1:
            stds.append(float(np.std(chunk, ddof=1)))
    return float(np.mean(stds)) if stds else 0.0


def summary_stats(prices: PriceSeries) -> dict:
    """Descriptive statistics of a price series: price and return moments plus max drawdown."""
    from .risk import mdd

    _, r = log_returns(prices)
    return {
        "asset": prices.asset_id,
        "observations": int(len(prices)),
        "price_mean": float(np.mean(prices.closes)),
        "price_std": float(np.std(prices.closes, ddof=1)) if len(prices) > 1 else 0.0,
        "monthly_price_std": monthly_price_std(prices),
        "return_mean": float(np.mean(r)),
        "return_std": float(np.std(r, ddof=1)) if r.size > 1 else 0.0,
        "mdd": mdd(prices.closes),
    }


_SUMMARY_ROWS = (
    ("Observations", "observations", "{:d}"),
    ("Mean Price($)", "price_mean", "{:.6g}"),
    ("Standard Deviation($)", "monthly_price_std", "{:.6g}"),
    ("Mean Return", "return_mean", "{:.6g}"),
    ("Return Standard Deviation", "return_std", "{:.6g}"),
    ("Maximum Drawdown(%)", "mdd", "{:.2f}"),
)


def write_summary_csv(stats: Sequence[dict], path, header_lines: Sequence[str] = ()) -> None:
    """One column per asset; ``Standard Deviation($)`` is the mean within-month price std."""
    with Path(path).open("w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["Statistic", *(st["asset"] for st in stats)])
        for label, key, fmt in _SUMMARY_ROWS:
            writer.writerow([label, *(fmt.format(st[key] * 100.0 if key == "mdd" else st[key]) for st in stats)])
