"""Exogenous price sources and transition-probability estimation."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Optional

import numpy as np

from .domain import history_index

log = logging.getLogger(__name__)


class PriceFloorError(RuntimeError):
    """A generated price path reached zero."""


class SeriesLoadError(ValueError):
    """A price file could not be turned into a usable series."""


@dataclass
class PriceSeries:
    prices: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        if self.prices.ndim != 1 or self.prices.size < 2:
            raise ValueError("a price series needs at least two prices")
        if not np.all(self.prices > 0):
            raise ValueError("prices must be positive")

    def __len__(self):
        return self.prices.size

    def rises(self) -> np.ndarray:
        """Bit per step: 1 iff the price strictly rose."""
        return (np.diff(self.prices) > 0).astype(np.int8)


@dataclass(frozen=True)
class MarkovTable:
    """Up-move probabilities indexed by the last ``order`` moves (oldest bit first)."""

    order: int
    p_up: tuple[float, ...]

    def __post_init__(self):
        if self.order not in (0, 1, 2):
            raise ValueError(f"order must be 0, 1 or 2, got {self.order}")
        if len(self.p_up) != 2**self.order:
            raise ValueError(f"order {self.order} needs {2**self.order} probabilities")
        for p in self.p_up:
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} outside [0, 1]")

    def as_dict(self) -> dict:
        return {_pattern(i, self.order): p for i, p in enumerate(self.p_up)}


def _pattern(index: int, order: int) -> str:
    if order == 0:
        return "-"
    return "".join("u" if (index >> (order - 1 - j)) & 1 else "d" for j in range(order))


@dataclass(frozen=True)
class TrendParams:
    p_long: float
    p_short: float

    def __post_init__(self):
        for name, v in (("p_long", self.p_long), ("p_short", self.p_short)):
            if not -0.5 <= v <= 0.5:
                raise ValueError(f"{name}={v} outside [-0.5, 0.5]")


def walk_table(p_up: float) -> MarkovTable:
    return MarkovTable(0, (float(p_up),))


def table_from_trend(params: TrendParams) -> MarkovTable:
    """Order-2 table from the long-term and short-term trend parameters.

    Index order is dd, du, ud, uu (oldest move first), so
    p(uu) = 0.5 + p_long, p(dd) = 0.5 - p_long, p(ud) = 0.5 + p_short, p(du) = 0.5 - p_short.
    """
    uu, dd = _complementary(params.p_long)
    ud, du = _complementary(params.p_short)
    return MarkovTable(2, (dd, du, ud, uu))


def _complementary(p: float) -> tuple[float, float]:
    """(0.5 + p, 0.5 - p) rounded so the pair sums to exactly 1."""
    hi = 0.5 + abs(p)
    lo = 1.0 - hi  # exact for hi in [0.5, 1]
    return (hi, lo) if p >= 0 else (lo, hi)


def generate(table: MarkovTable, steps: int, p0: float = 1000.0,
             rng: Optional[np.random.Generator] = None) -> PriceSeries:
    """Unit-step price path driven by ``table``; returns ``steps + 1`` prices.

    The generator's own initial history (``table.order`` bits) is drawn
    uniformly from ``rng`` before the move draws.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not p0 > table.order:
        raise ValueError(f"initial price {p0} too low")
    rng = np.random.default_rng() if rng is None else rng
    order = table.order
    state = history_index(rng.integers(0, 2, size=order)) if order else 0
    draws = rng.random(steps)
    if order == 0:
        ups = draws < table.p_up[0]
    else:
        p = table.p_up
        mask = (1 << order) - 1
        ups = np.empty(steps, dtype=bool)
        for t, u in enumerate(draws.tolist()):
            up = u < p[state]
            ups[t] = up
            state = ((state << 1) | up) & mask
    path = p0 + np.concatenate(([0.0], np.cumsum(np.where(ups, 1.0, -1.0))))
    if path.min() <= 0:
        hit = int(np.argmax(path <= 0))
        raise PriceFloorError(f"generated price reached {path[hit]:g} at step {hit}")
    return PriceSeries(path, {"source": "generated", "order": order, "p_up": list(table.p_up), "p0": p0,
                              "steps": steps})


@dataclass
class TransitionEstimate:
    """Empirical up-move frequencies per history pattern.

    Patterns never observed have ``p_up`` NaN and are listed in ``undefined``.
    """

    order: int
    counts: np.ndarray
    ups: np.ndarray

    @property
    def p_up(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.counts > 0, self.ups / np.maximum(self.counts, 1), np.nan)

    @property
    def undefined(self) -> list[str]:
        return [_pattern(i, self.order) for i in np.flatnonzero(self.counts == 0)]

    def table(self) -> MarkovTable:
        if self.undefined:
            raise ValueError(f"patterns never observed: {', '.join(self.undefined)}")
        return MarkovTable(self.order, tuple(float(p) for p in self.p_up))

    def as_rows(self) -> list[dict]:
        return [{"pattern": _pattern(i, self.order), "count": int(self.counts[i]), "ups": int(self.ups[i]),
                 "p_up": float(self.p_up[i])} for i in range(2**self.order)]


def estimate_table(series: PriceSeries | np.ndarray, order: int = 2) -> TransitionEstimate:
    prices = series.prices if isinstance(series, PriceSeries) else np.asarray(series, dtype=float)
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    bits = (np.diff(prices) > 0).astype(np.int64)
    n = bits.size - order
    if n < 1:
        raise ValueError("series too short for the requested order")
    idx = np.zeros(n, dtype=np.int64)
    for j in range(order):
        idx = (idx << 1) | bits[j:j + n]
    outcome = bits[order:]
    counts = np.bincount(idx, minlength=2**order)
    ups = np.bincount(idx, weights=outcome, minlength=2**order).astype(np.int64)
    return TransitionEstimate(order, counts, ups)


def _parse_date(text: str) -> date:
    text = text.strip()
    for fmt in ("%Y-%m-%d", "%Y/%m/%d"):
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            pass
    try:
        return datetime.fromisoformat(text).date()
    except ValueError:
        raise SeriesLoadError(f"unrecognized date {text!r}") from None


def load_series_csv(path: str | Path, date_col: str = "Date", close_col: str = "Close",
                    min_rows: int = 4) -> PriceSeries:
    """Read daily closes from a CSV with a header row.

    Rows whose close is missing, non-numeric or non-positive are skipped and
    counted. Dates must be strictly increasing.
    """
    path = Path(path)
    prices, dates, skipped = [], [], 0
    try:
        with path.open(newline="", encoding="utf-8-sig") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or date_col not in reader.fieldnames or close_col not in reader.fieldnames:
                raise SeriesLoadError(f"{path}: need columns {date_col!r} and {close_col!r}, "
                                      f"found {reader.fieldnames}")
            for row in reader:
                d = _parse_date(row[date_col] or "")
                raw = (row[close_col] or "").strip()
                try:
                    close = float(raw)
                except ValueError:
                    close = math.nan
                if not (math.isfinite(close) and close > 0):
                    skipped += 1
                    continue
                if dates and d <= dates[-1]:
                    raise SeriesLoadError(f"{path}: dates not increasing at {d.isoformat()}")
                dates.append(d)
                prices.append(close)
    except (OSError, csv.Error, UnicodeDecodeError) as exc:
        raise SeriesLoadError(f"{path}: {exc}") from exc
    if skipped:
        log.warning("%s: skipped %d rows with missing or non-positive close", path, skipped)
    if len(prices) < min_rows:
        raise SeriesLoadError(f"{path}: only {len(prices)} usable rows, need {min_rows}")
    return PriceSeries(np.array(prices), {"source": "csv", "file": path.name, "skipped": skipped,
                                          "first_date": dates[0].isoformat(), "last_date": dates[-1].isoformat()})


def fmt_num(x: float) -> str:
    """Plain positional decimal, shortest round-trip representation."""
    return np.format_float_positional(float(x), trim="-")


def write_series_csv(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "price"])
        for t, p in enumerate(series.prices):
            w.writerow([t, fmt_num(p)])
