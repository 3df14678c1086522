"""Weekly inflow series: loading, calendar normalization and synthetic data."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

WEEKS_PER_YEAR = 52
DAYS_PER_WEEK = 7.0
OMEGA_YEAR = 2.0 * math.pi / 365.25

# MW per unit of the source data; "cumecs:<factor>" carries its own factor.
UNIT_FACTORS = {
    "mw": 1.0,
    "gwh-per-week": 1000.0 / 168.0,
}


class InflowDataError(ValueError):
    """Raised for malformed or inconsistent inflow input."""


@dataclass(frozen=True)
class InflowRecord:
    year: int
    week: int
    t_days: float
    inflow_mw: float


@dataclass(frozen=True)
class InflowSeries:
    """Ordered weekly inflow observations in average MW over the week."""

    records: tuple[InflowRecord, ...]

    def __post_init__(self):
        seen = set()
        prev = None
        for i, rec in enumerate(self.records):
            if not 1 <= rec.week <= WEEKS_PER_YEAR:
                raise InflowDataError(f"record {i}: week out of range: {rec.week}")
            if not (math.isfinite(rec.inflow_mw) and rec.inflow_mw >= 0):
                raise InflowDataError(f"record {i}: inflow must be finite and >= 0, got {rec.inflow_mw}")
            key = (rec.year, rec.week)
            if key in seen:
                raise InflowDataError(f"record {i}: duplicate (year, week) {key}")
            if prev is not None and key < prev:
                raise InflowDataError(f"record {i}: records not ordered by (year, week)")
            seen.add(key)
            prev = key

    def __len__(self) -> int:
        return len(self.records)

    @property
    def t_days(self) -> np.ndarray:
        return np.array([r.t_days for r in self.records], dtype=float)

    @property
    def inflow(self) -> np.ndarray:
        return np.array([r.inflow_mw for r in self.records], dtype=float)

    @property
    def weeks(self) -> np.ndarray:
        return np.array([r.week for r in self.records], dtype=int)

    @property
    def years(self) -> np.ndarray:
        return np.array([r.year for r in self.records], dtype=int)

    def partial_final_year(self) -> bool:
        """True when the last year does not cover all 52 weeks."""
        if not self.records:
            return False
        last = self.records[-1].year
        return sum(1 for r in self.records if r.year == last) < WEEKS_PER_YEAR

    @classmethod
    def from_arrays(cls, years: Sequence[int], weeks: Sequence[int], inflow: Sequence[float]) -> "InflowSeries":
        """Build a series, assigning ``t_days = 7 * (global week index - 1)``.

        The global index counts 52-week years from the first year, so a series
        starting mid-year still places each week at its calendar slot.
        """
        years = [int(y) for y in years]
        weeks = [int(w) for w in weeks]
        if not years:
            return cls(())
        y0 = years[0]
        recs = []
        for y, w, f in zip(years, weeks, inflow):
            idx = (y - y0) * WEEKS_PER_YEAR + (w - weeks[0])
            recs.append(InflowRecord(y, w, DAYS_PER_WEEK * idx, float(f)))
        return cls(tuple(recs))


def parse_units(spec: str) -> float:
    """Conversion factor to MW for a ``--inflow-units`` value."""
    spec = spec.strip().lower()
    if spec in UNIT_FACTORS:
        return UNIT_FACTORS[spec]
    if spec.startswith("cumecs:"):
        try:
            factor = float(spec.split(":", 1)[1])
        except ValueError:
            raise InflowDataError(f"bad cumecs factor in {spec!r}") from None
        if not (math.isfinite(factor) and factor > 0):
            raise InflowDataError(f"cumecs factor must be positive, got {factor}")
        return factor
    raise InflowDataError(f"unknown inflow units {spec!r}")


def load_inflow_csv(path, factor: float = 1.0) -> InflowSeries:
    """Read a ``year,week,inflow`` CSV and convert inflow to MW."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"inflow file not found: {path}")
    years, weeks, flows = [], [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["year", "week", "inflow"]:
            raise InflowDataError(f"{path}: expected header 'year,week,inflow', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InflowDataError(f"{path}: malformed row {lineno}: {row}")
            try:
                y, w, f = int(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise InflowDataError(f"{path}: malformed row {lineno}: {row}") from None
            if not 1 <= w <= WEEKS_PER_YEAR:
                raise InflowDataError(f"{path}: row {lineno}: week out of range: {w}")
            if not math.isfinite(f) or f < 0:
                raise InflowDataError(f"{path}: row {lineno}: negative or non-finite inflow {f}")
            years.append(y)
            weeks.append(w)
            flows.append(f * factor)
    pairs = list(zip(years, weeks))
    if len(set(pairs)) != len(pairs):
        dup = next(p for i, p in enumerate(pairs) if p in pairs[:i])
        raise InflowDataError(f"{path}: duplicate (year, week) {dup}")
    series = InflowSeries.from_arrays(years, weeks, flows)
    if series.partial_final_year():
        warnings.warn(f"{path}: final year {years[-1]} is incomplete", stacklevel=2)
    return series


def write_inflow_csv(series: InflowSeries, path) -> None:
    # repr() keeps the full float so that load(write(s)) is exact
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("year,week,inflow\n")
        for r in series.records:
            fh.write(f"{r.year},{r.week},{r.inflow_mw!r}\n")


def truncate_year53(raw: Iterable[tuple]) -> InflowSeries:
    """Normalize dated weekly records to 52-week years.

    ``raw`` holds ``(date, inflow_mw)`` pairs where ``date`` is a
    ``datetime.date`` (the week's start). Weeks are numbered within each
    calendar year in date order; a 53rd week is averaged into week 52.
    """
    by_year: dict[int, list] = {}
    for d, f in sorted(raw, key=lambda p: p[0]):
        by_year.setdefault(d.year, []).append(float(f))
    years, weeks, flows = [], [], []
    for y in sorted(by_year):
        vals = by_year[y]
        if len(vals) < WEEKS_PER_YEAR:
            raise InflowDataError(
                f"year {y} has only {len(vals)} weeks; missing weeks {len(vals) + 1}..{WEEKS_PER_YEAR}"
            )
        if len(vals) > WEEKS_PER_YEAR + 1:
            raise InflowDataError(f"year {y} has {len(vals)} weekly records (> 53)")
        if len(vals) == WEEKS_PER_YEAR + 1:
            vals = vals[:51] + [(vals[51] + vals[52]) / 2.0]
        years += [y] * WEEKS_PER_YEAR
        weeks += list(range(1, WEEKS_PER_YEAR + 1))
        flows += vals
    return InflowSeries.from_arrays(years, weeks, flows)


@dataclass(frozen=True)
class SyntheticParams:
    """Seasonal inflow generator settings.

    Noise is a stationary AR(1) process with marginal standard deviation
    ``noise`` and lag-one correlation ``persistence``.
    """

    mean: float = 700.0
    amplitude: float = 400.0
    phase: float = -0.45
    noise: float = 250.0
    persistence: float = 0.95
    omega: float = OMEGA_YEAR
    start_year: int = 1948


def synthesize_inflow(params: SyntheticParams, years: int, seed: int) -> InflowSeries:
    if years < 1:
        raise ValueError("years must be >= 1")
    if params.noise < 0:
        raise ValueError("noise scale must be >= 0")
    if not -1.0 < params.persistence < 1.0:
        raise ValueError("persistence must lie in (-1, 1)")
    n = years * WEEKS_PER_YEAR
    t = DAYS_PER_WEEK * np.arange(n)
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal(n)
    noise = np.empty(n)
    rho = params.persistence
    scale = math.sqrt(1.0 - rho * rho)
    noise[0] = eps[0]
    for i in range(1, n):
        noise[i] = rho * noise[i - 1] + scale * eps[i]
    flow = params.mean + params.amplitude * np.cos(params.omega * t + params.phase) + params.noise * noise
    flow = np.maximum(flow, 0.0)
    yr = np.repeat(np.arange(params.start_year, params.start_year + years), WEEKS_PER_YEAR)
    wk = np.tile(np.arange(1, WEEKS_PER_YEAR + 1), years)
    return InflowSeries.from_arrays(yr, wk, flow)
