"""Reading and smoothing cumulative case counts per region.

Input is a CSV with a ``date,REGION1,REGION2,...`` header, ISO-8601 dates and
possibly empty cells. Problems that can be repaired (gaps, decreasing counts,
negative increments) are kept as human-readable flags rather than fixed
silently.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TextIO

import numpy as np

from .simulate import Dataset


class IngestError(ValueError):
    pass


@dataclass
class RegionSeries:
    labels: list[str]
    dates: list[dt.date]
    cumulative: np.ndarray  # D x N
    flags: list[str] = field(default_factory=list)
    source: str = ""
    window: int = 1

    @property
    def n_obs(self) -> int:
        return self.cumulative.shape[0]

    @property
    def delta_t(self) -> float:
        if len(self.dates) < 2:
            return 1.0
        steps = np.diff([d.toordinal() for d in self.dates])
        return float(np.median(steps))

    def select(self, labels: list[str]) -> "RegionSeries":
        idx = [self.labels.index(lab) for lab in labels]
        return replace(self, labels=list(labels), cumulative=self.cumulative[:, idx], flags=list(self.flags))


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise IngestError(f"{where}: invalid ISO-8601 date {text!r}") from None


def parse_timeseries(source: str | Path | TextIO, min_cases: float | None = None) -> RegionSeries:
    """Read cumulative counts, forward-filling empty cells.

    ``min_cases`` drops regions whose last cumulative count is below it.
    """
    if isinstance(source, (str, Path)):
        name = str(source)
        with open(source, newline="") as fh:
            text = fh.read()
    else:
        name = getattr(source, "name", "<stream>")
        text = source.read()
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError(f"{name}: empty file") from None
    if not header or header[0].strip().lower() != "date":
        raise IngestError(f"{name}:1: header must start with 'date'")
    labels = [h.strip() for h in header[1:]]
    if not labels or any(not lab for lab in labels):
        raise IngestError(f"{name}:1: region labels must be nonempty")
    if len(set(labels)) != len(labels):
        raise IngestError(f"{name}:1: duplicate region labels")

    dates: list[dt.date] = []
    rows: list[list[float]] = []
    flags: list[str] = []
    last = [np.nan] * len(labels)
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        where = f"{name}:{lineno}"
        if len(row) != len(labels) + 1:
            raise IngestError(f"{where}: expected {len(labels) + 1} fields, got {len(row)}")
        date = _parse_date(row[0], where)
        if dates and date <= dates[-1]:
            raise IngestError(f"{where}: date {date} does not follow {dates[-1]}")
        values = []
        for j, cell in enumerate(row[1:]):
            cell = cell.strip()
            if not cell:
                fill = last[j] if not np.isnan(last[j]) else 0.0
                flags.append(f"line {lineno} {labels[j]}: missing, filled with {fill:g}")
                values.append(fill)
                continue
            try:
                x = float(cell)
            except ValueError:
                raise IngestError(f"{where}: non-numeric value {cell!r} for {labels[j]}") from None
            if x < 0 or not np.isfinite(x):
                raise IngestError(f"{where}: invalid count {cell!r} for {labels[j]}")
            if not np.isnan(last[j]) and x < last[j]:
                flags.append(f"line {lineno} {labels[j]}: cumulative count decreases {last[j]:g} -> {x:g}")
            values.append(x)
        last = values
        dates.append(date)
        rows.append(values)
    if not rows:
        raise IngestError(f"{name}: no data rows")
    steps = np.diff([d.toordinal() for d in dates])
    if len(steps) and np.any(steps != steps[0]):
        flags.append("observation dates are unevenly spaced")
    series = RegionSeries(labels, dates, np.array(rows, dtype=float), flags, source=name)
    if min_cases is not None:
        keep = [lab for lab, final in zip(labels, series.cumulative[-1]) if final >= min_cases]
        dropped = [lab for lab in labels if lab not in keep]
        if not keep:
            raise IngestError(f"{name}: no region reaches {min_cases:g} cases")
        series = series.select(keep)
        if dropped:
            series.flags.append(f"dropped below {min_cases:g} cases: {', '.join(dropped)}")
    return series


def smooth_moving_average(series: RegionSeries, window: int) -> RegionSeries:
    """Centred moving average per column; edges average over the points available."""
    d = series.n_obs
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if window > d:
        raise ValueError(f"window {window} exceeds the {d} observations")
    h = window // 2
    x = series.cumulative
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    lo = np.clip(np.arange(d) - h, 0, d)
    hi = np.clip(np.arange(d) + h + 1, 0, d)
    smoothed = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return replace(series, cumulative=smoothed, flags=list(series.flags), window=window)


def to_deltaJ(series: RegionSeries) -> Dataset:
    """First differences of the cumulative counts; negative increments become 0 and are flagged."""
    if series.n_obs < 2:
        raise ValueError("need at least two observations to difference")
    dj = np.diff(series.cumulative, axis=0)
    flags = list(series.flags)
    for d, j in zip(*np.nonzero(dj < 0)):
        flags.append(f"{series.dates[d]} {series.labels[j]}: negative increment {dj[d, j]:g} set to 0")
    dj[dj < 0] = 0.0
    t0 = series.dates[0].toordinal()
    times = np.array([d.toordinal() - t0 for d in series.dates[:-1]], dtype=float)
    return Dataset("deltaJ_series", dj, series.delta_t, list(series.labels), times=times, flags=flags)


def provenance(series: RegionSeries, dataset: Dataset | None = None) -> dict:
    doc = {
        "source": series.source,
        "labels": list(series.labels),
        "first_date": series.dates[0].isoformat(),
        "last_date": series.dates[-1].isoformat(),
        "n_dates": series.n_obs,
        "smoothing_window": series.window,
        "flags": list(dataset.flags if dataset is not None else series.flags),
    }
    return doc


def write_provenance(path: str | Path, series: RegionSeries, dataset: Dataset | None = None) -> None:
    Path(path).write_text(json.dumps(provenance(series, dataset), indent=2) + "\n")
