"""Balanced unit-by-year panels: CSV ingestion, donor exclusion, windowing."""
from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateCell,
    EmptyDonorPool,
    EmptyWindow,
    MalformedRow,
    NonNumericValue,
    PanelInvariantError,
    TreatedUnitExcluded,
    UnbalancedPanel,
    UnknownUnit,
)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Balanced panel of one outcome plus optional covariates.

    ``outcomes`` has shape (n_units, n_periods). Each covariate is an array of
    the same shape; NaN marks a missing cell. Time-invariant covariates are
    simply constant along the period axis.
    """

    units: tuple
    periods: np.ndarray
    outcomes: np.ndarray
    covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    conflict_episodes: Mapping[str, tuple] = field(default_factory=dict)
    outcome_label: str = "outcome"

    def __post_init__(self):
        units = tuple(str(u) for u in self.units)
        periods = _frozen(self.periods, dtype=np.int64)
        outcomes = _frozen(self.outcomes)
        if len(set(units)) != len(units):
            raise PanelInvariantError("unit identifiers are not unique")
        if len(units) < 2 or periods.size < 3:
            raise PanelInvariantError(
                f"need at least 2 units and 3 periods, got {len(units)} and {periods.size}"
            )
        if np.any(np.diff(periods) != 1):
            raise PanelInvariantError("periods must be consecutive years")
        if outcomes.shape != (len(units), periods.size):
            raise PanelInvariantError(
                f"outcome matrix shape {outcomes.shape} != ({len(units)}, {periods.size})"
            )
        if not np.all(np.isfinite(outcomes)):
            bad = np.argwhere(~np.isfinite(outcomes))
            raise UnbalancedPanel([(units[i], int(periods[t])) for i, t in bad])
        covs = {}
        for name, values in self.covariates.items():
            values = _frozen(values)
            if values.shape != outcomes.shape:
                raise PanelInvariantError(f"covariate {name!r} has shape {values.shape}")
            if np.any(np.isinf(values)):
                raise NonNumericValue(f"covariate {name!r} contains infinite values")
            covs[str(name)] = values
        lo, hi = int(periods[0]), int(periods[-1])
        episodes = {}
        for unit, spans in self.conflict_episodes.items():
            if unit not in units:
                continue
            clean = []
            for s, e in spans:
                s, e = int(s), int(e)
                if s > e:
                    raise PanelInvariantError(f"conflict episode ({s}, {e}) for {unit} has start > end")
                if e < lo or s > hi:
                    raise PanelInvariantError(
                        f"conflict episode ({s}, {e}) for {unit} lies outside {lo}-{hi}"
                    )
                clean.append((s, e))
            if clean:
                episodes[unit] = tuple(clean)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "periods", periods)
        object.__setattr__(self, "outcomes", outcomes)
        object.__setattr__(self, "covariates", covs)
        object.__setattr__(self, "conflict_episodes", episodes)

    @property
    def n_units(self):
        return len(self.units)

    @property
    def n_periods(self):
        return self.periods.size

    def unit_index(self, unit):
        try:
            return self.units.index(str(unit))
        except ValueError:
            raise UnknownUnit(f"unit {unit!r} not in panel") from None

    def period_index(self, year):
        i = int(year) - int(self.periods[0])
        if i < 0 or i >= self.n_periods:
            raise EmptyWindow(f"year {year} outside {self.periods[0]}-{self.periods[-1]}")
        return i

    def series(self, unit):
        return self.outcomes[self.unit_index(unit)]

    def select_units(self, keep: Sequence[str]) -> "PanelDataset":
        """Subset of units, preserving the panel's own ordering."""
        keep = set(keep)
        idx = [i for i, u in enumerate(self.units) if u in keep]
        return PanelDataset(
            units=tuple(self.units[i] for i in idx),
            periods=self.periods,
            outcomes=self.outcomes[idx],
            covariates={k: v[idx] for k, v in self.covariates.items()},
            conflict_episodes={u: s for u, s in self.conflict_episodes.items() if u in keep},
            outcome_label=self.outcome_label,
        )

    def equals(self, other: "PanelDataset") -> bool:
        return (
            self.units == other.units
            and np.array_equal(self.periods, other.periods)
            and np.array_equal(self.outcomes, other.outcomes)
            and self.covariates.keys() == other.covariates.keys()
            and all(
                np.array_equal(v, other.covariates[k], equal_nan=True)
                for k, v in self.covariates.items()
            )
            and dict(self.conflict_episodes) == dict(other.conflict_episodes)
            and self.outcome_label == other.outcome_label
        )


@dataclass(frozen=True)
class PanelSchema:
    """Column roles of a panel CSV. ``covariates=None`` means every other column."""

    unit: str = "unit"
    period: str = "year"
    outcome: str = "outcome"
    covariates: tuple | None = None


@dataclass(frozen=True)
class ExclusionRules:
    drop_units_with_conflict_overlapping: tuple | None = None
    drop_units: tuple = ()
    keep_units: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "drop_units", tuple(str(u) for u in self.drop_units))
        if self.keep_units is not None:
            object.__setattr__(self, "keep_units", tuple(str(u) for u in self.keep_units))
            both = set(self.drop_units) & set(self.keep_units)
            if both:
                raise ValueError(f"units both dropped and kept: {sorted(both)}")
        w = self.drop_units_with_conflict_overlapping
        if w is not None:
            s, e = int(w[0]), int(w[1])
            if s > e:
                raise ValueError(f"conflict window ({s}, {e}) has start > end")
            object.__setattr__(self, "drop_units_with_conflict_overlapping", (s, e))


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _number(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise NonNumericValue(f"line {line}: column {column!r} has non-numeric value {text!r}") from None
    if not math.isfinite(value):
        raise NonNumericValue(f"line {line}: column {column!r} has non-finite value {text!r}")
    return value


def _year(text, line, column):
    try:
        return int(text)
    except ValueError:
        try:
            value = float(text)
        except ValueError:
            value = math.nan
        if math.isfinite(value) and value == int(value):
            return int(value)
        raise NonNumericValue(f"line {line}: column {column!r} is not an integer year: {text!r}") from None


def load_panel(source, schema: PanelSchema | None = None, conflicts=None) -> PanelDataset:
    """Read a long-format panel CSV (one row per unit-year).

    ``source`` may be a path, bytes, or a text/binary stream. ``conflicts`` is
    an optional conflict CSV (``unit,start_year,end_year``) or an already
    parsed ``{unit: [(start, end), ...]}`` mapping.
    """
    schema = schema or PanelSchema()
    fh = _open_text(source)
    try:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MalformedRow(1, "empty file") from None
        if header and header[0].startswith("﻿"):
            header[0] = header[0][1:]
        for col in (schema.unit, schema.period, schema.outcome):
            if col not in header:
                raise MalformedRow(1, f"missing required column {col!r}")
        if len(set(header)) != len(header):
            raise MalformedRow(1, "duplicate column names")
        iu, ip, io_ = header.index(schema.unit), header.index(schema.period), header.index(schema.outcome)
        if schema.covariates is None:
            cov_names = [h for h in header if h not in (schema.unit, schema.period, schema.outcome)]
        else:
            cov_names = list(schema.covariates)
            for c in cov_names:
                if c not in header:
                    raise MalformedRow(1, f"missing covariate column {c!r}")
        icov = [header.index(c) for c in cov_names]

        cells = {}
        units, years = {}, set()
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(line, f"expected {len(header)} fields, found {len(row)}")
            unit = row[iu].strip()
            if not unit:
                raise MalformedRow(line, "empty unit identifier")
            year = _year(row[ip].strip(), line, schema.period)
            key = (unit, year)
            if key in cells:
                raise DuplicateCell(f"line {line}: duplicate cell ({unit}, {year})")
            out_text = row[io_].strip()
            outcome = math.nan if out_text == "" else _number(out_text, line, schema.outcome)
            covs = []
            for c, j in zip(cov_names, icov):
                t = row[j].strip()
                covs.append(math.nan if t == "" else _number(t, line, c))
            cells[key] = (outcome, covs)
            units.setdefault(unit, None)
            years.add(year)
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()

    if not cells:
        raise MalformedRow(2, "no data rows")
    unit_list = list(units)
    periods = np.arange(min(years), max(years) + 1)
    Y = np.full((len(unit_list), periods.size), np.nan)
    Z = np.full((len(cov_names), len(unit_list), periods.size), np.nan)
    missing = []
    for i, u in enumerate(unit_list):
        for t, y in enumerate(periods):
            cell = cells.get((u, int(y)))
            if cell is None or math.isnan(cell[0]):
                missing.append((u, int(y)))
                continue
            Y[i, t] = cell[0]
            if cov_names:
                Z[:, i, t] = cell[1]
    if missing:
        raise UnbalancedPanel(missing)
    if conflicts is None:
        episodes = {}
    elif isinstance(conflicts, Mapping):
        episodes = conflicts
    else:
        episodes = load_conflicts(conflicts)
    lo, hi = int(periods[0]), int(periods[-1])
    episodes = {u: [(s, e) for s, e in spans if s <= hi and e >= lo] for u, spans in episodes.items()}
    return PanelDataset(
        units=tuple(unit_list),
        periods=periods,
        outcomes=Y,
        covariates={c: Z[k] for k, c in enumerate(cov_names)},
        conflict_episodes=episodes,
        outcome_label=schema.outcome,
    )


def load_conflicts(source) -> dict:
    """Parse a ``unit,start_year,end_year`` CSV into ``{unit: ((s, e), ...)}``."""
    fh = _open_text(source)
    try:
        reader = csv.DictReader(fh)
        need = {"unit", "start_year", "end_year"}
        if reader.fieldnames is None or not need <= {f.strip() for f in reader.fieldnames}:
            raise MalformedRow(1, "conflict CSV needs columns unit,start_year,end_year")
        out = {}
        for row in reader:
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
            line = reader.line_num
            if not row["unit"]:
                raise MalformedRow(line, "empty unit identifier")
            s = _year(row["start_year"], line, "start_year")
            e = _year(row["end_year"], line, "end_year")
            if s > e:
                raise MalformedRow(line, f"start_year {s} > end_year {e}")
            out.setdefault(row["unit"], []).append((s, e))
    finally:
        if isinstance(source, (str, os.PathLike)):
            fh.close()
    return {u: tuple(v) for u, v in out.items()}


def _fmt(x):
    return "" if math.isnan(x) else repr(float(x))


def write_panel(panel: PanelDataset, dest) -> None:
    """Write ``panel`` in the long CSV format read by :func:`load_panel`.

    Values are written with ``repr`` so a reload is bit-exact.
    """
    lines = [",".join(["unit", "year", panel.outcome_label, *panel.covariates])]
    covs = list(panel.covariates.values())
    for i, u in enumerate(panel.units):
        for t, y in enumerate(panel.periods):
            fields = [u, str(int(y)), _fmt(panel.outcomes[i, t])]
            fields += [_fmt(c[i, t]) for c in covs]
            lines.append(",".join(_csv_field(f) for f in fields))
    _write_text(dest, "\n".join(lines) + "\n")


def write_conflicts(panel: PanelDataset, dest) -> None:
    lines = ["unit,start_year,end_year"]
    for u, spans in panel.conflict_episodes.items():
        lines += [f"{_csv_field(u)},{s},{e}" for s, e in spans]
    _write_text(dest, "\n".join(lines) + "\n")


def _csv_field(text):
    if any(c in text for c in ',"\n\r'):
        return '"' + text.replace('"', '""') + '"'
    return text


def _write_text(dest, text):
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        dest.write(text)


def _overlaps(spans: Iterable, window) -> bool:
    lo, hi = window
    return any(s <= hi and e >= lo for s, e in spans)


def filter_donors(panel: PanelDataset, rules: ExclusionRules, treated: str) -> PanelDataset:
    """Drop donors per ``rules``; the treated unit is never removed by the
    conflict rule. Order of application: conflict window, explicit drops,
    then the allowlist.
    """
    treated = str(treated)
    panel.unit_index(treated)
    if treated in rules.drop_units:
        raise TreatedUnitExcluded(f"treated unit {treated!r} is in drop_units")
    if rules.keep_units is not None and treated not in rules.keep_units:
        raise TreatedUnitExcluded(f"treated unit {treated!r} is not in keep_units")
    window = rules.drop_units_with_conflict_overlapping
    keep = []
    for u in panel.units:
        if u == treated:
            keep.append(u)
            continue
        if window is not None and _overlaps(panel.conflict_episodes.get(u, ()), window):
            continue
        if u in rules.drop_units:
            continue
        if rules.keep_units is not None and u not in rules.keep_units:
            continue
        keep.append(u)
    if len(keep) < 2:
        raise EmptyDonorPool(f"no donors left for {treated!r} after exclusions")
    if len(keep) == panel.n_units:
        return panel
    return panel.select_units(keep)


def restrict_window(panel: PanelDataset, start: int, end: int) -> PanelDataset:
    """Keep periods in [start, end]; conflict episodes outside it are dropped."""
    start, end = int(start), int(end)
    if start > end:
        raise ValueError(f"window start {start} > end {end}")
    lo, hi = max(start, int(panel.periods[0])), min(end, int(panel.periods[-1]))
    if lo > hi:
        raise EmptyWindow(
            f"window {start}-{end} does not intersect {panel.periods[0]}-{panel.periods[-1]}"
        )
    if lo == panel.periods[0] and hi == panel.periods[-1]:
        return panel
    a, b = lo - int(panel.periods[0]), hi - int(panel.periods[0]) + 1
    episodes = {
        u: tuple((s, e) for s, e in spans if s <= hi and e >= lo)
        for u, spans in panel.conflict_episodes.items()
    }
    return PanelDataset(
        units=panel.units,
        periods=panel.periods[a:b],
        outcomes=panel.outcomes[:, a:b],
        covariates={k: v[:, a:b] for k, v in panel.covariates.items()},
        conflict_episodes=episodes,
        outcome_label=panel.outcome_label,
    )
