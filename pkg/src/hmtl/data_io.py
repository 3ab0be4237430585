"""Gridded multi-model CSV ingestion, seasonal extraction and moving windows.

Data file (UTF-8, header mandatory)::

    variable,year,month,location_id,lat,lon,observed,esm_1,...,esm_d

one row per (variable, location, month). Optional grid file ``grid.csv``::

    location_id,row,col,lat,lon
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .baselines import GridSpec
from .core import HierarchicalDataset, InvalidInputError, SubTaskData

KEY_COLUMNS = ("variable", "year", "month", "location_id", "lat", "lon", "observed")
GRID_COLUMNS = ("location_id", "row", "col", "lat", "lon")
DEFAULT_SEASONS = {
    "summer": (12, 1, 2),
    "winter": (6, 7, 8),
    "year": tuple(range(1, 13)),
}


class DataFormatError(InvalidInputError):
    """Malformed or inconsistent input file; the message carries the line number."""


@dataclass(frozen=True)
class GriddedRecord:
    variable: str
    year: int
    month: int
    location_id: int
    lat: float
    lon: float
    observed: float
    esm_values: tuple

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise InvalidInputError(f"month must be in 1..12, got {self.month}")
        if len(self.esm_values) < 1:
            raise InvalidInputError("a record needs at least one model value")
        if not all(math.isfinite(v) for v in (self.observed, *self.esm_values)):
            raise InvalidInputError("record values must be finite")


@dataclass(frozen=True)
class ClimateTable:
    """Dense (variable, location, time) cube with one model axis.

    Attributes
    ----------
    variables : tuple of str
    location_ids : tuple of int
        Sorted; index ``k`` is sub-task ``k``.
    years, months : (n,) int arrays
        Calendar time of every timestamp, strictly increasing.
    season_years : (n,) int array
        Year used for windowing; differs from ``years`` only for December
        inside a season that wraps into January.
    observed : (V, m, n) array
    esm : (V, m, n, d) array
    lat, lon : (m,) arrays
    grid : GridSpec
    season : str
    """

    variables: tuple
    location_ids: tuple
    years: np.ndarray
    months: np.ndarray
    season_years: np.ndarray
    observed: np.ndarray
    esm: np.ndarray
    lat: np.ndarray
    lon: np.ndarray
    grid: GridSpec
    season: str = "year"

    def __post_init__(self):
        V, m, n = len(self.variables), len(self.location_ids), len(self.years)
        if self.observed.shape != (V, m, n):
            raise InvalidInputError(f"observed has shape {self.observed.shape}, expected {(V, m, n)}")
        if self.esm.shape[:3] != (V, m, n) or self.esm.ndim != 4:
            raise InvalidInputError(f"esm has shape {self.esm.shape}, expected {(V, m, n)} + (d,)")
        if self.grid.m != m:
            raise InvalidInputError(f"grid has {self.grid.m} cells for {m} locations")
        if n > 1:
            stamp = self.years * 12 + self.months
            if np.any(np.diff(stamp) <= 0):
                raise InvalidInputError("time axis must be strictly increasing")

    @property
    def V(self):
        return len(self.variables)

    @property
    def m(self):
        return len(self.location_ids)

    @property
    def n(self):
        return len(self.years)

    @property
    def d(self):
        return self.esm.shape[3]

    def span(self):
        """Sorted distinct season years."""
        return np.unique(self.season_years)

    def select_time(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return replace(self, years=self.years[mask], months=self.months[mask],
                       season_years=self.season_years[mask],
                       observed=self.observed[:, :, mask], esm=self.esm[:, :, mask])

    def select_years(self, first, last):
        """Timestamps whose season year lies in ``[first, last]``."""
        return self.select_time((self.season_years >= first) & (self.season_years <= last))

    def to_dataset(self):
        """One super-task per variable, one sub-task per location."""
        return HierarchicalDataset(tuple(
            tuple(SubTaskData(self.esm[v, k], self.observed[v, k]) for k in range(self.m))
            for v in range(self.V)))

    def records(self):
        for v, name in enumerate(self.variables):
            for k, loc in enumerate(self.location_ids):
                for i in range(self.n):
                    yield GriddedRecord(name, int(self.years[i]), int(self.months[i]), int(loc),
                                        float(self.lat[k]), float(self.lon[k]),
                                        float(self.observed[v, k, i]),
                                        tuple(float(x) for x in self.esm[v, k, i]))


def to_dataset(table):
    return table.to_dataset()


def _parse(value, kind, lineno, column):
    try:
        out = kind(value)
    except (TypeError, ValueError):
        raise DataFormatError(f"line {lineno}: column '{column}' has non-numeric value {value!r}") from None
    if kind is float and not math.isfinite(out):
        raise DataFormatError(f"line {lineno}: column '{column}' is not finite ({value!r})")
    return out


def _header_index(header, required, path, extra_prefix=None):
    names = [h.strip() for h in header]
    missing = [c for c in required if c not in names]
    if missing:
        raise DataFormatError(f"{path}: line 1: missing column(s) {', '.join(repr(c) for c in missing)}")
    dup = sorted({c for c in names if names.count(c) > 1})
    if dup:
        raise DataFormatError(f"{path}: line 1: duplicate column(s) {', '.join(dup)}")
    index = {c: names.index(c) for c in required}
    extras = [c for c in names if c not in required]
    if extra_prefix is None:
        if extras:
            raise DataFormatError(f"{path}: line 1: unexpected column(s) {', '.join(extras)}")
        return index, []
    d = len(extras)
    expected = [f"{extra_prefix}{j}" for j in range(1, d + 1)]
    if sorted(extras) != sorted(expected):
        unknown = [c for c in extras if c not in expected]
        raise DataFormatError(
            f"{path}: line 1: model columns must be {extra_prefix}1..{extra_prefix}{d}; "
            f"unexpected {', '.join(unknown) or 'numbering'}")
    if d == 0:
        raise DataFormatError(f"{path}: line 1: missing column(s) '{extra_prefix}1'")
    return index, [names.index(c) for c in expected]


def load_grid_csv(path):
    """Read ``location_id,row,col,lat,lon``; returns {location_id: (row, col, lat, lon)}."""
    cells = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file (header row is mandatory)")
        index, _ = _header_index(header, GRID_COLUMNS, path)
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            loc = _parse(row[index["location_id"]], int, lineno, "location_id")
            if loc in cells:
                raise DataFormatError(f"{path}: line {lineno}: duplicate location_id {loc}")
            cells[loc] = (_parse(row[index["row"]], int, lineno, "row"),
                          _parse(row[index["col"]], int, lineno, "col"),
                          _parse(row[index["lat"]], float, lineno, "lat"),
                          _parse(row[index["lon"]], float, lineno, "lon"))
    return cells


def _grid_from_cells(location_ids, cells):
    positions = [cells[loc][:2] for loc in location_ids]
    if any(r < 0 or c < 0 for r, c in positions):
        raise DataFormatError("grid rows and columns must be nonnegative")
    rows = max(r for r, _ in positions) + 1
    cols = max(c for _, c in positions) + 1
    if len(positions) == rows * cols and positions == [divmod(i, cols) for i in range(rows * cols)]:
        return GridSpec(rows, cols)
    return GridSpec(rows, cols, tuple(positions))


def infer_grid(lat, lon):
    """Lattice from coordinates: rows run north to south, columns west to east."""
    lats = sorted(set(float(v) for v in lat), reverse=True)
    lons = sorted(set(float(v) for v in lon))
    positions = [(lats.index(float(a)), lons.index(float(b))) for a, b in zip(lat, lon)]
    if len(set(positions)) != len(positions):
        raise DataFormatError("two locations share the same (lat, lon); supply a grid file")
    rows, cols = len(lats), len(lons)
    if len(positions) == rows * cols and positions == [divmod(i, cols) for i in range(rows * cols)]:
        return GridSpec(rows, cols)
    return GridSpec(rows, cols, tuple(positions))


def load_gridded_csv(path, grid_path=None):
    """Parse and validate a gridded data file into a ClimateTable.

    Every (variable, location) must cover the same set of months; any gap,
    duplicate or malformed cell is rejected with the offending line number.

    Parameters
    ----------
    path : str or path-like
    grid_path : str or path-like, optional
        ``grid.csv`` with lattice positions. Without it the lattice is
        inferred from the distinct latitudes and longitudes.
    """
    rows = {}
    coords = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file (header row is mandatory)")
        index, esm_idx = _header_index(header, KEY_COLUMNS, path, extra_prefix="esm_")
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            variable = row[index["variable"]].strip()
            if not variable:
                raise DataFormatError(f"{path}: line {lineno}: empty variable name")
            year = _parse(row[index["year"]], int, lineno, "year")
            month = _parse(row[index["month"]], int, lineno, "month")
            if not 1 <= month <= 12:
                raise DataFormatError(f"{path}: line {lineno}: month {month} outside 1..12")
            loc = _parse(row[index["location_id"]], int, lineno, "location_id")
            lat = _parse(row[index["lat"]], float, lineno, "lat")
            lon = _parse(row[index["lon"]], float, lineno, "lon")
            obs = _parse(row[index["observed"]], float, lineno, "observed")
            esm = [_parse(row[j], float, lineno, header[j].strip()) for j in esm_idx]
            key = (variable, loc, year, month)
            if key in rows:
                raise DataFormatError(
                    f"{path}: line {lineno}: duplicate record {key} (first on line {rows[key][0]})")
            if coords.setdefault(loc, (lat, lon, lineno))[:2] != (lat, lon):
                raise DataFormatError(
                    f"{path}: line {lineno}: location {loc} has coordinates ({lat}, {lon}) but "
                    f"line {coords[loc][2]} gave {coords[loc][:2]}")
            rows[key] = (lineno, obs, esm)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")

    variables = tuple(dict.fromkeys(k[0] for k in rows))
    location_ids = tuple(sorted(coords))
    stamps = sorted({(k[2], k[3]) for k in rows})
    per_series = {}
    for (v, loc, y, mo) in rows:
        per_series.setdefault((v, loc), set()).add((y, mo))
    for v in variables:
        for loc in location_ids:
            have = per_series.get((v, loc), set())
            if len(have) != len(stamps):
                gap = next(s for s in stamps if s not in have)
                raise DataFormatError(
                    f"{path}: ragged time axis: variable {v!r} location {loc} lacks "
                    f"{gap[0]}-{gap[1]:02d} ({len(have)} of {len(stamps)} months present)")

    V, m, n, d = len(variables), len(location_ids), len(stamps), len(esm_idx)
    observed = np.empty((V, m, n))
    esm = np.empty((V, m, n, d))
    t_index = {s: i for i, s in enumerate(stamps)}
    v_index = {v: i for i, v in enumerate(variables)}
    k_index = {loc: i for i, loc in enumerate(location_ids)}
    for (v, loc, y, mo), (_, obs, vals) in rows.items():
        a, b, c = v_index[v], k_index[loc], t_index[(y, mo)]
        observed[a, b, c] = obs
        esm[a, b, c] = vals

    lat = np.array([coords[loc][0] for loc in location_ids])
    lon = np.array([coords[loc][1] for loc in location_ids])
    if grid_path is not None:
        cells = load_grid_csv(grid_path)
        missing = [loc for loc in location_ids if loc not in cells]
        if missing:
            raise DataFormatError(f"{grid_path}: no grid cell for location(s) {missing}")
        grid = _grid_from_cells(location_ids, cells)
    else:
        grid = infer_grid(lat, lon)
    years = np.array([s[0] for s in stamps], dtype=int)
    months = np.array([s[1] for s in stamps], dtype=int)
    return ClimateTable(variables, location_ids, years, months, years.copy(), observed, esm,
                        lat, lon, grid)


def write_gridded_csv(table, path):
    """Write a table in the loader's format with round-trip float precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(KEY_COLUMNS) + [f"esm_{j}" for j in range(1, table.d + 1)])
        for v, name in enumerate(table.variables):
            for k, loc in enumerate(table.location_ids):
                lat, lon = repr(float(table.lat[k])), repr(float(table.lon[k]))
                for i in range(table.n):
                    writer.writerow(
                        [name, int(table.years[i]), int(table.months[i]), int(loc), lat, lon,
                         repr(float(table.observed[v, k, i]))]
                        + [repr(float(x)) for x in table.esm[v, k, i]])


def write_grid_csv(table, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GRID_COLUMNS)
        for k, loc in enumerate(table.location_ids):
            r, c = table.grid.position(k)
            writer.writerow([int(loc), r, c, repr(float(table.lat[k])), repr(float(table.lon[k]))])


def extract_season(table, season, mapping=None):
    """Keep the months of ``season`` and assign season years.

    ``mapping`` overrides the month sets (defaults: summer = Dec/Jan/Feb,
    winter = Jun/Jul/Aug, year = all months). When a season contains both
    December and January, December counts toward the following year's
    season. Seasons cut off by the ends of the record are kept as they are.
    """
    seasons = dict(DEFAULT_SEASONS)
    if mapping:
        seasons.update({k: tuple(v) for k, v in mapping.items()})
    if season not in seasons:
        raise InvalidInputError(f"unknown season {season!r}; known: {', '.join(sorted(seasons))}")
    months = tuple(seasons[season])
    if any(not 1 <= mo <= 12 for mo in months):
        raise InvalidInputError(f"season {season!r} has a month outside 1..12")
    keep = np.isin(table.months, months)
    wraps = 12 in months and 1 in months and len(months) < 12
    season_years = table.years + ((table.months == 12) & wraps)
    out = replace(table, season_years=season_years.astype(int), season=season)
    return out.select_time(keep)


@dataclass(frozen=True)
class WindowSplit:
    """One moving-window split; year bounds are inclusive season years."""

    train: ClimateTable
    test: ClimateTable
    train_years: tuple
    test_years: tuple

    @property
    def label(self):
        return f"{self.train_years[0]}-{self.train_years[1]}/{self.test_years[0]}-{self.test_years[1]}"


def split_moving_window(table, train_years, test_years, step_years=None):
    """Consecutive (train, test) year blocks advancing by ``step_years``.

    ``step_years`` defaults to ``test_years``. Returns an empty list, with a
    warning, when the record is shorter than one train plus test block.
    """
    step_years = test_years if step_years is None else step_years
    for name, v in (("train_years", train_years), ("test_years", test_years), ("step_years", step_years)):
        if int(v) != v or v < 1:
            raise InvalidInputError(f"{name} must be a positive integer, got {v}")
    span = table.span()
    if span.size == 0:
        warnings.warn("table has no timestamps; no windows", UserWarning, stacklevel=2)
        return []
    first, last = int(span[0]), int(span[-1])
    splits = []
    start = first
    while start + train_years + test_years - 1 <= last:
        tr = (start, start + train_years - 1)
        te = (tr[1] + 1, tr[1] + test_years)
        splits.append(WindowSplit(table.select_years(*tr), table.select_years(*te), tr, te))
        start += step_years
    if not splits:
        warnings.warn(
            f"{last - first + 1} years of data cannot hold {train_years} training plus "
            f"{test_years} test years; no windows", UserWarning, stacklevel=2)
    return splits


def table_from_dataset(dataset, variables=None, start_year=1):
    """Express a HierarchicalDataset as a table: rows become consecutive months.

    Every sub-task must have the same n. Locations get ids 1..m on a single
    grid row with latitude 0 and longitude equal to the index.
    """
    ns = {sub.n for st in dataset for sub in st}
    if len(ns) != 1:
        raise InvalidInputError("all sub-tasks need the same number of rows")
    n = ns.pop()
    variables = tuple(variables or (f"task_{t + 1}" for t in range(dataset.T)))
    if len(variables) != dataset.T:
        raise InvalidInputError("need one variable name per super-task")
    idx = np.arange(n)
    years = start_year + idx // 12
    months = 1 + idx % 12
    observed = np.array([[sub.y for sub in st] for st in dataset])
    esm = np.array([[sub.X for sub in st] for st in dataset])
    m = dataset.m
    return ClimateTable(variables, tuple(range(1, m + 1)), years, months, years.copy(),
                        observed, esm, np.zeros(m), np.arange(m, dtype=float), GridSpec(1, m))
