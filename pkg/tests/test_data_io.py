import numpy as np
import pytest

from hmtl.baselines import GridSpec
from hmtl.core import HierarchicalDataset, InvalidInputError, SubTaskData
from hmtl.data_io import (
    ClimateTable,
    DataFormatError,
    GriddedRecord,
    extract_season,
    infer_grid,
    load_gridded_csv,
    split_moving_window,
    table_from_dataset,
    write_grid_csv,
    write_gridded_csv,
)
from hmtl.synthetic import ClimateSynthSpec, generate_synthetic_climate

HEADER = "variable,year,month,location_id,lat,lon,observed,esm_1,esm_2"


def _fixture_lines(years=(2000, 2001), locations=((1, -10.0, -60.0), (2, -10.0, -59.0))):
    lines = [HEADER]
    for loc, lat, lon in locations:
        for y in years:
            for mo in range(1, 13):
                base = y + mo / 100 + loc
                lines.append(f"temp,{y},{mo},{loc},{lat},{lon},{base},{base + 0.5},{base - 0.25}")
    return lines


def _write(tmp_path, lines, name="data.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_well_formed_fixture(tmp_path):
    table = load_gridded_csv(_write(tmp_path, _fixture_lines()))
    assert (table.V, table.m, table.d, table.n) == (1, 2, 2, 24)
    assert table.location_ids == (1, 2)
    assert table.grid == GridSpec(1, 2)
    assert table.observed[0, 1, 13] == pytest.approx(2001 + 0.02 + 2)
    np.testing.assert_array_equal(table.esm[0, 0, :, 0] - table.observed[0, 0], 0.5)
    assert table.years[0] == 2000 and table.months[-1] == 12


def test_column_order_is_free(tmp_path):
    lines = _fixture_lines()
    cols = [line.split(",") for line in lines]
    order = [7, 8, 0, 6, 1, 2, 3, 4, 5]
    shuffled = [",".join(row[i] for i in order) for row in cols]
    a = load_gridded_csv(_write(tmp_path, lines, "a.csv"))
    b = load_gridded_csv(_write(tmp_path, shuffled, "b.csv"))
    np.testing.assert_array_equal(a.esm, b.esm)
    np.testing.assert_array_equal(a.observed, b.observed)


def test_missing_observed_column_named(tmp_path):
    lines = [",".join(c for i, c in enumerate(line.split(",")) if i != 6) for line in _fixture_lines()]
    with pytest.raises(DataFormatError, match="observed"):
        load_gridded_csv(_write(tmp_path, lines))


def test_missing_model_columns(tmp_path):
    lines = [",".join(line.split(",")[:7]) for line in _fixture_lines()]
    with pytest.raises(DataFormatError, match="esm_1"):
        load_gridded_csv(_write(tmp_path, lines))


def test_model_columns_must_be_consecutive(tmp_path):
    lines = _fixture_lines()
    lines[0] = lines[0].replace("esm_2", "esm_3")
    with pytest.raises(DataFormatError):
        load_gridded_csv(_write(tmp_path, lines))


def test_non_numeric_cell_reports_line(tmp_path):
    lines = _fixture_lines()
    parts = lines[5].split(",")
    parts[7] = "abc"
    lines[5] = ",".join(parts)
    with pytest.raises(DataFormatError, match="line 6"):
        load_gridded_csv(_write(tmp_path, lines))


def test_duplicate_record_rejected(tmp_path):
    lines = _fixture_lines()
    lines.append(lines[3])
    with pytest.raises(DataFormatError, match="duplicate"):
        load_gridded_csv(_write(tmp_path, lines))


def test_ragged_time_axis_rejected(tmp_path):
    lines = _fixture_lines()
    del lines[30]  # a month of location 2
    with pytest.raises(DataFormatError, match="ragged"):
        load_gridded_csv(_write(tmp_path, lines))


def test_month_out_of_range(tmp_path):
    lines = _fixture_lines()
    lines[1] = lines[1].replace("temp,2000,1,", "temp,2000,13,", 1)
    with pytest.raises(DataFormatError, match="line 2"):
        load_gridded_csv(_write(tmp_path, lines))


def test_conflicting_coordinates(tmp_path):
    lines = _fixture_lines()
    lines[2] = lines[2].replace("-10.0,-60.0", "-11.0,-60.0")
    with pytest.raises(DataFormatError, match="coordinates"):
        load_gridded_csv(_write(tmp_path, lines))


def test_empty_file(tmp_path):
    with pytest.raises(DataFormatError):
        load_gridded_csv(_write(tmp_path, []))
    with pytest.raises(DataFormatError):
        load_gridded_csv(_write(tmp_path, [HEADER]))


def test_short_row(tmp_path):
    lines = _fixture_lines()
    lines[4] = lines[4].rsplit(",", 1)[0]
    with pytest.raises(DataFormatError, match="line 5"):
        load_gridded_csv(_write(tmp_path, lines))


def test_grid_file_used(tmp_path):
    grid = _write(tmp_path, ["location_id,row,col,lat,lon", "1,1,0,-10,-60", "2,0,0,-9,-60"], "grid.csv")
    table = load_gridded_csv(_write(tmp_path, _fixture_lines()), grid)
    assert table.grid == GridSpec(2, 1, ((1, 0), (0, 0)))


def test_grid_file_missing_location(tmp_path):
    grid = _write(tmp_path, ["location_id,row,col,lat,lon", "1,0,0,-10,-60"], "grid.csv")
    with pytest.raises(DataFormatError, match="2"):
        load_gridded_csv(_write(tmp_path, _fixture_lines()), grid)


def test_infer_grid():
    assert infer_grid([-1, -1, -2, -2], [10, 11, 10, 11]) == GridSpec(2, 2)
    holes = infer_grid([-1, -2], [10, 11])
    assert holes.cells == ((0, 0), (1, 1))
    with pytest.raises(DataFormatError):
        infer_grid([0, 0], [1, 1])


def test_round_trip_full_precision(tmp_path):
    table = generate_synthetic_climate(ClimateSynthSpec(rows=2, cols=3, d=4, years=3, seed=2))
    write_gridded_csv(table, tmp_path / "d.csv")
    write_grid_csv(table, tmp_path / "g.csv")
    back = load_gridded_csv(tmp_path / "d.csv", tmp_path / "g.csv")
    np.testing.assert_array_equal(back.observed, table.observed)
    np.testing.assert_array_equal(back.esm, table.esm)
    np.testing.assert_array_equal(back.lat, table.lat)
    assert back.grid == table.grid and back.variables == table.variables
    back2 = load_gridded_csv(tmp_path / "d.csv")
    assert back2.grid == table.grid


def test_record_validation():
    with pytest.raises(InvalidInputError):
        GriddedRecord("t", 2000, 0, 1, 0.0, 0.0, 1.0, (1.0,))
    with pytest.raises(InvalidInputError):
        GriddedRecord("t", 2000, 1, 1, 0.0, 0.0, float("nan"), (1.0,))
    rec = next(generate_synthetic_climate(ClimateSynthSpec(rows=1, cols=1, d=2, years=1)).records())
    assert rec.month == 1 and len(rec.esm_values) == 2


def _monthly_table(first_year, n_years, m=2, d=2):
    n = 12 * n_years
    rng = np.random.default_rng(0)
    data = HierarchicalDataset(((tuple(SubTaskData(rng.standard_normal((n, d)), rng.standard_normal(n))
                                       for _ in range(m))),))
    return table_from_dataset(data, start_year=first_year)


def test_summer_of_one_year_has_three_records():
    out = extract_season(_monthly_table(1950, 1), "summer")
    assert out.n == 3
    np.testing.assert_array_equal(out.months, [1, 2, 12])


def test_december_joins_next_summer():
    out = extract_season(_monthly_table(1950, 2), "summer")
    dec = np.flatnonzero((out.years == 1950) & (out.months == 12))[0]
    assert out.season_years[dec] == 1951
    assert list(out.season_years) == [1950, 1950, 1951, 1951, 1951, 1952]


def test_winter_keeps_calendar_year():
    out = extract_season(_monthly_table(1950, 2), "winter")
    np.testing.assert_array_equal(out.season_years, out.years)
    np.testing.assert_array_equal(out.months, [6, 7, 8, 6, 7, 8])


def test_year_is_identity_and_idempotent():
    table = _monthly_table(1950, 2)
    year = extract_season(table, "year")
    np.testing.assert_array_equal(year.observed, table.observed)
    np.testing.assert_array_equal(year.season_years, table.years)
    for season in ("summer", "winter", "year"):
        a, b = extract_season(year, season), extract_season(table, season)
        np.testing.assert_array_equal(a.observed, b.observed)
        np.testing.assert_array_equal(a.season_years, b.season_years)


def test_custom_season_mapping():
    out = extract_season(_monthly_table(1950, 1), "wet", mapping={"wet": (11, 12, 1, 2, 3)})
    assert out.n == 5 and out.season == "wet"
    with pytest.raises(InvalidInputError):
        extract_season(_monthly_table(1950, 1), "monsoon")


def test_windows_over_a_century():
    splits = split_moving_window(_monthly_table(1901, 100, m=1, d=1), 20, 10, 10)
    assert len(splits) == 8
    assert (splits[0].train_years, splits[0].test_years) == ((1901, 1920), (1921, 1930))
    assert splits[-1].test_years == (1991, 2000)
    for sp in splits:
        assert sp.train.season_years.max() < sp.test.season_years.min()
        assert sp.train.n == 240 and sp.test.n == 120
        years = np.concatenate([np.unique(sp.train.season_years), np.unique(sp.test.season_years)])
        np.testing.assert_array_equal(years, np.arange(years[0], years[0] + 30))


def test_window_edge_cases():
    table = _monthly_table(1901, 100, m=1, d=1)
    with pytest.warns(UserWarning):
        assert split_moving_window(table, 100, 10) == []
    assert len(split_moving_window(table, 90, 10)) == 1
    assert split_moving_window(table, 30, 10)[1].label == "1911-1940/1941-1950"
    with pytest.raises(InvalidInputError):
        split_moving_window(table, 0, 10)


def test_table_invariants():
    table = _monthly_table(2000, 1)
    with pytest.raises(InvalidInputError):
        ClimateTable(table.variables, table.location_ids, table.years[::-1], table.months[::-1],
                     table.season_years, table.observed, table.esm, table.lat, table.lon, table.grid)
    with pytest.raises(InvalidInputError):
        ClimateTable(table.variables, table.location_ids, table.years, table.months,
                     table.season_years, table.observed, table.esm, table.lat, table.lon, GridSpec(3, 1))


def test_table_to_dataset():
    table = generate_synthetic_climate(ClimateSynthSpec(rows=2, cols=2, d=3, years=2))
    data = table.to_dataset()
    assert (data.T, data.m, data.d) == (2, 4, 3)
    np.testing.assert_array_equal(data[1][3].y, table.observed[1, 3])
