import numpy as np
import pandas as pd
import pytest

from sparsetrack.data import (
    ReturnsPanel,
    WindowSpec,
    center_design,
    column_scales,
    load_panel,
    prior_scales,
    slice_window,
    window_by_position,
    window_ending,
)
from sparsetrack.exceptions import (
    DataError,
    DegenerateColumn,
    DimensionMismatch,
    DuplicateTicker,
    MissingCell,
    NonPositivePrice,
    UnsortedDates,
    WindowOutOfRange,
)


def _write(path, text):
    path.write_text(text)
    return path


def test_prices_to_simple_returns(tmp_path):
    f = _write(tmp_path / "p.csv",
               "date,A,B,^GSPC\n2020-01-01,10,20,100\n2020-01-02,11,19,101\n2020-01-03,12.1,19,99.99\n")
    panel = load_panel(f)
    assert panel.dates == ("2020-01-02", "2020-01-03")
    assert panel.tickers == ("A", "B")
    np.testing.assert_allclose(panel.asset_returns, [[0.1, -0.05], [0.1, 0.0]])
    np.testing.assert_allclose(panel.index_returns, [0.01, -0.01])


def test_returns_mode_passthrough(tmp_path):
    f = _write(tmp_path / "r.csv", "date,^GSPC,A\n2020-01-01,0.01,0.02\n2020-01-02,-0.01,0.0\n")
    panel = load_panel(f, mode="returns")
    assert panel.n_dates == 2 and panel.n_assets == 1
    np.testing.assert_allclose(panel.asset_returns[:, 0], [0.02, 0.0])


def test_missing_cell_reports_location(tmp_path):
    f = _write(tmp_path / "m.csv",
               "date,A,B,^GSPC\n2020-01-01,10,20,100\n2020-01-02,,19,101\n2020-01-03,1,2,3\n")
    with pytest.raises(MissingCell) as info:
        load_panel(f)
    assert info.value.row == "2020-01-02" and info.value.column == "A"


def test_nonpositive_price(tmp_path):
    f = _write(tmp_path / "n.csv", "date,A,^GSPC\n2020-01-01,10,100\n2020-01-02,0,101\n2020-01-03,1,1\n")
    with pytest.raises(NonPositivePrice):
        load_panel(f)


def test_duplicate_ticker(tmp_path):
    f = _write(tmp_path / "d.csv", "date,A,A,^GSPC\n2020-01-01,1,2,3\n2020-01-02,1,2,3\n")
    with pytest.raises(DuplicateTicker):
        load_panel(f)


def test_unsorted_dates(tmp_path):
    f = _write(tmp_path / "u.csv", "date,A,^GSPC\n2020-01-02,1,2\n2020-01-01,1,2\n2020-01-03,1,2\n")
    with pytest.raises(UnsortedDates):
        load_panel(f)


def test_missing_file_and_index(tmp_path):
    with pytest.raises(DataError):
        load_panel(tmp_path / "none.csv")
    f = _write(tmp_path / "x.csv", "date,A,B\n2020-01-01,1,2\n2020-01-02,1,2\n")
    with pytest.raises(DataError):
        load_panel(f)


def test_panel_is_immutable_and_copies_inputs():
    a = np.zeros((2, 2))
    panel = ReturnsPanel(["d1", "d2"], ["A", "B"], a, np.zeros(2))
    assert a.flags.writeable
    with pytest.raises(ValueError):
        panel.asset_returns[0, 0] = 1.0
    with pytest.raises(DuplicateTicker):
        ReturnsPanel(["d1", "d2"], ["A", "A"], a, np.zeros(2))
    with pytest.raises(DataError):
        ReturnsPanel(["d1"], ["A", "B"], a, np.zeros(2))


def _panel(T=30, p=3):
    dates = pd.bdate_range("2021-01-04", periods=T).strftime("%Y-%m-%d")
    R = np.arange(T * p, dtype=float).reshape(T, p) / 1000
    return ReturnsPanel(dates, [f"A{j}" for j in range(p)], R, R.sum(axis=1))


def test_windows_slice_by_date():
    panel = _panel()
    win = window_by_position(panel, "FIT-1", 5, 10)
    y, R = slice_window(panel, win)
    assert R.shape == (10, 3)
    np.testing.assert_array_equal(R, panel.asset_returns[5:15])
    np.testing.assert_array_equal(y, panel.index_returns[5:15])
    end = window_ending(panel, "HOLD", panel.dates[20], 6)
    assert end.start_date == panel.dates[15]


def test_window_errors():
    panel = _panel()
    with pytest.raises(WindowOutOfRange):
        window_by_position(panel, "x", 25, 10)
    with pytest.raises(WindowOutOfRange):
        WindowSpec("bad", "2021-02-01", "2021-01-01")
    with pytest.raises(WindowOutOfRange):
        slice_window(panel, WindowSpec("x", "2020-01-01", panel.dates[3]))
    with pytest.raises(WindowOutOfRange):
        slice_window(panel, WindowSpec("x", panel.dates[0], panel.dates[3], length=7))


def test_center_design_properties(rng):
    y = rng.standard_normal(50)
    R = rng.standard_normal((50, 4)) * [1, 2, 3, 4]
    d = center_design(y, R)
    np.testing.assert_allclose(d.y_c.mean(), 0, atol=1e-15)
    np.testing.assert_allclose(d.R_c.mean(axis=0), 0, atol=1e-15)
    assert d.alpha.mean() == pytest.approx(1.0)
    yr, Rr = d.raw()
    np.testing.assert_allclose(yr, y)
    np.testing.assert_allclose(Rr, R)
    np.testing.assert_allclose(d.gram_diag, (d.R_c ** 2).sum(axis=0))
    # scale ordering follows column volatility
    assert np.all(np.diff(d.alpha) > 0)


def test_constant_column_is_floored_not_fatal():
    R = np.column_stack([np.ones(10), np.arange(10.0)])
    s = column_scales(R - R.mean(axis=0))
    assert s[0] == 1e-8
    with pytest.raises(DegenerateColumn):
        prior_scales(R - R.mean(axis=0), eps=0.0)


def test_center_design_dimension_checks():
    with pytest.raises(DimensionMismatch):
        center_design(np.zeros(5), np.zeros((4, 2)))
    with pytest.raises(ValueError):
        center_design(np.array([0.0, np.nan, 1.0]), np.ones((3, 1)))
