"""Return panels, FIT/HOLD windows and centered regression designs."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import check_design
from .exceptions import (
    DataError,
    DegenerateColumn,
    DuplicateTicker,
    MissingCell,
    NonPositivePrice,
    UnsortedDates,
    WindowOutOfRange,
)

DEFAULT_INDEX_COLUMN = "^GSPC"


@dataclass(frozen=True)
class ReturnsPanel:
    """Date-aligned simple returns for an index and its constituents.

    ``asset_returns`` has one row per entry of ``dates`` and one column per
    ticker; ``index_returns`` is aligned with the same rows.
    """

    dates: tuple[str, ...]
    tickers: tuple[str, ...]
    asset_returns: np.ndarray
    index_returns: np.ndarray
    index_name: str = DEFAULT_INDEX_COLUMN

    def __post_init__(self):
        object.__setattr__(self, "dates", tuple(str(d) for d in self.dates))
        object.__setattr__(self, "tickers", tuple(str(t) for t in self.tickers))
        object.__setattr__(self, "asset_returns", np.array(self.asset_returns, dtype=float))
        object.__setattr__(self, "index_returns", np.array(self.index_returns, dtype=float))
        if len(set(self.tickers)) != len(self.tickers):
            raise DuplicateTicker("tickers must be unique")
        if self.asset_returns.shape != (len(self.dates), len(self.tickers)):
            raise DataError(
                f"asset_returns shape {self.asset_returns.shape} does not match "
                f"{len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if self.index_returns.shape != (len(self.dates),):
            raise DataError("index_returns must have one value per date")
        self.asset_returns.setflags(write=False)
        self.index_returns.setflags(write=False)

    @property
    def n_dates(self) -> int:
        return len(self.dates)

    @property
    def n_assets(self) -> int:
        return len(self.tickers)

    def date_position(self, date: str) -> int:
        try:
            return self.dates.index(date)
        except ValueError:
            raise WindowOutOfRange(f"date {date!r} not in panel") from None


@dataclass(frozen=True)
class WindowSpec:
    label: str
    start_date: str
    end_date: str
    length: int | None = None

    def __post_init__(self):
        if self.start_date > self.end_date:
            raise WindowOutOfRange(
                f"window {self.label}: start {self.start_date} after end {self.end_date}"
            )


@dataclass(frozen=True)
class CenteredDesign:
    """Centered regression workspace for one fitting window.

    ``y_mu`` and ``R_mu`` are the removed means, kept so that raw-return
    tracking errors can be reconstructed. ``alpha`` holds the per-asset prior
    scales (mean one).
    """

    y_c: np.ndarray
    R_c: np.ndarray
    y_mu: float
    R_mu: np.ndarray
    alpha: np.ndarray
    window: WindowSpec | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def T(self) -> int:
        return self.R_c.shape[0]

    @property
    def p(self) -> int:
        return self.R_c.shape[1]

    @property
    def gram_diag(self) -> np.ndarray:
        """Diagonal of ``R_c.T @ R_c``."""
        if "gram_diag" not in self._cache:
            self._cache["gram_diag"] = np.einsum("ij,ij->j", self.R_c, self.R_c)
        return self._cache["gram_diag"]

    def with_alpha(self, alpha) -> "CenteredDesign":
        return CenteredDesign(self.y_c, self.R_c, self.y_mu, self.R_mu,
                              np.asarray(alpha, dtype=float), self.window)

    def with_target(self, y_c) -> "CenteredDesign":
        return CenteredDesign(np.asarray(y_c, dtype=float), self.R_c, self.y_mu,
                              self.R_mu, self.alpha, self.window)

    def raw(self) -> tuple[np.ndarray, np.ndarray]:
        """Uncentered ``(y, R)`` reconstructed from the stored means."""
        return self.y_c + self.y_mu, self.R_c + self.R_mu


def _read_header(path: Path) -> list[str]:
    with open(path, newline="") as fh:
        try:
            return next(csv.reader(fh))
        except StopIteration:
            raise DataError(f"{path} is empty") from None


def load_panel(csv_path, mode: str = "prices", index_column: str = DEFAULT_INDEX_COLUMN,
               date_column: str = "date") -> ReturnsPanel:
    """Load a wide CSV of prices or returns into a :class:`ReturnsPanel`.

    The first column holds ISO dates; ``index_column`` names the index series
    and every other column is a constituent. In ``prices`` mode simple returns
    ``P_t / P_{t-1} - 1`` are formed and the first date is dropped.
    """
    path = Path(csv_path)
    if mode not in ("prices", "returns"):
        raise ValueError(f"mode must be 'prices' or 'returns', got {mode!r}")
    if not path.exists():
        raise DataError(f"no such file: {path}")

    header = [h.strip() for h in _read_header(path)]
    if not header or header[0] != date_column:
        raise DataError(f"first column must be {date_column!r}")
    seen = set()
    for name in header:
        if name in seen:
            raise DuplicateTicker(f"duplicate column {name!r}")
        seen.add(name)
    if index_column not in header:
        raise DataError(f"index column {index_column!r} not found")

    frame = pd.read_csv(path, dtype={date_column: str}, float_precision="round_trip")
    frame.columns = header
    dates = frame[date_column].astype(str).str.strip().tolist()
    if any(b <= a for a, b in zip(dates, dates[1:])):
        raise UnsortedDates("dates must be strictly increasing")

    values = frame.drop(columns=[date_column]).apply(pd.to_numeric, errors="coerce")
    missing = values.isna().to_numpy()
    if missing.any():
        r, c = np.argwhere(missing)[0]
        raise MissingCell(dates[r], values.columns[c])

    tickers = [c for c in values.columns if c != index_column]
    if not tickers:
        raise DataError("panel has no constituent columns")
    assets = values[tickers].to_numpy(dtype=float)
    index = values[index_column].to_numpy(dtype=float)

    if mode == "prices":
        if (assets <= 0).any() or (index <= 0).any():
            bad = np.argwhere(np.column_stack([assets, index]) <= 0)[0]
            col = (tickers + [index_column])[bad[1]]
            raise NonPositivePrice(f"non-positive price at {dates[bad[0]]}, {col}")
        assets = assets[1:] / assets[:-1] - 1.0
        index = index[1:] / index[:-1] - 1.0
        dates = dates[1:]

    if len(dates) < 2:
        raise DataError("panel needs at least two dates of returns")
    return ReturnsPanel(tuple(dates), tuple(tickers), assets, index, index_column)


def window_by_position(panel: ReturnsPanel, label: str, start: int, length: int) -> WindowSpec:
    """Window of ``length`` rows starting at row ``start`` of the panel."""
    if start < 0 or length < 1 or start + length > panel.n_dates:
        raise WindowOutOfRange(f"window {label} rows [{start}, {start + length}) outside panel")
    return WindowSpec(label, panel.dates[start], panel.dates[start + length - 1], length)


def window_ending(panel: ReturnsPanel, label: str, end_date: str, length: int) -> WindowSpec:
    """Window of ``length`` rows whose last row is ``end_date``."""
    end = panel.date_position(end_date)
    return window_by_position(panel, label, end - length + 1, length)


def _window_rows(panel: ReturnsPanel, spec: WindowSpec) -> slice:
    if not panel.dates or spec.start_date < panel.dates[0] or spec.end_date > panel.dates[-1]:
        raise WindowOutOfRange(
            f"window {spec.label} [{spec.start_date}, {spec.end_date}] outside panel "
            f"[{panel.dates[0]}, {panel.dates[-1]}]"
        )
    lo = int(np.searchsorted(panel.dates, spec.start_date, side="left"))
    hi = int(np.searchsorted(panel.dates, spec.end_date, side="right"))
    if spec.length is not None and hi - lo != spec.length:
        raise WindowOutOfRange(
            f"window {spec.label} covers {hi - lo} rows, declared length {spec.length}"
        )
    if hi <= lo:
        raise WindowOutOfRange(f"window {spec.label} contains no rows")
    return slice(lo, hi)


def slice_window(panel: ReturnsPanel, spec: WindowSpec) -> tuple[np.ndarray, np.ndarray]:
    """Index returns and asset returns for the rows dated within ``spec``."""
    rows = _window_rows(panel, spec)
    return panel.index_returns[rows].copy(), panel.asset_returns[rows].copy()


def window_dates(panel: ReturnsPanel, spec: WindowSpec) -> tuple[str, ...]:
    return panel.dates[_window_rows(panel, spec)]


def column_scales(R_c: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Floored column RMS ``max(||R_c[:, j]|| / sqrt(T), eps)``."""
    T = R_c.shape[0]
    s = np.sqrt(np.einsum("ij,ij->j", R_c, R_c) / T)
    return np.maximum(s, eps)


def prior_scales(R_c: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-asset prior scales normalised to mean one."""
    s = column_scales(R_c, eps)
    if np.any(s <= 0):
        bad = int(np.flatnonzero(s <= 0)[0])
        raise DegenerateColumn(f"column {bad} is constant and eps = 0")
    return s / s.mean()


def center_design(y, R, eps: float = 1e-8, window: WindowSpec | None = None) -> CenteredDesign:
    """Center index and regressors on the window and attach prior scales."""
    y, R = check_design(y, R)
    if y.shape[0] < 2 or R.shape[1] < 1:
        raise DataError("need at least 2 observations and 1 asset")
    y_mu = float(y.mean())
    R_mu = R.mean(axis=0)
    y_c = y - y_mu
    R_c = R - R_mu
    alpha = prior_scales(R_c, eps)
    y_c.setflags(write=False)
    R_c.setflags(write=False)
    return CenteredDesign(y_c, R_c, y_mu, R_mu, alpha, window)
