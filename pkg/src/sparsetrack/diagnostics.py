"""Chain diagnostics (ACF, ESS, MCSE) and buy-and-hold tracking evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from ._validation import as_matrix, as_vector
from .data import CenteredDesign, ReturnsPanel, WindowSpec, slice_window, window_dates
from .exceptions import ConstantSeries, DimensionMismatch, TooFewDraws

BP = 1e4


def acf(series, max_lag: int | None = None) -> np.ndarray:
    """Autocorrelations ``r_0..r_max_lag`` normalised by the total sum of squares."""
    x = as_vector(series, "series")
    n = x.size
    if n < 2:
        raise TooFewDraws("ACF needs at least two values")
    max_lag = n - 1 if max_lag is None else min(int(max_lag), n - 1)
    d = x - x.mean()
    ss = d @ d
    if ss == 0.0:
        raise ConstantSeries("series is constant; autocorrelation undefined")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    r = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1] / ss
    r[0] = 1.0
    return r


def iact(series, max_lag: int | None = None) -> float:
    """Integrated autocorrelation time, truncated before the first negative lag."""
    x = as_vector(series, "series")
    if max_lag is None:
        max_lag = min(x.size - 1, 10000)
    r = acf(x, max_lag)
    neg = np.flatnonzero(r[1:] < 0)
    K = neg[0] + 1 if neg.size else r.size
    return float(1.0 + 2.0 * r[1:K].sum())


def ess(series, max_lag: int | None = None) -> float:
    """``M / tau`` with ``tau`` from :func:`iact`, kept within ``[1, M]``."""
    x = as_vector(series, "series")
    if x.size < 10:
        raise TooFewDraws("ESS needs at least 10 values")
    tau = iact(x, max_lag)
    return float(min(max(x.size / tau, 1.0), x.size))


def mcse_mean(series) -> float:
    x = as_vector(series, "series")
    sd = float(np.std(x, ddof=1))
    if sd == 0.0:
        return 0.0
    return sd / math.sqrt(ess(x))


def te_raw(y_raw, R_raw, w, y_mu: float = 0.0, R_mu=None) -> float:
    """RMS of ``y - ((R - R_mu) w + y_mu)``."""
    y = as_vector(y_raw, "y_raw")
    R = as_matrix(R_raw, "R_raw")
    w = as_vector(w, "w")
    if R.shape != (y.size, w.size):
        raise DimensionMismatch(f"R has shape {R.shape}, expected ({y.size}, {w.size})")
    R_mu = np.zeros(w.size) if R_mu is None else as_vector(R_mu, "R_mu", w.size)
    resid = y - ((R - R_mu) @ w + y_mu)
    return float(np.sqrt(np.mean(resid * resid)))


def tracking_error(y, R, w) -> float:
    """Plain RMS tracking error on uncentred returns."""
    return te_raw(y, R, w)


def draw_te_series(design: CenteredDesign, draws, block: int = 2000) -> np.ndarray:
    """In-sample TE of every draw, from explicit residuals."""
    M = draws.shape[0]
    out = np.empty(M)
    for start in range(0, M, block):
        W = np.asarray(draws[start:start + block])
        resid = design.y_c[:, None] - design.R_c @ W.T
        out[start:start + W.shape[0]] = np.sqrt(np.mean(resid * resid, axis=0))
    return out


@dataclass
class EssReport:
    ess_te: float
    ess_min_sentinels: float
    sentinel_indices: np.ndarray
    per_sentinel_ess: dict
    sd_te: float
    mcse_te: float
    te_series: np.ndarray = field(default=None, repr=False)


def sentinel_ess(chain, w_map, n_sentinels: int = 10,
                 design: CenteredDesign | None = None) -> EssReport:
    """ESS of the largest-|w_map| coordinates and, given a design, of the draw TE."""
    draws = getattr(chain, "draws", chain)
    if draws.shape[0] < 10:
        raise TooFewDraws("sentinel ESS needs at least 10 draws")
    w_map = as_vector(w_map, "w_map", draws.shape[1])
    n = min(int(n_sentinels), w_map.size)
    idx = np.sort(np.argsort(-np.abs(w_map), kind="stable")[:n])
    per = {int(j): ess(np.asarray(draws[:, j])) for j in idx}
    ess_min = min(per.values()) if per else float("nan")
    ess_te = sd_te = mcse_te = float("nan")
    te = None
    if design is not None:
        te = draw_te_series(design, draws)
        sd_te = float(np.std(te, ddof=1))
        if sd_te > 0:
            ess_te = ess(te)
            mcse_te = sd_te / math.sqrt(ess_te)
        else:
            mcse_te = 0.0
    return EssReport(ess_te, ess_min, idx, per, sd_te, mcse_te, te)


# -- holding-period evaluation ---------------------------------------------


@dataclass
class HoldReport:
    name: str
    dates: list
    daily_te: np.ndarray  # bp
    rolling_rmse: np.ndarray  # bp, aligned with dates[window - 1:]
    cum_index: np.ndarray
    cum_portfolio: np.ndarray
    te_rms: float  # return units
    window: int = 20

    def to_frame(self) -> pd.DataFrame:
        rolling = np.full(len(self.dates), np.nan)
        rolling[self.window - 1:] = self.rolling_rmse
        return pd.DataFrame({"date": self.dates, "te_bp": self.daily_te,
                             "rolling_rmse_bp": rolling, "cum_index": self.cum_index,
                             "cum_portfolio": self.cum_portfolio})

    def to_csv(self, path) -> Path:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")
        return Path(path)


def rolling_rmse(x, window: int) -> np.ndarray:
    x = as_vector(x, "x")
    if not 1 <= window <= x.size:
        raise ValueError(f"window must lie in [1, {x.size}]")
    return np.sqrt(np.mean(sliding_window_view(x * x, window), axis=1))


def hold_report(y, R, w, dates=None, window: int = 20, name: str = "portfolio") -> HoldReport:
    """Fixed-weight evaluation of ``w`` against ``y`` on returns ``R``."""
    y = as_vector(y, "y")
    R = as_matrix(R, "R")
    w = as_vector(w, "w", R.shape[1])
    port = R @ w
    te = y - port
    dates = list(dates) if dates is not None else list(range(y.size))
    return HoldReport(name, dates, te * BP, rolling_rmse(te, window) * BP,
                      np.cumprod(1.0 + y) - 1.0, np.cumprod(1.0 + port) - 1.0,
                      float(np.sqrt(np.mean(te * te))), window)


def evaluate_hold(panel: ReturnsPanel, hold_spec: WindowSpec, portfolios, window: int = 20):
    """One :class:`HoldReport` per portfolio (dict ``name -> weights`` or list)."""
    y, R = slice_window(panel, hold_spec)
    dates = window_dates(panel, hold_spec)
    if isinstance(portfolios, dict):
        items = list(portfolios.items())
    else:
        items = [(getattr(pf, "kind", f"portfolio{i}"), getattr(pf, "weights", pf))
                 for i, pf in enumerate(portfolios)]
    return [hold_report(y, R, w, dates, window, name) for name, w in items]
