"""Support selection from the MAP and the chain, and long-only portfolio builders."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import as_index_set, as_vector
from .data import CenteredDesign
from .diagnostics import te_raw
from .exceptions import AllNaN, DimensionMismatch, EmptySupport, EmptySupportWarning
from .fista import FistaConfig, budget_shift, debias_kkt, refit_on_support
from .mala import chain_summaries
from .model import ModelSpec

PORTFOLIO_KINDS = ("pruned_proj", "refit_fista", "debias")


@dataclass(frozen=True)
class SelectionReport:
    tau_post: float
    k: float
    pi_star: float
    sd: np.ndarray
    pi_hat: np.ndarray
    S_map: np.ndarray
    S_uq: np.ndarray
    S_long: np.ndarray
    mass_kept: float
    long_only: bool = True

    @property
    def support(self) -> np.ndarray:
        """Final support used for construction."""
        return self.S_long


@dataclass(frozen=True)
class Portfolio:
    weights: np.ndarray
    support: np.ndarray
    kind: str
    budget_sum: float
    te: float = float("nan")

    @property
    def diagnostic_only(self) -> bool:
        return self.kind == "debias"


def compute_tau_post(sd, k: float = 2.5) -> float:
    sd = np.asarray(sd, dtype=float)
    finite = sd[np.isfinite(sd)]
    if finite.size == 0:
        raise AllNaN("no finite posterior standard deviations")
    return float(k * np.median(finite))


def activation_probs(chain, tau_post: float, block: int = 10000) -> np.ndarray:
    """Fraction of draws with ``|w_j| >= tau_post`` for each coordinate."""
    draws = getattr(chain, "draws", chain)
    M = draws.shape[0]
    if M < 1:
        raise ValueError("chain has no draws")
    counts = np.zeros(draws.shape[1])
    for start in range(0, M, block):
        counts += (np.abs(np.asarray(draws[start:start + block])) >= tau_post).sum(axis=0)
    return counts / M


def select_support(w_map, tau_post: float, pi_hat, pi_star: float, long_only: bool = True,
                   sd=None, k: float = float("nan")) -> SelectionReport:
    w_map = as_vector(w_map, "w_map")
    pi_hat = as_vector(pi_hat, "pi_hat")
    if pi_hat.shape != w_map.shape:
        raise DimensionMismatch("w_map and pi_hat must have the same length")
    large = np.abs(w_map) >= tau_post
    S_map = np.flatnonzero(large)
    S_uq = np.flatnonzero(large & (pi_hat >= pi_star))
    S_long = S_uq[w_map[S_uq] >= 0] if long_only else S_uq
    total = np.abs(w_map).sum()
    mass = float(np.abs(w_map[S_long]).sum() / total) if total > 0 else 0.0
    if S_long.size == 0:
        warnings.warn("selection is empty", EmptySupportWarning, stacklevel=2)
    sd = np.full_like(w_map, np.nan) if sd is None else as_vector(sd, "sd", w_map.size)
    return SelectionReport(float(tau_post), float(k), float(pi_star), sd, pi_hat, S_map, S_uq,
                           S_long, mass, long_only)


def select_from_chain(w_map, chain, k: float = 2.5, pi_star: float = 0.65,
                      long_only: bool = True, sd=None) -> SelectionReport:
    """Threshold, activation probabilities and gated support in one call."""
    if sd is None:
        sd, _ = chain_summaries(chain)
    tau = compute_tau_post(sd, k)
    pi_hat = activation_probs(chain, tau)
    return select_support(w_map, tau, pi_hat, pi_star, long_only, sd=sd, k=k)


def _raw_te(design: CenteredDesign, w) -> float:
    y, R = design.raw()
    return te_raw(y, R, w, design.y_mu, design.R_mu)


def build_pruned_projected(w_map, S) -> Portfolio:
    """Keep ``w_map`` on ``S`` and shift it equally onto the budget hyperplane."""
    w_map = as_vector(w_map, "w_map")
    S = as_index_set(S, w_map.size)
    if S.size == 0:
        raise EmptySupport("pruned portfolio needs a nonempty support")
    w = np.zeros_like(w_map)
    w[S] = w_map[S]
    w = budget_shift(w, S)
    return Portfolio(w, S, "pruned_proj", float(w.sum()))


def build_portfolio_suite(design: CenteredDesign, spec: ModelSpec, w_map,
                          report: SelectionReport, fista_cfg: FistaConfig | None = None,
                          ridge: float | None = None) -> list[Portfolio]:
    """Pruned-projected, refit and debiased portfolios on the report's support.

    Each portfolio carries its in-sample raw-return tracking error.
    """
    S = report.support
    if S.size == 0:
        raise EmptySupport("selection is empty; nothing to build")
    pruned = build_pruned_projected(w_map, S)
    refit = refit_on_support(design, spec, S, fista_cfg)
    deb = debias_kkt(design, S, spec.sigma2, ridge)
    out = []
    for kind, w in (("pruned_proj", pruned.weights), ("refit_fista", refit.w), ("debias", deb)):
        out.append(Portfolio(w, S, kind, float(w.sum()), _raw_te(design, w)))
    return out


def write_selection_report(path, report: SelectionReport, w_map, tickers=None) -> Path:
    """Per-asset table: ticker, w_map, sd, pi_hat and membership flags."""
    w_map = np.asarray(w_map, dtype=float)
    p = w_map.size
    tickers = list(tickers) if tickers is not None else [f"x{j}" for j in range(p)]

    def flag(S):
        f = np.zeros(p, dtype=int)
        f[S] = 1
        return f

    frame = pd.DataFrame({
        "ticker": tickers, "w_map": w_map, "sd": report.sd, "pi_hat": report.pi_hat,
        "in_S_map": flag(report.S_map), "in_S_uq": flag(report.S_uq),
        "in_S": flag(report.S_long),
    })
    frame.to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def top_holdings(portfolio: Portfolio, tickers=None, n: int = 20) -> pd.DataFrame:
    w = portfolio.weights
    tickers = list(tickers) if tickers is not None else [f"x{j}" for j in range(w.size)]
    order = np.argsort(-w, kind="stable")[:n]
    order = order[w[order] != 0]
    return pd.DataFrame({"rank": np.arange(1, order.size + 1),
                         "ticker": [tickers[j] for j in order], "weight": w[order]})


def write_portfolios(path, portfolios: list[Portfolio], tickers=None) -> Path:
    """Wide table with one weight column per portfolio kind."""
    p = portfolios[0].weights.size
    tickers = list(tickers) if tickers is not None else [f"x{j}" for j in range(p)]
    frame = pd.DataFrame({"ticker": tickers})
    for pf in portfolios:
        frame[pf.kind] = pf.weights
    frame.to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def read_portfolios(path) -> tuple[list[str], dict[str, np.ndarray]]:
    frame = pd.read_csv(path, float_precision="round_trip")
    tickers = frame["ticker"].astype(str).tolist()
    return tickers, {c: frame[c].to_numpy(dtype=float) for c in frame.columns if c != "ticker"}
