"""Sum-zero rebalancing: noise-scale grid, decision score and UQ trade gating."""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from ._validation import as_vector
from .data import CenteredDesign, center_design
from .diagnostics import te_raw
from .exceptions import ConfigError, GateDegenerate, SparseTrackError
from .fista import FistaConfig, fista
from .mala import chain_summaries
from .model import build_spec
from .noise import ThetaInit, estimate_sigma2_mad, ols_fit
from .sapg import SapgConfig, run_sapg
from .selection import activation_probs, compute_tau_post

DEFAULT_C_GRID = (1, 15, 25, 35, 45, 50, 55, 60, 65, 70, 80, 90, 100)


@dataclass(frozen=True)
class GateConfig:
    k: float = 2.5
    pi_star: float = 0.8
    tau_eff: float = 1e-4
    gamma_lo: float = 0.2
    gamma_hi: float = 1.2
    gamma_nnz: float = 0.25
    sigma_nnz: float = 5.0
    min_names: int = 2
    max_clip_rounds: int = 10

    def __post_init__(self):
        if not 0 < self.gamma_lo < 1 < self.gamma_hi:
            raise ConfigError("need 0 < gamma_lo < 1 < gamma_hi")
        if self.sigma_nnz <= 0 or self.tau_eff < 0:
            raise ConfigError("sigma_nnz must be positive and tau_eff nonnegative")


@dataclass
class RebalanceGridRow:
    c: float
    sigma2_c: float
    kappa_c: float
    te_fit2: float
    nnz_raw: int
    nnz_eff: int
    phi_te: int
    w_nnz: float
    score: float
    sum_dw: float = float("nan")
    error: str | None = None


@dataclass
class RebalanceDecision:
    S_tau: np.ndarray
    S_pi: np.ndarray
    S_rule: np.ndarray
    dw_implementable: np.ndarray
    w_new: np.ndarray
    acted: bool
    per_name: list = field(default_factory=list)
    tau_post: float = float("nan")
    pi_hat: np.ndarray | None = field(default=None, repr=False)
    clip_rounds: int = 0

    def to_frame(self) -> pd.DataFrame:
        cols = ["ticker", "j", "w_old", "dw_map", "w_new", "pi_hat"]
        return pd.DataFrame(self.per_name, columns=cols)


def build_delta_design(y2, R2, w_old, eps: float = 1e-8, window=None,
                       renormalize: bool = True) -> CenteredDesign:
    """Centered FIT-2 design with residual target and squared prior scales.

    The mean-one column scales are squared (and, with ``renormalize``, brought
    back to mean one). The stored ``y_mu`` is that of the raw index so that
    raw returns can be rebuilt with :func:`delta_raw_returns`.
    """
    base = center_design(y2, R2, eps, window)
    w_old = as_vector(w_old, "w_old", base.p)
    y_res = base.y_c - base.R_c @ w_old
    y_res.setflags(write=False)
    alpha = base.alpha ** 2
    if renormalize:
        alpha = alpha / alpha.mean()
    return CenteredDesign(y_res, base.R_c, base.y_mu, base.R_mu, alpha, window)


def delta_raw_returns(delta_design: CenteredDesign, w_old) -> tuple[np.ndarray, np.ndarray]:
    """Uncentred FIT-2 ``(y, R)`` recovered from a delta design."""
    y = delta_design.y_c + delta_design.R_c @ w_old + delta_design.y_mu
    return y, delta_design.R_c + delta_design.R_mu


def te_fit2(delta_design: CenteredDesign, w_old, dw) -> float:
    y, R = delta_raw_returns(delta_design, w_old)
    return te_raw(y, R, np.asarray(w_old) + np.asarray(dw))


def kappa0_init(delta_design: CenteredDesign, floor: float = 1e-6) -> ThetaInit:
    """Increment analogue of the weights initialiser.

    The reference is the least-squares increment projected onto the sum-zero
    plane and ``kappa0 = (p - 1) / sum_j alpha_j |dw_ref_j|``.
    """
    dw = ols_fit(delta_design)
    dw_ref = dw - dw.mean()
    mass = float(np.dot(delta_design.alpha, np.abs(dw_ref)))
    d = max(delta_design.p - 1, 1)
    kappa0 = max(d / mass, floor) if mass > 0 else 1.0
    return ThetaInit(kappa0, kappa0 / 10.0, kappa0 * 10.0, dw_ref)


def nnz_effective(dw, tau_eff: float) -> int:
    return int(np.count_nonzero(np.abs(dw) >= tau_eff))


def te_window_flag(te: float, te_old: float, gate: GateConfig) -> int:
    return int(gate.gamma_lo * te_old <= te <= gate.gamma_hi * te_old)


def nnz_preference(nnz_eff: float, nnz_prev: float, gate: GateConfig) -> float:
    n_star = gate.gamma_nnz * nnz_prev
    return math.exp(-0.5 * ((nnz_eff - n_star) / gate.sigma_nnz) ** 2)


def _grid_row(args) -> tuple[RebalanceGridRow, np.ndarray | None]:
    (design, c, sigma2_base, w_old, te_old, nnz_prev, gate, sapg_cfg, fista_cfg,
     tau_c, seed) = args
    sigma2 = c * sigma2_base
    try:
        init = kappa0_init(design)
        spec = build_spec(design, sigma2, tau_c, init.theta0, mode="delta")
        cfg = replace(sapg_cfg, seed=seed)
        res = run_sapg(design, spec, init, cfg)
        spec = spec.with_theta(res.theta_star)
        dw = fista(design, spec, "sumzero_l1", fista_cfg).w
    except (SparseTrackError, ValueError, FloatingPointError) as exc:
        nan = float("nan")
        return RebalanceGridRow(c, sigma2, nan, nan, 0, 0, 0, nan, 0.0, nan,
                                f"{type(exc).__name__}: {exc}"), None
    te = te_fit2(design, w_old, dw)
    nnz_eff = nnz_effective(dw, gate.tau_eff)
    phi = te_window_flag(te, te_old, gate)
    w_nnz = nnz_preference(nnz_eff, nnz_prev, gate)
    row = RebalanceGridRow(c, sigma2, res.theta_star, te, int(np.count_nonzero(dw)), nnz_eff,
                           phi, w_nnz, phi * w_nnz, float(dw.sum()))
    return row, dw


def grid_search_c(delta_design: CenteredDesign, c_grid, w_old, te_old: float,
                  gate: GateConfig | None = None, sapg_cfg: SapgConfig | None = None,
                  fista_cfg: FistaConfig | None = None, sigma2_base: float | None = None,
                  tau_c: float = math.inf, jobs: int = 1, return_dw: bool = False):
    """Score every noise multiplier in ``c_grid``.

    Each row runs SAPG for ``kappa(c)`` then the sum-zero MAP. Rows that fail
    carry the error message and a zero score. Row ``i`` uses the ``i``-th
    child of ``sapg_cfg.seed`` so results do not depend on ``jobs``.
    With ``return_dw`` the MAP increments are returned alongside the rows.
    """
    c_grid = [float(c) for c in c_grid]
    if not c_grid:
        raise ConfigError("c_grid is empty")
    if any(c <= 0 for c in c_grid):
        raise ConfigError("c_grid values must be positive")
    gate = gate or GateConfig()
    sapg_cfg = sapg_cfg or SapgConfig(n_iter=15000, n_burn=4000)
    fista_cfg = fista_cfg or FistaConfig(max_iter=4000)
    w_old = as_vector(w_old, "w_old", delta_design.p)
    if sigma2_base is None:
        sigma2_base = estimate_sigma2_mad(delta_design).sigma2
    nnz_prev = int(np.count_nonzero(w_old))
    base = sapg_cfg.seed
    if not isinstance(base, np.random.SeedSequence):
        base = np.random.SeedSequence(base)
    seeds = [np.random.SeedSequence(base.entropy, spawn_key=base.spawn_key + (i,))
             for i in range(len(c_grid))]
    tasks = [(delta_design, c, sigma2_base, w_old, te_old, nnz_prev, gate, sapg_cfg, fista_cfg,
              tau_c, s) for c, s in zip(c_grid, seeds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_grid_row, tasks))
    else:
        out = [_grid_row(t) for t in tasks]
    rows = [r for r, _ in out]
    if return_dw:
        return rows, [d for _, d in out]
    return rows


def pick_c_star(rows: list[RebalanceGridRow], te_old: float) -> int:
    """Index of the best row: highest score, first in grid order on ties.

    If every score is zero the row whose TE is closest to ``te_old`` wins.
    """
    ok = [i for i, r in enumerate(rows) if r.error is None]
    if not ok:
        raise SparseTrackError("every grid row failed")
    best = max(ok, key=lambda i: (rows[i].score, -i))
    if rows[best].score > 0:
        return best
    return min(ok, key=lambda i: (abs(rows[i].te_fit2 - te_old), i))


def grid_frame(rows: list[RebalanceGridRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])


def write_grid(path, rows: list[RebalanceGridRow]) -> Path:
    grid_frame(rows).to_csv(path, index=False, float_format="%.17g")
    return Path(path)


def _recenter_and_clip(dw_map, S, w_old, max_rounds: int):
    """Restrict to ``S``, remove the mean, then clip/recenter until ``w_old + dw >= 0``."""
    dw = np.zeros_like(w_old)
    dw[S] = dw_map[S] - dw_map[S].mean()
    free = np.zeros(w_old.size, dtype=bool)
    free[S] = True
    for rounds in range(max_rounds + 1):
        neg = free & (w_old + dw < 0)
        if not neg.any():
            return dw, rounds
        if rounds == max_rounds:
            break
        dw[neg] = -w_old[neg]
        free &= ~neg
        if not free.any():
            break
        dw[free] -= dw.sum() / free.sum()
    return None, max_rounds


def gate_trades(dw_map, chain, w_old, gate: GateConfig | None = None, tickers=None,
                sd=None) -> RebalanceDecision:
    """Keep only increments that are large and probable, then make them tradeable."""
    gate = gate or GateConfig()
    dw_map = as_vector(dw_map, "dw_map")
    w_old = as_vector(w_old, "w_old", dw_map.size)
    p = dw_map.size
    if sd is None:
        sd, _ = chain_summaries(chain)
    tau = compute_tau_post(sd, gate.k)
    pi_hat = activation_probs(chain, tau)
    S_tau = np.flatnonzero(np.abs(dw_map) >= tau)
    S_pi = np.flatnonzero(pi_hat >= gate.pi_star)
    S_rule = np.intersect1d(S_tau, S_pi)

    dw_impl = np.zeros(p)
    acted = False
    rounds = 0
    if S_rule.size >= gate.min_names:
        dw, rounds = _recenter_and_clip(dw_map, S_rule, w_old, gate.max_clip_rounds)
        if dw is None:
            warnings.warn("clip/recenter loop did not settle; no trade", GateDegenerate,
                          stacklevel=2)
        else:
            dw_impl, acted = dw, True
    w_new = w_old + dw_impl if acted else w_old.copy()

    tickers = list(tickers) if tickers is not None else [f"x{j}" for j in range(p)]
    listed = np.union1d(S_tau, S_pi)
    per_name = [(tickers[j], int(j), float(w_old[j]), float(dw_map[j]), float(w_new[j]),
                 float(pi_hat[j])) for j in listed]
    return RebalanceDecision(S_tau, S_pi, S_rule, dw_impl, w_new, acted, per_name, tau, pi_hat,
                             rounds)
