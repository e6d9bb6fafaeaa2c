"""scikit-learn style wrappers around the construction and rebalancing pipelines."""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._random import stage_seed
from ._validation import as_matrix, as_vector, check_design
from .data import center_design
from .diagnostics import te_raw
from .fista import FistaConfig, fista
from .mala import MalaConfig, chain_summaries, mala_run
from .model import build_preconditioner, build_spec
from .noise import estimate_sigma2_mad, theta0_init
from .rebalance import (
    DEFAULT_C_GRID,
    GateConfig,
    build_delta_design,
    gate_trades,
    grid_search_c,
    pick_c_star,
)
from .sapg import SapgConfig, run_sapg
from .selection import build_portfolio_suite, select_from_chain


class SparseIndexTracker(BaseEstimator, RegressorMixin):
    """Sparse long-only tracking portfolio with posterior-gated support.

    ``fit(R, y)`` takes a (T, p) matrix of asset returns and the index
    returns. The fitted ``coef_`` is the portfolio named by ``portfolio``.
    """

    def __init__(self, tau_c=2e-3, alpha_eps=1e-8, k=2.5, pi_star=0.65, long_only=True,
                 portfolio="refit_fista", sapg_iter=20000, sapg_burn=4000, sapg_c=1.0,
                 sapg_k0=200.0, pr_exponent=1.0, warmstart=1000, mala_samples=250000,
                 mala_burn=20000, mala_thin=None, target_accept=0.60, budget_diag="p",
                 fista_max_iter=20000, fista_rel_tol=1e-10, chain_path=None, random_state=0):
        self.tau_c = tau_c
        self.alpha_eps = alpha_eps
        self.k = k
        self.pi_star = pi_star
        self.long_only = long_only
        self.portfolio = portfolio
        self.sapg_iter = sapg_iter
        self.sapg_burn = sapg_burn
        self.sapg_c = sapg_c
        self.sapg_k0 = sapg_k0
        self.pr_exponent = pr_exponent
        self.warmstart = warmstart
        self.mala_samples = mala_samples
        self.mala_burn = mala_burn
        self.mala_thin = mala_thin
        self.target_accept = target_accept
        self.budget_diag = budget_diag
        self.fista_max_iter = fista_max_iter
        self.fista_rel_tol = fista_rel_tol
        self.chain_path = chain_path
        self.random_state = random_state

    def _configs(self):
        seed = 0 if self.random_state is None else int(self.random_state)
        sapg = SapgConfig(n_iter=self.sapg_iter, n_burn=self.sapg_burn, c_step=self.sapg_c,
                          k0=self.sapg_k0, pr_exponent=self.pr_exponent,
                          warmstart_iters=self.warmstart, seed=stage_seed(seed, "sapg"))
        mala = MalaConfig(n_samples=self.mala_samples, burn_in=self.mala_burn,
                          thin=self.mala_thin, target_accept=self.target_accept,
                          seed=stage_seed(seed, "mala"), chain_path=self.chain_path)
        fcfg = FistaConfig(max_iter=self.fista_max_iter, rel_tol=self.fista_rel_tol)
        return sapg, mala, fcfg

    def fit(self, X, y):
        y, X = check_design(y, X)
        sapg_cfg, mala_cfg, fista_cfg = self._configs()
        design = center_design(y, X, self.alpha_eps)
        noise = estimate_sigma2_mad(design)
        init = theta0_init(design, w_ols=noise.w_ols)
        spec0 = build_spec(design, noise.sigma2, self.tau_c, init.theta0)
        sapg = run_sapg(design, spec0, init, sapg_cfg)
        spec = spec0.with_theta(sapg.theta_star)
        map_sol = fista(design, spec, "weighted_l1", fista_cfg)
        precond = build_preconditioner(design, spec, self.budget_diag)
        chain = mala_run(design, spec, precond, mala_cfg, map_sol.w)
        sd, mean = chain_summaries(chain)
        report = select_from_chain(map_sol.w, chain, self.k, self.pi_star, self.long_only, sd)
        suite = build_portfolio_suite(design, spec, map_sol.w, report, fista_cfg)

        self.design_ = design
        self.noise_ = noise
        self.sigma2_ = noise.sigma2
        self.theta_init_ = init
        self.sapg_ = sapg
        self.theta_star_ = sapg.theta_star
        self.spec_ = spec
        self.map_ = map_sol
        self.w_map_ = map_sol.w
        self.preconditioner_ = precond
        self.chain_ = chain
        self.posterior_sd_ = sd
        self.posterior_mean_ = mean
        self.selection_ = report
        self.portfolios_ = {pf.kind: pf for pf in suite}
        if self.portfolio not in self.portfolios_:
            raise ValueError(f"portfolio must be one of {sorted(self.portfolios_)}")
        self.coef_ = self.portfolios_[self.portfolio].weights
        self.support_ = report.support
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = as_matrix(X, "X", self.n_features_in_)
        return X @ self.coef_

    def tracking_error(self, X, y) -> float:
        check_is_fitted(self, "coef_")
        return te_raw(y, X, self.coef_)


class DeltaRebalancer(BaseEstimator):
    """Sum-zero rebalancing of a held portfolio on a new fitting window.

    ``fit(X, y, w_old)`` scores the noise multipliers in ``c_grid``, locks the
    best one, samples the increment posterior and gates the trades. ``coef_``
    is the new portfolio (equal to ``w_old`` when no trade passes the gate).
    """

    def __init__(self, c_grid=DEFAULT_C_GRID, k=2.5, pi_star=0.8, tau_eff=1e-4, gamma_lo=0.2,
                 gamma_hi=1.2, gamma_nnz=0.25, sigma_nnz=5.0, min_names=2, tau_c=math.inf,
                 alpha_eps=1e-8, sapg_iter=15000, sapg_burn=4000, sapg_c=1.0, sapg_k0=200.0,
                 warmstart=1000, fista_max_iter=4000, fista_rel_tol=1e-10, mala_samples=250000,
                 mala_burn=50000, mala_thin=6, target_accept=0.60, chain_path=None, jobs=1,
                 random_state=0):
        self.c_grid = c_grid
        self.k = k
        self.pi_star = pi_star
        self.tau_eff = tau_eff
        self.gamma_lo = gamma_lo
        self.gamma_hi = gamma_hi
        self.gamma_nnz = gamma_nnz
        self.sigma_nnz = sigma_nnz
        self.min_names = min_names
        self.tau_c = tau_c
        self.alpha_eps = alpha_eps
        self.sapg_iter = sapg_iter
        self.sapg_burn = sapg_burn
        self.sapg_c = sapg_c
        self.sapg_k0 = sapg_k0
        self.warmstart = warmstart
        self.fista_max_iter = fista_max_iter
        self.fista_rel_tol = fista_rel_tol
        self.mala_samples = mala_samples
        self.mala_burn = mala_burn
        self.mala_thin = mala_thin
        self.target_accept = target_accept
        self.chain_path = chain_path
        self.jobs = jobs
        self.random_state = random_state

    def gate_config(self) -> GateConfig:
        return GateConfig(self.k, self.pi_star, self.tau_eff, self.gamma_lo, self.gamma_hi,
                          self.gamma_nnz, self.sigma_nnz, self.min_names)

    def fit(self, X, y, w_old):
        y, X = check_design(y, X)
        w_old = as_vector(w_old, "w_old", X.shape[1])
        seed = 0 if self.random_state is None else int(self.random_state)
        gate = self.gate_config()
        sapg_cfg = SapgConfig(n_iter=self.sapg_iter, n_burn=self.sapg_burn, c_step=self.sapg_c,
                              k0=self.sapg_k0, warmstart_iters=self.warmstart,
                              seed=stage_seed(seed, "rebalance_sapg"))
        fista_cfg = FistaConfig(max_iter=self.fista_max_iter, rel_tol=self.fista_rel_tol)
        mala_cfg = MalaConfig(n_samples=self.mala_samples, burn_in=self.mala_burn,
                              thin=self.mala_thin, target_accept=self.target_accept,
                              seed=stage_seed(seed, "rebalance_mala"), chain_path=self.chain_path)

        design = build_delta_design(y, X, w_old, self.alpha_eps)
        te_old = te_raw(y, X, w_old)
        sigma2_base = estimate_sigma2_mad(design).sigma2
        rows, dws = grid_search_c(design, self.c_grid, w_old, te_old, gate, sapg_cfg, fista_cfg,
                                  sigma2_base, self.tau_c, self.jobs, return_dw=True)
        best = pick_c_star(rows, te_old)
        row = rows[best]
        spec = build_spec(design, row.sigma2_c, self.tau_c, row.kappa_c, mode="delta")
        precond = build_preconditioner(design, spec)
        chain = mala_run(design, spec, precond, mala_cfg, dws[best])
        decision = gate_trades(dws[best], chain, w_old, gate)

        self.design_ = design
        self.te_old_ = te_old
        self.sigma2_base_ = sigma2_base
        self.grid_ = rows
        self.c_star_ = row.c
        self.sigma2_final_ = row.sigma2_c
        self.kappa_ = row.kappa_c
        self.spec_ = spec
        self.dw_map_ = dws[best]
        self.preconditioner_ = precond
        self.chain_ = chain
        self.decision_ = decision
        self.coef_ = decision.w_new
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return as_matrix(X, "X", self.n_features_in_) @ self.coef_
