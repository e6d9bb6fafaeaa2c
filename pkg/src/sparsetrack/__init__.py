"""Bayesian sparse index tracking with empirical-Bayes shrinkage and proximal MCMC."""

from .data import (
    CenteredDesign,
    ReturnsPanel,
    WindowSpec,
    center_design,
    load_panel,
    slice_window,
)
from .diagnostics import acf, ess, evaluate_hold, mcse_mean, sentinel_ess, te_raw
from .estimators import DeltaRebalancer, SparseIndexTracker
from .fista import FistaConfig, MapSolution, debias_kkt, fista, refit_on_support
from .mala import MalaConfig, SampleChain, chain_summaries, mala_run, tune_step
from .model import (
    ModelSpec,
    Preconditioner,
    build_preconditioner,
    build_spec,
    grad_f,
    my_envelope_grad,
    power_method_Lf,
    prox_nonneg_l1,
    prox_sumzero_l1,
    prox_weighted_l1,
)
from .noise import NoiseEstimate, ThetaInit, estimate_sigma2_mad, ols_fit, theta0_init
from .rebalance import GateConfig, build_delta_design, gate_trades, grid_search_c
from .sapg import SapgConfig, SapgResult, myula_step, polyak_ruppert, run_sapg
from .selection import (
    Portfolio,
    SelectionReport,
    activation_probs,
    build_portfolio_suite,
    build_pruned_projected,
    compute_tau_post,
    select_support,
)

__version__ = "0.1.0"
