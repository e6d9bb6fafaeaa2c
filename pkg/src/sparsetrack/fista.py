"""Accelerated proximal-gradient MAP solvers and the constrained debiased refit."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import linalg

from ._validation import as_index_set, as_vector
from .data import CenteredDesign
from .exceptions import (
    BudgetShiftWarning,
    ConvergenceWarning,
    EmptySupport,
    NonFiniteObjective,
    SingularSystem,
)
from .model import PROX_KINDS, ModelSpec, hessian_lmax, penalty, prox


@dataclass(frozen=True)
class FistaConfig:
    max_iter: int = 20000
    rel_tol: float = 1e-10
    step: float | None = None  # None -> 1 / L
    record_objective: bool = True
    restart: bool = True

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be positive")


@dataclass
class MapSolution:
    w: np.ndarray
    objective_trace: np.ndarray
    iters_used: int
    converged: bool
    objective: float = float("nan")
    restarts: int = 0
    support: np.ndarray | None = field(default=None, repr=False)

    def to_csv(self, path) -> Path:
        path = Path(path)
        frame = pd.DataFrame({"iter": np.arange(self.objective_trace.size),
                              "objective": self.objective_trace})
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def fista(design: CenteredDesign, spec: ModelSpec, prox_kind: str | None = None,
          cfg: FistaConfig | None = None, w0=None) -> MapSolution:
    """Minimise ``f(w) + theta * g(w)`` with FISTA and function-value restarts.

    On an objective increase the momentum is reset and the step is retaken
    from the last accepted iterate, so the recorded trace is monotone.
    """
    cfg = cfg or FistaConfig()
    kind = spec.prox_kind if prox_kind is None else prox_kind
    if kind not in PROX_KINDS:
        raise ValueError(f"prox_kind must be one of {PROX_KINDS}")
    p = design.p
    w = np.zeros(p) if w0 is None else as_vector(w0, "w0", p).copy()
    if not np.all(np.isfinite(w)):
        raise ValueError("w0 must be finite")
    step = cfg.step if cfg.step is not None else 1.0 / spec.L_f
    R, y = design.R_c, design.y_c
    sigma2, Lam, b, theta, alpha = (spec.sigma2, spec.Lambda, spec.budget_target,
                                    spec.theta, spec.alpha)

    def objective(w, Rw):
        r = Rw - y
        s = w.sum() - b
        return r @ r / (2.0 * sigma2) + Lam * s * s + theta * penalty(w, alpha)

    Rw = R @ w
    F = objective(w, Rw)
    trace = [F]
    z, Rz = w, Rw
    t = 1.0
    converged = False
    restarts = 0
    just_restarted = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = R.T @ (Rz - y) / sigma2
        if Lam:
            grad = grad + 2.0 * Lam * (z.sum() - b)
        w_new = prox(kind, z - step * grad, step, theta, alpha)
        Rw_new = R @ w_new
        F_new = objective(w_new, Rw_new)
        if not math.isfinite(F_new):
            raise NonFiniteObjective(f"objective became {F_new} at iteration {it}; check L")
        if cfg.restart and F_new > F:
            if just_restarted:
                # a plain prox-gradient step cannot improve: stationary to rounding
                converged = True
                break
            restarts += 1
            t = 1.0
            z, Rz = w, Rw
            just_restarted = True
            continue
        just_restarted = False
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / t_new
        z = w_new + beta * (w_new - w)
        Rz = Rw_new + beta * (Rw_new - Rw)
        change = abs(F_new - F) / max(1.0, abs(F))
        w, Rw, F, t = w_new, Rw_new, F_new, t_new
        if cfg.record_objective:
            trace.append(F)
        if change < cfg.rel_tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"FISTA stopped at max_iter={cfg.max_iter} before rel_tol",
                      ConvergenceWarning, stacklevel=2)
    return MapSolution(w, np.asarray(trace), it, converged, float(F), restarts)


def restrict(design: CenteredDesign, support) -> CenteredDesign:
    """Design using only the columns in ``support``."""
    S = as_index_set(support, design.p)
    return CenteredDesign(design.y_c, design.R_c[:, S], design.y_mu, design.R_mu[S],
                          design.alpha[S], design.window)


def budget_shift(w, support, target: float = 1.0) -> np.ndarray:
    """Add the same constant on ``support`` so the weights sum to ``target``."""
    w = np.array(w, dtype=float)
    if len(support) == 0:
        raise EmptySupport("cannot shift an empty support")
    w[support] += (target - w.sum()) / len(support)
    return w


def refit_on_support(design: CenteredDesign, spec: ModelSpec, support,
                     cfg: FistaConfig | None = None, shift: bool = True) -> MapSolution:
    """Nonnegative MAP on the columns in ``support``, embedded back into length p.

    Uses the restricted Lipschitz constant. With ``shift`` the result is moved
    onto the budget hyperplane by an equal shift over the support, falling
    back to proportional rescaling if the shift would create a negative weight.
    """
    S = as_index_set(support, design.p)
    if S.size == 0:
        raise EmptySupport("refit needs a nonempty support")
    sub = restrict(design, S)
    L_S = hessian_lmax(sub.R_c, spec.sigma2, spec.Lambda)
    sub_spec = replace(spec, alpha=sub.alpha, L_f=L_S, lambda_my=1.0 / L_S)
    sol = fista(sub, sub_spec, "nonneg_l1", cfg)
    w = np.zeros(design.p)
    w[S] = sol.w
    if shift:
        shifted = budget_shift(w, S, spec.budget_target)
        if np.any(shifted[S] < 0):
            total = w.sum()
            if total <= 0:
                raise EmptySupport("refit produced an all-zero portfolio")
            warnings.warn("equal budget shift would create negative weights; "
                          "rescaling proportionally instead", BudgetShiftWarning, stacklevel=2)
            shifted = w / total
        w = shifted
    return MapSolution(w, sol.objective_trace, sol.iters_used, sol.converged, sol.objective,
                       sol.restarts, S)


def debias_kkt(design: CenteredDesign, support, sigma2: float,
               ridge: float | None = None) -> np.ndarray:
    """Budget-constrained least squares on ``support`` (no sign constraint).

    Solves ``[[H, 1], [1', 0]] [u; mu] = [R_S' y / sigma2; 1]`` with
    ``H = R_S'R_S / sigma2 + ridge * I`` by Cholesky and a Schur complement.
    The default ridge is ``1e-10 * trace(R_S'R_S / sigma2) / |S|``.
    """
    S = as_index_set(support, design.p)
    if S.size == 0:
        raise EmptySupport("debias needs a nonempty support")
    R_S = design.R_c[:, S]
    H = R_S.T @ R_S / sigma2
    if ridge is None:
        ridge = 1e-10 * np.trace(H) / S.size
    if ridge <= 0 and S.size > 1:
        raise ValueError("ridge must be positive")
    H[np.diag_indices_from(H)] += ridge
    rhs = R_S.T @ design.y_c / sigma2
    ones = np.ones(S.size)
    try:
        factor = linalg.cho_factor(H)
        Hb = linalg.cho_solve(factor, rhs)
        H1 = linalg.cho_solve(factor, ones)
    except linalg.LinAlgError as exc:
        raise SingularSystem(f"KKT block is not positive definite: {exc}") from exc
    denom = H1.sum()
    if not np.isfinite(denom) or denom <= 0:
        raise SingularSystem("degenerate Schur complement in KKT solve")
    mu = (Hb.sum() - 1.0) / denom
    u_S = Hb - mu * H1
    if not np.all(np.isfinite(u_S)):
        raise SingularSystem("non-finite KKT solution")
    u = np.zeros(design.p)
    u[S] = u_S
    return u
