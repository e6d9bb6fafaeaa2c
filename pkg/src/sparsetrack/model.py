"""Potentials, proximal maps and curvature bounds for the tracking posterior.

The negative log-posterior on a centered design is

    f(w) + theta * sum_j alpha_j |w_j|,
    f(w) = ||y_c - R_c w||^2 / (2 sigma2) + Lambda * (1'w - b)^2,

with ``b = 1`` for portfolio weights and ``b = 0`` for rebalancing increments.
In increment ("delta") mode the penalty is additionally restricted to the
sum-zero hyperplane through its proximal map.

Every proximal map accepts an optional diagonal ``metric`` ``m`` (the squared
Jacobi preconditioner). With a metric the map solves

    argmin_z  t * theta * sum_j alpha_j |z_j| + sum_j (z_j - w_j)^2 / (2 m_j)

which is what a preconditioned Langevin kernel needs.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from ._validation import as_vector, check_positive
from .data import CenteredDesign
from .exceptions import ConvergenceWarning, DimensionMismatch, ZeroDiagonal

PROX_KINDS = ("weighted_l1", "nonneg_l1", "sumzero_l1")
MODES = ("weights", "delta")


def budget_lambda(tau_c: float) -> float:
    """Budget penalty strength ``1 / (2 tau_c^2)``; ``tau_c = inf`` gives 0."""
    return 1.0 / (2.0 * tau_c * tau_c)


@dataclass(frozen=True)
class ModelSpec:
    sigma2: float
    tau_c: float
    theta: float
    alpha: np.ndarray
    lambda_my: float
    L_f: float
    mode: str = "weights"

    def __post_init__(self):
        check_positive(self.sigma2, "sigma2")
        check_positive(self.tau_c, "tau_c")
        check_positive(self.theta, "theta", allow_zero=True)
        check_positive(self.lambda_my, "lambda_my")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        alpha = as_vector(self.alpha, "alpha")
        if np.any(alpha <= 0):
            raise ValueError("alpha must be strictly positive")
        object.__setattr__(self, "alpha", alpha)

    @property
    def Lambda(self) -> float:
        return budget_lambda(self.tau_c)

    @property
    def budget_target(self) -> float:
        return 1.0 if self.mode == "weights" else 0.0

    @property
    def prox_kind(self) -> str:
        return "weighted_l1" if self.mode == "weights" else "sumzero_l1"

    @property
    def p(self) -> int:
        return self.alpha.shape[0]

    def with_theta(self, theta: float) -> "ModelSpec":
        return replace(self, theta=float(theta))


def build_spec(design: CenteredDesign, sigma2: float, tau_c: float, theta: float,
               mode: str = "weights", tol: float = 1e-10, max_iter: int = 10000) -> ModelSpec:
    """ModelSpec with ``L_f`` from the power method and ``lambda_my = 1 / L_f``."""
    Lambda = budget_lambda(tau_c)
    L_f = hessian_lmax(design.R_c, sigma2, Lambda, tol=tol, max_iter=max_iter)
    return ModelSpec(sigma2=float(sigma2), tau_c=float(tau_c), theta=float(theta),
                     alpha=design.alpha, lambda_my=1.0 / L_f, L_f=L_f, mode=mode)


# -- smooth part -----------------------------------------------------------


def _check_w(spec: ModelSpec, design: CenteredDesign, w) -> np.ndarray:
    w = as_vector(w, "w")
    if w.shape[0] != design.p or spec.p != design.p:
        raise DimensionMismatch(
            f"w has length {w.shape[0]}, design has {design.p} assets, spec has {spec.p}"
        )
    return w


def f_value(spec: ModelSpec, design: CenteredDesign, w) -> float:
    w = _check_w(spec, design, w)
    r = design.y_c - design.R_c @ w
    b = w.sum() - spec.budget_target
    value = r @ r / (2.0 * spec.sigma2)
    if spec.Lambda:
        value += spec.Lambda * b * b
    return float(value)


def grad_f(spec: ModelSpec, design: CenteredDesign, w) -> np.ndarray:
    """Gradient of the data-fit plus soft-budget term."""
    w = _check_w(spec, design, w)
    r = design.R_c @ w - design.y_c
    g = design.R_c.T @ r / spec.sigma2
    if spec.Lambda:
        g += 2.0 * spec.Lambda * (w.sum() - spec.budget_target)
    return g


def f_value_and_grad(spec: ModelSpec, design: CenteredDesign, w) -> tuple[float, np.ndarray]:
    r = design.R_c @ w - design.y_c
    b = w.sum() - spec.budget_target
    value = r @ r / (2.0 * spec.sigma2)
    g = design.R_c.T @ r / spec.sigma2
    if spec.Lambda:
        value += spec.Lambda * b * b
        g += 2.0 * spec.Lambda * b
    return float(value), g


# -- nonsmooth part --------------------------------------------------------


def penalty(w, alpha) -> float:
    """Weighted l1 mass ``sum_j alpha_j |w_j|``."""
    return float(np.dot(alpha, np.abs(w)))


def _thresholds(t, theta, alpha, metric):
    c = t * theta * np.asarray(alpha, dtype=float)
    if metric is not None:
        c = c * metric
    return c


def soft_threshold(w, c):
    return np.sign(w) * np.maximum(np.abs(w) - c, 0.0)


def prox_weighted_l1(w, t: float, theta: float, alpha, metric=None) -> np.ndarray:
    """Componentwise soft-thresholding at ``t * theta * alpha_j``."""
    w = np.asarray(w, dtype=float)
    return soft_threshold(w, _thresholds(t, theta, alpha, metric))


def prox_nonneg_l1(w, t: float, theta: float, alpha, metric=None) -> np.ndarray:
    """Positive soft-thresholding: weighted l1 plus the indicator of ``w >= 0``."""
    w = np.asarray(w, dtype=float)
    return np.maximum(w - _thresholds(t, theta, alpha, metric), 0.0)


def _sumzero_multiplier(w, c, m) -> float:
    """Root ``mu`` of ``sum_j soft(w_j - mu m_j, c_j) = 0``.

    The sum is piecewise linear and nonincreasing in ``mu`` with kinks at
    ``(w_j -+ c_j) / m_j``; bisect over the sorted kinks, then solve the
    linear piece exactly.
    """
    upper = (w - c) / m  # coordinate positive for mu below this
    lower = (w + c) / m  # coordinate negative for mu above this

    def h(mu):
        return soft_threshold(w - mu * m, c).sum()

    kinks = np.sort(np.concatenate([upper, lower]))
    lo, hi = -1, kinks.size - 1
    # invariant: h(kinks[lo]) >= 0 (lo = -1 means -inf), h(kinks[hi + 1]) < 0
    if h(kinks[-1]) >= 0:
        lo = kinks.size - 1
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if h(kinks[mid]) >= 0:
                lo = mid
            else:
                hi = mid
    if lo >= 0 and h(kinks[lo]) == 0.0:
        return float(kinks[lo])
    if lo == -1:
        probe = kinks[0] - 1.0
    elif lo == kinks.size - 1:
        probe = kinks[-1] + 1.0
    else:
        probe = 0.5 * (kinks[lo] + kinks[lo + 1])
    pos = probe < upper
    neg = probe > lower
    slope = m[pos].sum() + m[neg].sum()
    const = (w[pos] - c[pos]).sum() + (w[neg] + c[neg]).sum()
    if slope == 0.0:
        return float(kinks[lo])
    return float(const / slope)


def _project_sumzero(v, m):
    return v - (v.sum() / m.sum()) * m


def prox_sumzero_l1(dw, t: float, kappa: float, alpha, iters: int = 100, metric=None,
                    method: str = "exact", tol: float = 1e-10) -> np.ndarray:
    """Prox of the weighted l1 penalty restricted to ``{z : 1'z = 0}``.

    ``method="exact"`` solves for the hyperplane multiplier directly.
    ``method="dykstra"`` alternates soft-thresholding and recentering for
    ``iters`` rounds and warns if the iterates have not settled to ``tol``.
    """
    dw = np.asarray(dw, dtype=float)
    m = np.ones_like(dw) if metric is None else np.asarray(metric, dtype=float)
    c = _thresholds(t, kappa, alpha, metric)
    if method == "exact":
        mu = _sumzero_multiplier(dw, c, m)
        z = soft_threshold(dw - mu * m, c)
        # remove rounding residue so the output lies on the hyperplane
        s = z.sum()
        if s != 0.0:
            nz = z != 0
            if nz.any():
                z[nz] -= s * m[nz] / m[nz].sum()
        return z
    if method != "dykstra":
        raise ValueError(f"unknown method {method!r}")
    x = dw.copy()
    p = np.zeros_like(dw)
    q = np.zeros_like(dw)
    y = _project_sumzero(x, m)
    change = math.inf
    for _ in range(int(iters)):
        y = _project_sumzero(x + p, m)
        p = x + p - y
        x_new = soft_threshold(y + q, c)
        q = y + q - x_new
        change = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        x = x_new
        if change <= tol:
            break
    if change > tol:
        warnings.warn(f"sum-zero prox not converged after {iters} rounds "
                      f"(last change {change:.3e})", ConvergenceWarning, stacklevel=2)
    return _project_sumzero(x, m)


def prox(kind: str, w, t: float, theta: float, alpha, metric=None) -> np.ndarray:
    if kind == "weighted_l1":
        return prox_weighted_l1(w, t, theta, alpha, metric)
    if kind == "nonneg_l1":
        return prox_nonneg_l1(w, t, theta, alpha, metric)
    if kind == "sumzero_l1":
        return prox_sumzero_l1(w, t, theta, alpha, metric=metric)
    raise ValueError(f"prox kind must be one of {PROX_KINDS}, got {kind!r}")


def composite_penalty(kind: str, w, theta: float, alpha, atol: float = 1e-9) -> float:
    """``theta * g(w)`` including the indicator part of ``kind`` (inf if violated)."""
    w = np.asarray(w, dtype=float)
    if kind == "nonneg_l1" and np.any(w < -atol):
        return math.inf
    if kind == "sumzero_l1" and abs(w.sum()) > atol * max(1.0, np.abs(w).sum()):
        return math.inf
    return theta * penalty(w, alpha)


# -- Moreau-Yosida envelope ------------------------------------------------


def envelope(spec: ModelSpec, w, lam: float | None = None, metric=None,
             kind: str | None = None) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient and prox point of the smoothed penalty ``(theta g)_lam``.

    Returns ``(value, grad, z)`` where ``z`` is the prox point. With a metric
    ``m`` the smoothing distance is ``sum (w - z)^2 / m``.
    """
    lam = spec.lambda_my if lam is None else lam
    kind = spec.prox_kind if kind is None else kind
    w = np.asarray(w, dtype=float)
    z = prox(kind, w, lam, spec.theta, spec.alpha, metric)
    d = w - z
    if metric is None:
        quad = d @ d
        grad = d / lam
    else:
        quad = d @ (d / metric)
        grad = d / (lam * metric)
    value = spec.theta * penalty(z, spec.alpha) + quad / (2.0 * lam)
    return float(value), grad, z


def my_envelope_grad(spec: ModelSpec, w, prox_kind: str | None = None) -> np.ndarray:
    """``(w - prox_{lambda theta g}(w)) / lambda`` with the mode's prox."""
    w = as_vector(w, "w", spec.p)
    return envelope(spec, w, kind=prox_kind)[1]


def smoothed_potential(spec: ModelSpec, design: CenteredDesign, w, lam: float | None = None,
                       metric=None) -> tuple[float, np.ndarray]:
    """Smoothed negative log-posterior ``f + (theta g)_lam`` and its gradient."""
    fv, fg = f_value_and_grad(spec, design, w)
    ev, eg, _ = envelope(spec, w, lam=lam, metric=metric)
    return fv + ev, fg + eg


# -- curvature -------------------------------------------------------------


def power_method(matvec: Callable[[np.ndarray], np.ndarray], n: int, tol: float = 1e-10,
                 max_iter: int = 10000, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative.
    Warns with :class:`ConvergenceWarning` and returns the best estimate if
    ``max_iter`` is reached.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    rq = 0.0
    for _ in range(int(max_iter)):
        Av = matvec(v)
        rq_new = float(v @ Av)
        norm = np.linalg.norm(Av)
        if norm == 0.0:
            return 0.0
        v = Av / norm
        if abs(rq_new - rq) <= tol * abs(rq_new):
            return rq_new
        rq = rq_new
    warnings.warn(f"power method not converged in {max_iter} iterations", ConvergenceWarning,
                  stacklevel=2)
    return rq


def hessian_matvec(R: np.ndarray, sigma2: float, Lambda: float, scale=None):
    """Matvec with ``S (R'R / sigma2 + 2 Lambda 11') S`` for diagonal ``S``."""
    def mv(v):
        u = v if scale is None else scale * v
        out = R.T @ (R @ u) / sigma2
        if Lambda:
            out = out + 2.0 * Lambda * u.sum()
        return out if scale is None else scale * out
    return mv


def hessian_lmax(R: np.ndarray, sigma2: float, Lambda: float, scale=None,
                 tol: float = 1e-10, max_iter: int = 10000) -> float:
    return power_method(hessian_matvec(R, sigma2, Lambda, scale), R.shape[1], tol, max_iter)


def power_method_Lf(design: CenteredDesign, spec: ModelSpec, tol: float = 1e-10,
                    max_iter: int = 10000) -> float:
    """Lipschitz constant of ``grad_f``: top eigenvalue of ``R_c'R_c/sigma2 + 2 Lambda 11'``."""
    return hessian_lmax(design.R_c, spec.sigma2, spec.Lambda, tol=tol, max_iter=max_iter)


@dataclass(frozen=True)
class Preconditioner:
    diag_P: np.ndarray
    L_pre: float

    def __post_init__(self):
        if not np.all(np.isfinite(self.diag_P)) or np.any(self.diag_P <= 0):
            raise ValueError("preconditioner entries must be finite and positive")

    @property
    def metric(self) -> np.ndarray:
        """Squared preconditioner ``P^2`` (the proposal covariance shape)."""
        return self.diag_P * self.diag_P

    @property
    def lambda_pre(self) -> float:
        return 1.0 / self.L_pre

    @property
    def baseline_step(self) -> float:
        return 0.9 / (2.0 * self.L_pre)


def build_preconditioner(design: CenteredDesign, spec: ModelSpec, budget_diag: str = "p",
                         tol: float = 1e-10, max_iter: int = 10000) -> Preconditioner:
    """Jacobi preconditioner ``P = D^{-1/2}`` and ``L_pre = lambda_max(P A P)``.

    In weights mode ``D_j = (R_c'R_c)_jj / sigma2 + 2 Lambda * k`` with
    ``k = p`` (``budget_diag="p"``) or ``k = 1`` (``budget_diag="1"``, the exact
    Hessian diagonal). Delta mode omits the budget term.
    """
    D = design.gram_diag / spec.sigma2
    if spec.mode == "weights":
        if budget_diag not in ("p", "1"):
            raise ValueError("budget_diag must be 'p' or '1'")
        k = design.p if budget_diag == "p" else 1
        D = D + 2.0 * spec.Lambda * k
    if np.any(D <= 0):
        raise ZeroDiagonal(f"zero curvature on coordinates {np.flatnonzero(D <= 0)[:10]}")
    P = 1.0 / np.sqrt(D)
    L_pre = hessian_lmax(design.R_c, spec.sigma2, spec.Lambda, scale=P, tol=tol,
                         max_iter=max_iter)
    return Preconditioner(P, L_pre)
