"""Empirical-Bayes shrinkage calibration by stochastic approximation.

A single MYULA step refreshes the chain at the current shrinkage level, then
``eta = log(theta)`` moves along the noisy score ``d - theta * g(w)`` and is
clipped back into the admissible box. The estimate is a weighted tail
average of the ``eta`` path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .data import CenteredDesign
from .exceptions import ClippingWarning, EmptyTail, NonFiniteState
from .model import ModelSpec, envelope, grad_f, penalty, prox
from .noise import ThetaInit


def make_rng(seed) -> np.random.Generator:
    """PCG64 generator from an int, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class SapgConfig:
    n_iter: int = 20000
    n_burn: int = 4000
    c_step: float = 1.0
    k0: float = 200.0
    pr_exponent: float = 1.0
    warmstart_iters: int = 1000
    seed: int | None = 0
    step: float | None = None  # MYULA step; None -> 0.9 / (2 L_f)
    clip_warn_fraction: float = 0.5

    def __post_init__(self):
        if not 0 <= self.n_burn < self.n_iter:
            raise ValueError("need 0 <= n_burn < n_iter")
        if self.c_step <= 0 or self.k0 <= 0:
            raise ValueError("c_step and k0 must be positive")
        if self.pr_exponent < 0:
            raise ValueError("pr_exponent must be >= 0")
        if self.warmstart_iters < 0:
            raise ValueError("warmstart_iters must be >= 0")


@dataclass
class SapgResult:
    theta_star: float
    eta_trace: np.ndarray
    final_state: np.ndarray
    clipped_fraction: float
    score_trace: np.ndarray = field(default=None, repr=False)
    step: float = float("nan")
    box: tuple = (float("nan"), float("nan"))

    @property
    def theta_trace(self) -> np.ndarray:
        return np.exp(self.eta_trace)

    def to_csv(self, path) -> Path:
        """Write ``iter, theta, score`` rows."""
        path = Path(path)
        frame = pd.DataFrame({
            "iter": np.arange(1, self.eta_trace.size + 1),
            "theta": self.theta_trace,
            "score": self.score_trace,
        })
        frame.to_csv(path, index=False, float_format="%.17g")
        return path


def myula_step(state, spec: ModelSpec, design: CenteredDesign, delta: float,
               rng: np.random.Generator, noise=None) -> np.ndarray:
    """One MYULA move on the smoothed posterior.

    ``noise`` overrides the Gaussian innovation (useful for testing the drift).
    """
    w = np.asarray(state, dtype=float)
    _, env_grad, _ = envelope(spec, w)
    drift = grad_f(spec, design, w) + env_grad
    xi = rng.standard_normal(w.shape[0]) if noise is None else noise
    out = w - delta * drift + math.sqrt(2.0 * delta) * xi
    if not np.all(np.isfinite(out)):
        raise NonFiniteState("MYULA state diverged; reduce the step")
    return out


def polyak_ruppert(eta_trace, k_burn: int, q: float = 1.0) -> float:
    """Tail average of ``eta_trace[k_burn:]`` with weights ``1, 2^q, 3^q, ...``."""
    eta = np.asarray(eta_trace, dtype=float)
    tail = eta[int(k_burn):]
    if tail.size == 0:
        raise EmptyTail(f"no iterates after burn-in {k_burn} (trace length {eta.size})")
    weights = np.arange(1, tail.size + 1, dtype=float) ** q
    return float(np.dot(weights, tail) / weights.sum())


def score_dimension(spec: ModelSpec) -> int:
    return spec.p if spec.mode == "weights" else spec.p - 1


def _prior_mass(spec: ModelSpec, w, theta: float) -> float:
    if spec.mode == "delta":
        u = prox(spec.prox_kind, w, spec.lambda_my, theta, spec.alpha)
        return penalty(u, spec.alpha)
    return penalty(w, spec.alpha)


def run_sapg(design: CenteredDesign, spec0: ModelSpec, init: ThetaInit, cfg: SapgConfig,
             w_init=None, rng=None) -> SapgResult:
    """Calibrate the shrinkage level; returns the averaged ``theta_star``.

    The chain starts from ``w_init`` (default: ``init.w_ref`` for weights,
    zeros for increments) and is warmed up at ``theta0`` before updates begin.
    """
    theta_min, theta_max = init.theta_min, init.theta_max
    if not theta_min <= init.theta0 <= theta_max:
        raise ValueError("theta0 must lie inside the admissible box")
    rng = make_rng(cfg.seed) if rng is None else rng
    delta = cfg.step if cfg.step is not None else 0.9 / (2.0 * spec0.L_f)
    if w_init is None:
        w_init = init.w_ref if spec0.mode == "weights" else np.zeros(spec0.p)
    w = np.array(w_init, dtype=float)

    d = score_dimension(spec0)
    eta_lo, eta_hi = math.log(theta_min), math.log(theta_max)
    eta = math.log(init.theta0)
    spec = spec0.with_theta(init.theta0)
    for _ in range(cfg.warmstart_iters):
        w = myula_step(w, spec, design, delta, rng)

    eta_trace = np.empty(cfg.n_iter)
    score_trace = np.empty(cfg.n_iter)
    n_clipped = 0
    for k in range(cfg.n_iter):
        theta = math.exp(eta)
        spec = spec0.with_theta(theta)
        w = myula_step(w, spec, design, delta, rng)
        score = d - theta * _prior_mass(spec, w, theta)
        step = cfg.c_step / (k + cfg.k0)
        eta_new = eta + step * score
        if eta_new < eta_lo or eta_new > eta_hi:
            n_clipped += 1
            eta_new = min(max(eta_new, eta_lo), eta_hi)
        eta = eta_new
        eta_trace[k] = eta
        score_trace[k] = score

    clipped = n_clipped / cfg.n_iter
    if clipped > cfg.clip_warn_fraction:
        warnings.warn(f"{clipped:.0%} of SAPG updates were clipped to the box "
                      f"[{theta_min:.4g}, {theta_max:.4g}]", ClippingWarning, stacklevel=2)
    theta_star = math.exp(polyak_ruppert(eta_trace, cfg.n_burn, cfg.pr_exponent))
    theta_star = min(max(theta_star, theta_min), theta_max)
    return SapgResult(theta_star, eta_trace, w, clipped, score_trace, delta,
                      (theta_min, theta_max))
