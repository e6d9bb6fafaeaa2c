"""Robust noise-variance estimate and the SAPG starting point."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import CenteredDesign
from .exceptions import DegenerateReference, NumericalFailure, ZeroVarianceWarning

C_MAD = 1.4826


@dataclass(frozen=True)
class NoiseEstimate:
    sigma2: float
    sigma_mad: float
    residuals: np.ndarray
    w_ols: np.ndarray


@dataclass(frozen=True)
class ThetaInit:
    theta0: float
    theta_min: float
    theta_max: float
    w_ref: np.ndarray

    @property
    def box(self) -> tuple[float, float]:
        return self.theta_min, self.theta_max


def ols_fit(design: CenteredDesign, ridge: float = 0.0) -> np.ndarray:
    """Minimum-norm least-squares coefficients of ``y_c`` on ``R_c``.

    With ``ridge > 0`` the ridge-regularised normal equations are solved instead.
    """
    R, y = design.R_c, design.y_c
    try:
        if ridge > 0:
            A = R.T @ R + ridge * np.eye(design.p)
            return np.linalg.solve(A, R.T @ y)
        rcond = np.finfo(float).eps * max(R.shape)
        w, *_ = np.linalg.lstsq(R, y, rcond=rcond)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"least-squares fit failed: {exc}") from exc
    return w


def mad_scale(residuals) -> float:
    """``1.4826 * median |r - median(r)|``."""
    r = np.asarray(residuals, dtype=float)
    return float(C_MAD * np.median(np.abs(r - np.median(r))))


def estimate_sigma2_mad(design: CenteredDesign, ridge: float = 0.0) -> NoiseEstimate:
    if design.T < 3:
        raise ValueError("noise estimation needs at least 3 observations")
    w = ols_fit(design, ridge)
    resid = design.y_c - design.R_c @ w
    s = mad_scale(resid)
    if s == 0.0:
        warnings.warn("MAD noise scale is zero; samplers need sigma2 > 0",
                      ZeroVarianceWarning, stacklevel=2)
    return NoiseEstimate(s * s, s, resid, w)


def budget_project(w) -> np.ndarray:
    """Equal shift of every coordinate so the weights sum to one."""
    w = np.asarray(w, dtype=float)
    return w - (w.sum() - 1.0) / w.shape[0]


def theta0_init(design: CenteredDesign, floor: float = 1e-6, w_ols=None) -> ThetaInit:
    """Starting shrinkage ``p / sum_j alpha_j |w_ref_j|`` and the box ``[theta0/10, 10 theta0]``."""
    if w_ols is None:
        w_ols = ols_fit(design)
    w_ref = budget_project(w_ols)
    mass = float(np.dot(design.alpha, np.abs(w_ref)))
    if not mass > 0.0 or not np.isfinite(mass):
        raise DegenerateReference("reference portfolio has no finite weighted l1 mass")
    theta0 = max(design.p / mass, floor)
    return ThetaInit(theta0, theta0 / 10.0, theta0 * 10.0, w_ref)
