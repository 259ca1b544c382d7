"""
Robust Estimators
=================
Tukey bisquare objective, its derivative and weights, plus the two scale
estimators used by the pose optimizer.

All functions accept scalars or numpy arrays and return the same shape.
"""

import numpy as np

from errors import EmptyResiduals
from parameter_registry import MAD_CONSISTENCY, S_SCALE_NORMALIZER


def _check_c(c: float) -> None:
    if c <= 0:
        raise ValueError("Tuning constant c must be positive")


def tukey_rho(u, c: float):
    """u^2/2 - u^4/(2c^2) + u^6/(6c^4) for |u| <= c, else c^2/6."""
    _check_c(c)
    u = np.asarray(u, dtype=float)
    u2 = u * u
    inside = u2 / 2.0 - u2 * u2 / (2.0 * c ** 2) + u2 ** 3 / (6.0 * c ** 4)
    return np.where(np.abs(u) <= c, inside, c * c / 6.0)


def tukey_psi(u, c: float):
    """Derivative of tukey_rho: u (1 - (u/c)^2)^2 inside the window, 0 outside."""
    _check_c(c)
    u = np.asarray(u, dtype=float)
    return u * tukey_weight(u, c)


def tukey_weight(u, c: float):
    """(1 - (u/c)^2)^2 for |u| <= c, else 0."""
    _check_c(c)
    u = np.asarray(u, dtype=float)
    inside = (1.0 - (u / c) ** 2) ** 2
    return np.where(np.abs(u) <= c, inside, 0.0)


def s_weight(u, c: float):
    """rho(u)/u^2, with the limit 1/2 at u = 0."""
    _check_c(c)
    u = np.asarray(u, dtype=float)
    u2 = u * u
    safe = np.where(u2 > 0, u2, 1.0)
    return np.where(u2 > 0, tukey_rho(u, c) / safe, 0.5)


def mad_scale(residuals, floor: float = 0.0) -> float:
    """
    median|d - median(d)| / 0.6745, clamped below by floor.

    Raises:
        EmptyResiduals: If residuals is empty
    """
    d = np.asarray(residuals, dtype=float).ravel()
    if d.size == 0:
        raise EmptyResiduals("Cannot estimate a scale from no residuals")
    mad = float(np.median(np.abs(d - np.median(d))))
    return max(mad / MAD_CONSISTENCY, floor)


def s_scale_update(weights, residuals, count: int = None, floor: float = 0.0) -> float:
    """
    sqrt(sum(w * d^2) / (0.199 * count)), clamped below by floor.

    count defaults to the number of residuals (one term per assignment).

    Raises:
        EmptyResiduals: If residuals is empty
    """
    w = np.asarray(weights, dtype=float).ravel()
    d = np.asarray(residuals, dtype=float).ravel()
    if d.size == 0:
        raise EmptyResiduals("Cannot estimate a scale from no residuals")
    if w.shape != d.shape:
        raise ValueError("weights and residuals must have equal length")
    count = d.size if count is None else count
    sigma = float(np.sqrt(np.sum(w * d * d) / (S_SCALE_NORMALIZER * count)))
    return max(sigma, floor)
