"""Laplace and Gaussian primitives: samplers plus their DP / RDP curves.

All analytic functions take a noise-to-sensitivity ratio (noise scale divided
by the global sensitivity of the query), so callers normalise once.
Logarithms are natural.
"""
from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "OutsideClassicRegimeWarning",
    "sample_laplace",
    "sample_gaussian_vec",
    "laplace_pure_dp_eps",
    "laplace_rdp_eps",
    "gaussian_rdp_eps",
    "gaussian_dp_eps",
]


class OutsideClassicRegimeWarning(UserWarning):
    """The classic Gaussian bound was evaluated where it yields eps > 1."""


def _positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0 or math.isnan(value):
        raise ParameterError(f"{name} must be positive, got {value}")
    return value


def _order(alpha: float) -> float:
    alpha = float(alpha)
    if not alpha > 1:
        raise DomainError(f"Renyi order must exceed 1, got {alpha}")
    return alpha


def sample_laplace(center, b: float, rng: np.random.Generator, size=None):
    """Draw from Lap(center, b), density exp(-|x - center| / b) / (2b)."""
    b = _positive("Laplace scale b", b)
    return rng.laplace(loc=center, scale=b, size=size)


def sample_gaussian_vec(center, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Return ``center + N(0, sigma^2 I)`` with the dimension of ``center``."""
    sigma = _positive("Gaussian scale sigma", sigma)
    center = np.asarray(center, dtype=float)
    return center + sigma * rng.standard_normal(center.shape)


def laplace_pure_dp_eps(b_tilde: float) -> float:
    """Pure-DP epsilon of the Laplace mechanism, ``1 / b_tilde``."""
    return 1.0 / _positive("b_tilde", b_tilde)


def laplace_rdp_eps(b_tilde: float, alpha: float) -> float:
    """Renyi-DP curve of the Laplace mechanism at order ``alpha``.

    Evaluated as a log-sum-exp of the two exponential terms so that orders in
    the hundreds (or far beyond) do not overflow.
    """
    b_tilde = _positive("b_tilde", b_tilde)
    alpha = _order(alpha)
    if math.isinf(alpha):
        return 1.0 / b_tilde
    log_a = math.log(alpha) - math.log(2 * alpha - 1) + (alpha - 1) / b_tilde
    log_b = math.log(alpha - 1) - math.log(2 * alpha - 1) - alpha / b_tilde
    return float(np.logaddexp(log_a, log_b)) / (alpha - 1)


def gaussian_rdp_eps(sigma_tilde: float, alpha: float) -> float:
    """Renyi-DP curve of the Gaussian mechanism, ``alpha / (2 sigma_tilde^2)``."""
    sigma_tilde = _positive("sigma_tilde", sigma_tilde)
    alpha = _order(alpha)
    return alpha / (2.0 * sigma_tilde**2)


def gaussian_dp_eps(sigma_tilde: float, delta: float) -> float:
    """Classic (eps, delta) bound ``sqrt(2 ln(1.25/delta)) / sigma_tilde``.

    The classic analysis only certifies eps <= 1; larger results are still
    returned but trigger :class:`OutsideClassicRegimeWarning`.
    """
    sigma_tilde = _positive("sigma_tilde", sigma_tilde)
    delta = float(delta)
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    eps = math.sqrt(2.0 * math.log(1.25 / delta)) / sigma_tilde
    if eps > 1:
        warnings.warn(
            f"classic Gaussian bound gives eps={eps:.4g} > 1; outside its proven range",
            OutsideClassicRegimeWarning,
            stacklevel=2,
        )
    return eps
