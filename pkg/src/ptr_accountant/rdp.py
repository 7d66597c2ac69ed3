"""RDP curves, conversion to (eps, delta)-DP, composition and PTR bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ParameterError
from .noise import (
    gaussian_dp_eps,
    gaussian_rdp_eps,
    laplace_pure_dp_eps,
    laplace_rdp_eps,
)
from .ptr import PtrConfig

__all__ = [
    "DEFAULT_ALPHAS",
    "RdpCurve",
    "DpGuarantee",
    "moment",
    "moment_inverse",
    "ptr_direct_dp",
    "mixture_rdp_moment",
    "ptr_rdp_arms",
    "ptr_rdp",
    "optimal_delta0",
    "rdp_to_dp",
    "compose",
    "strong_composition",
]

# Dense near 1 where conversions often land, integers beyond.
DEFAULT_ALPHAS: tuple[float, ...] = tuple(
    [round(1 + k / 10, 10) for k in range(1, 91)] + [float(a) for a in range(11, 201)]
)


@dataclass(frozen=True)
class RdpCurve:
    """Finite set of (order, eps) points; never interpolated.

    ``eps_inf`` optionally records the pure-DP cap (the order-infinity value),
    which the black-box amplification bound consumes.
    """

    alphas: tuple[float, ...]
    eps: tuple[float, ...]
    eps_inf: float = math.inf

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        eps = tuple(float(e) for e in self.eps)
        if len(alphas) != len(eps):
            raise ValueError("alphas and eps must have equal length")
        if any(a <= 1 for a in alphas):
            raise DomainError("all Renyi orders must exceed 1")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise ValueError("alphas must be strictly increasing")
        if any(not math.isfinite(e) or e < 0 for e in eps):
            raise ValueError("eps values must be finite and nonnegative")
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "eps", eps)

    @classmethod
    def from_function(cls, fn: Callable[[float], float], alphas: Iterable[float] = DEFAULT_ALPHAS,
                      eps_inf: float = math.inf) -> "RdpCurve":
        alphas = tuple(alphas)
        return cls(alphas, tuple(fn(a) for a in alphas), eps_inf)

    def __len__(self) -> int:
        return len(self.alphas)

    def eps_at(self, alpha: float) -> float:
        """Value at a stored order; raises ``KeyError`` for any other order."""
        try:
            return self.eps[self.alphas.index(float(alpha))]
        except ValueError:
            raise KeyError(f"order {alpha} is not on this curve") from None

    def scaled(self, k: float) -> "RdpCurve":
        """Curve of ``k`` identical compositions."""
        return RdpCurve(self.alphas, tuple(k * e for e in self.eps), k * self.eps_inf)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.alphas), np.asarray(self.eps)


@dataclass(frozen=True)
class DpGuarantee:
    """An (eps, delta)-DP statement.

    Conversions from RDP also fill ``order`` (the minimising Renyi order) and
    the classic-rule value for comparison.
    """

    eps: float
    delta: float
    order: float | None = None
    eps_classic: float | None = None
    order_classic: float | None = None

    def __post_init__(self):
        if not self.eps >= 0:
            raise ParameterError(f"eps must be nonnegative, got {self.eps}")
        if not 0 <= self.delta < 1:
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")


def moment(eps, alpha):
    """``exp((alpha - 1) eps)``: the Renyi moment implied by an RDP guarantee."""
    return np.exp((np.asarray(alpha) - 1) * np.asarray(eps))


def moment_inverse(x, alpha):
    """Inverse of :func:`moment`, ``ln(x) / (alpha - 1)``."""
    return np.log(x) / (np.asarray(alpha) - 1)


def _log_expm1(x: float) -> float:
    # log(e^x - 1) for x > 0 without overflow
    if x > 30:
        return x + math.log1p(-math.exp(-x))
    return math.log(math.expm1(x))


def ptr_direct_dp(config: PtrConfig, delta: float, gs_f1: float = 1.0, gs_f2: float = 1.0) -> DpGuarantee:
    """(eps, delta)-DP of PTR by basic composition of the test and the release.

    Returns ``(1/b + sqrt(2 ln(1.25/delta)) / sigma1, delta0 + delta)`` with
    ``sigma1`` normalised by the common global sensitivity.
    """
    if not math.isclose(gs_f1, gs_f2, rel_tol=1e-12):
        raise ConfigurationError("the direct analysis needs GS(f1) == GS(f2)")
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    config.check_scale_relation(gs_f1)
    sigma1, _, _ = config.normalized(gs_f1)
    eps = laplace_pure_dp_eps(config.b) + gaussian_dp_eps(sigma1, delta)
    total_delta = config.delta0 + delta
    if total_delta >= 1:
        raise DomainError(f"delta0 + delta = {total_delta} is not below 1")
    return DpGuarantee(eps, total_delta)


def _log_mixture_moment(eps1: float, eps2: float, delta0: float, alpha: float) -> float:
    k = alpha - 1
    if delta0 == 0:
        return k * eps1
    if delta0 == 1:
        return k * eps2
    return float(np.logaddexp(math.log1p(-delta0) + k * eps1, math.log(delta0) + k * eps2))


def mixture_rdp_moment(eps1: float, eps2: float, delta0: float, alpha: float) -> float:
    """``(1 - delta0) f(eps1) + delta0 f(eps2)`` with ``f(eps) = exp((alpha-1) eps)``."""
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha}")
    if not 0 <= delta0 <= 1:
        raise ParameterError(f"delta0 must lie in [0, 1], got {delta0}")
    return math.exp(_log_mixture_moment(eps1, eps2, delta0, alpha))


def ptr_rdp_arms(sigma1: float, sigma2: float, b: float, delta0: float, alpha: float) -> tuple[float, float]:
    """The two candidates whose maximum bounds the RDP of PTR.

    Scales must already be normalised (global sensitivity 1). The first arm is
    the mixture of the two Gaussian releases weighted by the test's failure
    probability; the second composes the large-noise release with the test.
    """
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha}")
    if not 0 <= delta0 <= 1:
        raise ParameterError(f"delta0 must lie in [0, 1], got {delta0}")
    e1 = gaussian_rdp_eps(sigma1, alpha)
    e2 = gaussian_rdp_eps(sigma2, alpha)
    k = alpha - 1
    gap = k * (e2 - e1)
    if gap < 700:
        # relative form keeps equal arms equal to the last bit
        arm1 = e1 + math.log1p(delta0 * math.expm1(gap)) / k
    else:
        arm1 = _log_mixture_moment(e1, e2, delta0, alpha) / k
    arm2 = e1 + laplace_rdp_eps(b, alpha)
    return arm1, arm2


def ptr_rdp(config: PtrConfig, alpha: float, gs: float = 1.0) -> float:
    """RDP of PTR at order ``alpha`` (the max of :func:`ptr_rdp_arms`)."""
    config.check_scale_relation(gs)
    s1, s2, _ = config.normalized(gs)
    return max(ptr_rdp_arms(s1, s2, config.b, config.delta0, alpha))


def optimal_delta0(sigma1: float, sigma2: float, b: float, alpha: float, clamp: bool = True) -> float:
    """Failure probability at which both arms of the PTR bound coincide.

    With ``clamp`` the result is forced into the open interval (0, 1/2) that
    :class:`PtrConfig` accepts; pass ``clamp=False`` for the raw root.
    """
    if not sigma1 > sigma2 > 0:
        raise ConfigurationError(f"need sigma1 > sigma2 > 0, got {sigma1}, {sigma2}")
    if not b > 0:
        raise ParameterError(f"b must be positive, got {b}")
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha}")
    k = alpha - 1
    lap = k * laplace_rdp_eps(b, alpha)
    gap = k * (gaussian_rdp_eps(sigma2, alpha) - gaussian_rdp_eps(sigma1, alpha))
    # f(e1) cancels between numerator and denominator
    raw = math.exp(_log_expm1(lap) - _log_expm1(gap)) if lap > 0 else 0.0
    if not clamp:
        return raw
    return min(max(raw, np.finfo(float).tiny), math.nextafter(0.5, 0.0))


def rdp_to_dp(curve: RdpCurve, delta: float) -> DpGuarantee:
    """Convert an RDP curve to (eps, delta)-DP, minimising over stored orders.

    The returned eps uses the hypothesis-testing conversion
    ``eps(a) + ln((a-1)/a) - (ln delta + ln a) / (a-1)``; the classic rule
    ``eps(a) + ln(1/delta) / (a-1)`` is reported alongside and is never smaller.
    """
    if len(curve) == 0:
        raise ValueError("cannot convert an empty RDP curve")
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    alphas, eps = curve.as_arrays()
    if not eps.any():
        # zero divergence at any order means identical output distributions
        return DpGuarantee(0.0, min(delta, math.nextafter(1.0, 0.0)), float(alphas[0]), 0.0, float(alphas[0]))
    log_delta = math.log(delta)
    classic = eps - log_delta / (alphas - 1)
    tight = eps + np.log1p(-1 / alphas) - (log_delta + np.log(alphas)) / (alphas - 1)
    tight = np.minimum(tight, classic)
    i = int(np.argmin(tight))
    j = int(np.argmin(classic))
    return DpGuarantee(
        eps=max(float(tight[i]), 0.0),
        delta=delta if delta < 1 else math.nextafter(1.0, 0.0),
        order=float(alphas[i]),
        eps_classic=max(float(classic[j]), 0.0),
        order_classic=float(alphas[j]),
    )


def compose(curves: Sequence[RdpCurve]) -> RdpCurve:
    """Pointwise sum of curves sharing one order grid."""
    curves = list(curves)
    if not curves:
        raise ValueError("nothing to compose")
    alphas = curves[0].alphas
    for c in curves[1:]:
        if c.alphas != alphas:
            raise ValueError("curves must share an identical order grid")
    eps = np.sum([c.eps for c in curves], axis=0)
    return RdpCurve(alphas, tuple(eps.tolist()), sum(c.eps_inf for c in curves))


def strong_composition(eps: float, delta: float, k: int, delta_prime: float) -> DpGuarantee:
    """k-fold composition of an (eps, delta)-DP mechanism.

    Takes the smallest of the naive bound and the two closed-form candidates
    of the optimal-composition analysis.
    """
    if eps < 0:
        raise ParameterError(f"eps must be nonnegative, got {eps}")
    if k < 1 or int(k) != k:
        raise ParameterError(f"k must be a positive integer, got {k}")
    if not 0 <= delta < 1 or not 0 < delta_prime < 1:
        raise DomainError("delta must lie in [0, 1) and delta_prime in (0, 1)")
    if eps == 0:
        total = 0.0
    else:
        drift = k * eps * math.tanh(eps / 2)  # k eps (e^eps - 1) / (e^eps + 1)
        total = min(
            k * eps,
            drift + eps * math.sqrt(2 * k * math.log(1 / delta_prime)),
            drift + eps * math.sqrt(2 * k * math.log(math.e + math.sqrt(k) * eps / delta_prime)),
        )
    total_delta = k * delta + delta_prime
    if total_delta >= 1:
        raise DomainError(f"composed delta {total_delta} is not below 1")
    return DpGuarantee(total, total_delta)
