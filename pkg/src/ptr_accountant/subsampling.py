"""Privacy amplification of PTR under Poisson subsampling.

The white-box bound works with moments of the likelihood ratio between the
Laplace test output with and without the sampled point:
``mu0 = Lap(0, b)`` and ``mu = (1-q) Lap(0, b) + q Lap(1, b)``, whose ratio is
``r(s) = (1-q) + q exp((|s| - |s-1|) / b)``. The ratio is constant outside
[0, 1], so only that segment needs numerical integration.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import BoundNotApplicableError, DomainError, ParameterError, QuadratureError
from .ptr import PtrConfig
from .rdp import RdpCurve, _log_expm1, ptr_rdp

__all__ = [
    "SubsampleParams",
    "MixtureMomentQuery",
    "Constraint",
    "ConditionReport",
    "mixture_moment_R",
    "mixture_moment_Rtilde",
    "check_conditions",
    "subsampled_ptr_rdp",
    "blackbox_subsampled_rdp",
    "subsampled_rdp_lower_bound",
    "ptr_integer_curve",
    "subsampled_ptr_curve",
]

_EPSREL = 1e-12


@dataclass(frozen=True)
class SubsampleParams:
    q: float
    config: PtrConfig
    gs: float = 1.0

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise ParameterError(f"sampling probability q must lie in [0, 1), got {self.q}")
        if not self.gs > 0:
            raise ParameterError(f"global sensitivity must be positive, got {self.gs}")


@dataclass(frozen=True)
class MixtureMomentQuery:
    q: float
    b: float
    order: float

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise ParameterError(f"q must lie in [0, 1), got {self.q}")
        if not self.b > 0:
            raise ParameterError(f"b must be positive, got {self.b}")
        if not math.isfinite(self.order):
            raise ParameterError(f"order must be finite, got {self.order}")


def _log_ratio(q: float, u):
    # log r where r = (1-q) + q e^u
    return np.log1p(q * np.expm1(u))


def _quad(fn, what: str) -> float:
    # The R - 1 integrand changes sign, so a purely relative target can be
    # unreachable; allow absolute error at rounding level of the integrand.
    scale = max(abs(fn(0.0)), abs(fn(0.5)), abs(fn(1.0)))
    epsabs = 1e-15 * scale
    value, abserr, *rest = integrate.quad(fn, 0.0, 1.0, epsabs=epsabs, epsrel=_EPSREL, limit=200, full_output=1)
    if len(rest) > 1 and abserr > max(1e-10 * abs(value), 1e-13 * scale):
        raise QuadratureError(f"quadrature for {what} did not converge: {rest[1]}")
    return value


@functools.lru_cache(maxsize=4096)
def _moment_minus_one(q: float, b: float, order: float) -> float:
    """``E_{mu0}[r^order] - 1`` without cancellation."""
    if q == 0 or order == 0 or order == 1:
        return 0.0
    lo = math.expm1(order * _log_ratio(q, -1.0 / b))
    hi = math.expm1(order * _log_ratio(q, 1.0 / b))
    tail = 0.5 * lo + 0.5 * math.exp(-1.0 / b) * hi

    def middle(s):
        return math.expm1(order * _log_ratio(q, (2 * s - 1) / b)) * math.exp(-s / b) / (2 * b)

    return tail + _quad(middle, f"R(q={q}, b={b}, order={order})")


@functools.lru_cache(maxsize=4096)
def _second_difference(q: float, b: float, order: float) -> float:
    """``E_{mu0}[r^order (r - (1-q))^2]``, i.e. ``R(a) - 2(1-q)R(a-1) + (1-q)^2 R(a-2)`` at ``a = order + 2``."""
    if q == 0:
        return 0.0

    def weight(u):
        return math.exp(order * _log_ratio(q, u) + 2 * math.log(q) + 2 * u)

    tail = 0.5 * weight(-1.0 / b) + 0.5 * math.exp(-1.0 / b) * weight(1.0 / b)

    def middle(s):
        return weight((2 * s - 1) / b) * math.exp(-s / b) / (2 * b)

    return tail + _quad(middle, f"second difference (q={q}, b={b}, order={order})")


def mixture_moment_R(query: MixtureMomentQuery) -> float:
    """``E_{s ~ mu0}[(mu(s) / mu0(s))^order]`` for any real order."""
    return 1.0 + _moment_minus_one(float(query.q), float(query.b), float(query.order))


def mixture_moment_Rtilde(query: MixtureMomentQuery) -> float:
    """``E_{s ~ mu}[(mu0(s) / mu(s))^order]``, evaluated as R at order ``1 - order``."""
    return 1.0 + _moment_minus_one(float(query.q), float(query.b), 1.0 - float(query.order))


class Constraint(enum.Enum):
    NONE = "none"
    Q_BOUND = "q_bound"
    SIGMA_ORDER = "sigma_order"
    SIGMA_FLOOR = "sigma_floor"
    ALPHA_FIRST = "alpha_first"
    ALPHA_SECOND = "alpha_second"


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the validity check for the white-box bound.

    When every condition holds, ``binding_constraint`` names the order
    constraint with the smaller admissible maximum; otherwise it names the
    first violated condition.
    """

    satisfied: bool
    L: float
    q_prime: float
    binding_constraint: Constraint
    q_max: float
    alpha_max_first: float
    alpha_max_second: float


def check_conditions(params: SubsampleParams, alpha: float) -> ConditionReport:
    if not alpha > 1:
        raise DomainError(f"alpha must exceed 1, got {alpha}")
    q = params.q
    s1, s2, _ = params.config.normalized(params.gs)
    b = params.config.b
    e = math.exp(-1.0 / b)
    q_max = e / (4 + e)
    if q == 0:
        q_prime, L = 0.0, math.inf
        first = second = math.inf
    else:
        q_prime = q / (q + (1 - q) * e)
        L = math.log1p(1.0 / (q_prime * (alpha - 1)))
        log_s2 = math.log(s2)
        first = s2**2 * L / 2 - 2 * log_s2
        # L + ln(q' alpha) = ln(q' alpha + alpha / (alpha - 1)) > 0
        denom = math.log(q_prime * alpha + alpha / (alpha - 1)) + 1 / (2 * s2**2)
        second = (s2**2 * L**2 / 2 - math.log(5) - 2 * log_s2) / denom

    if q > q_max:
        binding = Constraint.Q_BOUND
    elif s1 < s2:
        binding = Constraint.SIGMA_ORDER
    elif s2 < 4:
        binding = Constraint.SIGMA_FLOOR
    elif alpha > first:
        binding = Constraint.ALPHA_FIRST
    elif alpha > second:
        binding = Constraint.ALPHA_SECOND
    else:
        binding = None
    satisfied = binding is None
    if satisfied:
        if q == 0:
            binding = Constraint.NONE
        else:
            binding = Constraint.ALPHA_FIRST if first <= second else Constraint.ALPHA_SECOND
    return ConditionReport(satisfied, L, q_prime, binding, q_max, first, second)


def subsampled_ptr_rdp(params: SubsampleParams, alpha: float) -> float:
    """White-box RDP of Poisson-subsampled PTR at order ``alpha``.

    Raises :class:`BoundNotApplicableError` when the validity conditions fail.
    """
    report = check_conditions(params, alpha)
    if not report.satisfied:
        raise BoundNotApplicableError(
            f"white-box bound does not apply at alpha={alpha}: {report.binding_constraint.value} violated"
        )
    config = params.config
    config.check_scale_relation(params.gs)
    q = params.q
    if q == 0:
        return 0.0
    s1, s2, _ = config.normalized(params.gs)
    b = config.b
    d0 = config.delta0
    c = 2 * alpha * (alpha - 1) / s1**2
    excess0 = 2 * q**2 * alpha * (alpha - 1) * ((1 - d0) / s1**2 + d0 / s2**2)
    excess1 = _moment_minus_one(q, b, alpha) + c * _second_difference(q, b, alpha - 2)
    excess2 = _moment_minus_one(q, b, 1 - alpha) + c * _second_difference(q, b, -alpha - 1)
    return math.log1p(max(excess0, excess1, excess2)) / (alpha - 1)


def _integer_order(alpha) -> int:
    if int(alpha) != alpha or alpha < 2:
        raise DomainError(f"black-box bounds need an integer order >= 2, got {alpha}")
    return int(alpha)


def _base_eps(base: RdpCurve, j: int) -> float:
    try:
        return base.eps_at(j)
    except KeyError:
        raise ValueError(f"base curve lacks eps({j}), required for this order") from None


def _log_binom(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def blackbox_subsampled_rdp(base: RdpCurve, q: float, alpha: int) -> float:
    """Generic upper bound for a Poisson-subsampled mechanism from its RDP curve.

    Uses ``eps(j)`` at integers ``2..alpha`` and the pure-DP cap ``base.eps_inf``
    (infinite when the mechanism has no pure-DP guarantee).
    """
    alpha = _integer_order(alpha)
    if not 0 <= q < 1:
        raise ParameterError(f"q must lie in [0, 1), got {q}")
    eps2 = _base_eps(base, 2)
    eps_js = [_base_eps(base, j) for j in range(3, alpha + 1)]
    if q == 0:
        return 0.0
    log_q = math.log(q)
    log_two = math.log(2.0)
    log_cap = _log_expm1(base.eps_inf) if math.isfinite(base.eps_inf) and base.eps_inf > 0 else None
    if base.eps_inf == 0:
        log_cap = -math.inf
    log_em1 = _log_expm1(eps2) if eps2 > 0 else -math.inf
    inner = log_two if log_cap is None else min(log_two, 2 * log_cap)
    second = min(math.log(4.0) + log_em1, eps2 + inner)
    terms = [0.0, 2 * log_q + _log_binom(alpha, 2) + second]
    for j, eps_j in zip(range(3, alpha + 1), eps_js):
        cap = log_two if log_cap is None else min(log_two, j * log_cap)
        terms.append(j * log_q + _log_binom(alpha, j) + (j - 1) * eps_j + cap)
    return float(np.logaddexp.reduce(terms)) / (alpha - 1)


def subsampled_rdp_lower_bound(base: RdpCurve, q: float, alpha: int) -> float:
    """Lower bound on the RDP of a Poisson-subsampled mechanism.

    Attained by the subsampled Gaussian, so it doubles as the exact integer-order
    accountant for plain DP-SGD when ``base`` is a Gaussian curve.
    """
    alpha = _integer_order(alpha)
    if not 0 <= q < 1:
        raise ParameterError(f"q must lie in [0, 1), got {q}")
    eps_js = [_base_eps(base, j) for j in range(2, alpha + 1)]
    if q == 0:
        return 0.0
    log_q, log_p = math.log(q), math.log1p(-q)
    terms = [(alpha - 1) * log_p + math.log1p((alpha - 1) * q)]
    for j, eps_j in zip(range(2, alpha + 1), eps_js):
        terms.append(_log_binom(alpha, j) + (alpha - j) * log_p + j * log_q + (j - 1) * eps_j)
    return max(float(np.logaddexp.reduce(terms)), 0.0) / (alpha - 1)


def ptr_integer_curve(config: PtrConfig, max_order: int, gs: float = 1.0) -> RdpCurve:
    """Unsubsampled PTR curve at integer orders ``2..max_order`` (no pure-DP cap)."""
    orders = range(2, max_order + 1)
    return RdpCurve(tuple(float(a) for a in orders), tuple(ptr_rdp(config, a, gs) for a in orders))


def subsampled_ptr_curve(params: SubsampleParams, alphas, fallback: bool = True) -> tuple[RdpCurve, tuple[str, ...]]:
    """Per-step RDP curve of subsampled PTR over ``alphas``.

    Uses the white-box bound where its conditions hold. Elsewhere, with
    ``fallback``, the black-box bound at ``ceil(alpha)`` is used (RDP is
    nondecreasing in the order, so this stays a valid bound); without it such
    orders are dropped. Returns the curve and the method used at each order.
    """
    alphas = [float(a) for a in alphas]
    base = ptr_integer_curve(params.config, max(2, math.ceil(max(alphas))), params.gs)
    kept, eps, methods = [], [], []
    for a in alphas:
        if check_conditions(params, a).satisfied:
            kept.append(a)
            eps.append(subsampled_ptr_rdp(params, a))
            methods.append("whitebox")
        elif fallback:
            kept.append(a)
            eps.append(blackbox_subsampled_rdp(base, params.q, max(2, math.ceil(a))))
            methods.append("blackbox")
    return RdpCurve(tuple(kept), tuple(eps)), tuple(methods)
