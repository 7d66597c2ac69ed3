"""Propose-Test-Release with a Laplace test and Gaussian releases.

The mechanism privately tests a safety margin (number of edits before the
robust statistic's local sensitivity exceeds the proposal ``tau``) and then
releases either the target function with large noise or the robust statistic
with small noise. The noisy margin is always part of the output.
"""
from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Protocol, Sequence, runtime_checkable

import numpy as np

from .errors import ConfigurationError, ParameterError, UnsupportedAuditError
from .noise import sample_gaussian_vec, sample_laplace

__all__ = [
    "PtrConfig",
    "SensitivityOracle",
    "Branch",
    "PtrOutcome",
    "AdjacentPair",
    "MomentEstimate",
    "run_ptr",
    "empirical_renyi_moment",
]


@dataclass(frozen=True)
class PtrConfig:
    """Noise scales and test parameters of one PTR invocation.

    ``sigma1`` is the Gaussian scale used when the test fails (target function),
    ``sigma2`` the scale used when it passes (robust statistic). Scales are in
    the same units as the queries; accounting routines normalise by the global
    sensitivity themselves.
    """

    sigma1: float
    sigma2: float
    tau: float
    b: float
    delta0: float

    def __post_init__(self):
        for name in ("sigma1", "sigma2", "tau", "b"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise ParameterError(f"{name} must be a positive finite number, got {value!r}")
        if self.sigma1 < self.sigma2:
            raise ConfigurationError(
                f"sigma1 ({self.sigma1}) must not be smaller than sigma2 ({self.sigma2})"
            )
        if not 0 < self.delta0 < 0.5:
            raise ParameterError(f"delta0 must lie in (0, 1/2), got {self.delta0}")

    @property
    def threshold(self) -> float:
        """Test threshold ``ln(1 / (2 delta0)) * b``; Pr[Lap(0, b) > threshold] = delta0."""
        return math.log(1.0 / (2.0 * self.delta0)) * self.b

    def normalized(self, gs: float = 1.0) -> tuple[float, float, float]:
        """Return ``(sigma1, sigma2, tau)`` divided by the global sensitivity ``gs``."""
        if not gs > 0:
            raise ParameterError(f"global sensitivity must be positive, got {gs}")
        return self.sigma1 / gs, self.sigma2 / gs, self.tau / gs

    def check_scale_relation(self, gs: float = 1.0, rtol: float = 1e-9) -> None:
        """Raise unless ``sigma1 = sigma2 / tau`` after normalising by ``gs``."""
        s1, s2, tau = self.normalized(gs)
        if tau > 1 + rtol:
            raise ConfigurationError(f"tau / GS = {tau} exceeds 1")
        expected = s2 / tau
        if abs(s1 - expected) > rtol * max(abs(s1), abs(expected)):
            raise ConfigurationError(
                f"normalised sigma1 = {s1} but sigma2 / tau = {expected}; the RDP bounds need them equal"
            )


@runtime_checkable
class SensitivityOracle(Protocol):
    """Target function, robust statistic and safety-margin computation.

    ``safety_margin`` returns the minimum number of add/remove edits that take
    the dataset to one whose ``f2`` local sensitivity exceeds ``tau``, or
    ``math.inf`` when no such dataset exists. It must change by at most one
    between adjacent datasets.
    """

    def eval_f1(self, dataset) -> np.ndarray: ...

    def eval_f2(self, dataset) -> np.ndarray: ...

    def safety_margin(self, dataset, tau: float) -> float: ...


class Branch(enum.Enum):
    LARGE_NOISE = "large"  # noisy margin <= threshold, target function released
    SMALL_NOISE = "small"  # noisy margin > threshold, robust statistic released


@dataclass(frozen=True)
class PtrOutcome:
    delta_hat: float
    branch: Branch
    release: np.ndarray


@dataclass(frozen=True)
class AdjacentPair:
    """Two datasets at add/remove distance one; ``dataset_s`` is the numerator side."""

    dataset_s: Any
    dataset_s_prime: Any


@dataclass(frozen=True)
class MomentEstimate:
    estimate: float
    stderr: float
    n_samples: int


def _branch_for(delta_hat: float, threshold: float) -> Branch:
    return Branch.LARGE_NOISE if delta_hat <= threshold else Branch.SMALL_NOISE


def run_ptr(dataset, config: PtrConfig, oracle: SensitivityOracle, rng: np.random.Generator) -> PtrOutcome:
    """Run one round of Propose-Test-Release on ``dataset``.

    An infinite margin (the proposal can never be violated) propagates to an
    infinite noisy margin, so the small-noise branch is always taken.
    """
    margin = float(oracle.safety_margin(dataset, config.tau))
    if margin < 0:
        raise ConfigurationError(f"safety margin must be nonnegative, got {margin}")
    noise = sample_laplace(0.0, config.b, rng)
    delta_hat = math.inf if math.isinf(margin) else margin + float(noise)
    branch = _branch_for(delta_hat, config.threshold)
    if branch is Branch.LARGE_NOISE:
        release = sample_gaussian_vec(oracle.eval_f1(dataset), config.sigma1, rng)
    else:
        release = sample_gaussian_vec(oracle.eval_f2(dataset), config.sigma2, rng)
    return PtrOutcome(delta_hat=delta_hat, branch=branch, release=np.atleast_1d(release))


def _scalar(value, what: str) -> float:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.size != 1:
        raise UnsupportedAuditError(f"audit supports scalar releases only; {what} has dimension {arr.size}")
    return float(arr[0])


def _log_laplace(s: np.ndarray, center: float, b: float) -> np.ndarray:
    return -np.abs(s - center) / b - math.log(2 * b)


def _log_normal(t: np.ndarray, mean: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    return -0.5 * ((t - mean) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)


def _audit_chunk(seed_seq, n, params):
    (margin_s, margin_sp, f1_s, f1_sp, f2_s, f2_sp, config, alpha) = params
    rng = np.random.default_rng(seed_seq)
    threshold = config.threshold
    if math.isinf(margin_sp):
        s = np.full(n, math.inf)
        log_lap = np.zeros(n)
    else:
        s = margin_sp + rng.laplace(0.0, config.b, size=n)
        log_lap = _log_laplace(s, margin_s, config.b) - _log_laplace(s, margin_sp, config.b)
    large = s <= threshold
    sigma = np.where(large, config.sigma1, config.sigma2)
    mean_sp = np.where(large, f1_sp, f2_sp)
    mean_s = np.where(large, f1_s, f2_s)
    t = mean_sp + sigma * rng.standard_normal(n)
    log_ratio = log_lap + _log_normal(t, mean_s, sigma) - _log_normal(t, mean_sp, sigma)
    w = np.exp(alpha * log_ratio)
    return float(w.sum()), float(np.square(w).sum())


def _audit_threads() -> int:
    try:
        return max(1, int(os.environ.get("PTR_ACCOUNTANT_THREADS", "1")))
    except ValueError:
        return 1


def empirical_renyi_moment(
    pair: AdjacentPair,
    config: PtrConfig,
    oracle: SensitivityOracle,
    alpha: float,
    n_samples: int,
    rng: np.random.Generator,
    chunk_size: int = 250_000,
) -> MomentEstimate:
    """Monte-Carlo estimate of ``E_{o ~ M(S')}[(mu_S(o) / mu_S'(o))^alpha]``.

    The joint output is (noisy margin, release). Both densities are evaluated
    exactly: a Laplace density for the margin times the Gaussian selected by
    the branch, which is the same function of the margin on both datasets.
    """
    if not alpha > 1:
        raise ParameterError(f"alpha must exceed 1, got {alpha}")
    if n_samples < 100_000:
        raise ParameterError(f"need at least 1e5 samples for an audit, got {n_samples}")
    s, sp = pair.dataset_s, pair.dataset_s_prime
    margin_s = float(oracle.safety_margin(s, config.tau))
    margin_sp = float(oracle.safety_margin(sp, config.tau))
    if math.isinf(margin_s) != math.isinf(margin_sp):
        raise UnsupportedAuditError("one margin is infinite and the other is not; datasets cannot be adjacent")
    params = (
        margin_s,
        margin_sp,
        _scalar(oracle.eval_f1(s), "f1(S)"),
        _scalar(oracle.eval_f1(sp), "f1(S')"),
        _scalar(oracle.eval_f2(s), "f2(S)"),
        _scalar(oracle.eval_f2(sp), "f2(S')"),
        config,
        float(alpha),
    )
    sizes = [chunk_size] * (n_samples // chunk_size)
    if n_samples % chunk_size:
        sizes.append(n_samples % chunk_size)
    seeds = np.random.SeedSequence(int(rng.integers(2**63))).spawn(len(sizes))
    with ThreadPoolExecutor(max_workers=_audit_threads()) as pool:
        parts = list(pool.map(lambda a: _audit_chunk(a[0], a[1], params), zip(seeds, sizes)))
    total = sum(p[0] for p in parts)
    total_sq = sum(p[1] for p in parts)
    mean = total / n_samples
    var = max(total_sq / n_samples - mean**2, 0.0)
    return MomentEstimate(estimate=mean, stderr=math.sqrt(var / n_samples), n_samples=n_samples)
