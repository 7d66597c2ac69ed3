"""Norm-trimmed sum of clipped vectors and its local-sensitivity profile."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

__all__ = [
    "GradientBatch",
    "SensitivityProfile",
    "clip",
    "tsum",
    "local_sensitivity_r",
    "local_sensitivity_profile",
    "safety_margin",
    "TrimmedSumOracle",
]


def clip(vector, R: float) -> np.ndarray:
    """Scale ``vector`` down to l2 norm at most ``R``."""
    if not R > 0:
        raise ParameterError(f"clip bound must be positive, got {R}")
    v = np.asarray(vector, dtype=float)
    norm = float(np.linalg.norm(v))
    if norm <= R:
        return v.copy()
    return v * (R / norm)


class GradientBatch:
    """A batch of d-dimensional vectors, each clipped to norm ``clip_bound_R``.

    Rows keep their insertion order; ``order`` gives the stable ascending-norm
    permutation used by the trimmed sum.
    """

    def __init__(self, vectors, clip_bound_R: float, *, dim: int | None = None):
        if not clip_bound_R > 0:
            raise ParameterError(f"clip bound must be positive, got {clip_bound_R}")
        arr = np.asarray(vectors, dtype=float)
        if arr.size == 0:
            arr = np.zeros((0, dim or 1))
        elif arr.ndim == 1:
            arr = arr[:, None]
        elif arr.ndim != 2:
            raise ParameterError(f"expected a 2-D array of vectors, got shape {arr.shape}")
        norms = np.linalg.norm(arr, axis=1)
        scale = np.minimum(1.0, clip_bound_R / np.where(norms > 0, norms, 1.0))
        self.vectors = arr * scale[:, None]
        self.norms = np.minimum(norms, clip_bound_R)
        self.clip_bound_R = float(clip_bound_R)
        self.order = np.argsort(self.norms, kind="stable")

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def sorted_norms(self) -> np.ndarray:
        return self.norms[self.order]

    def total(self) -> np.ndarray:
        return self.vectors.sum(axis=0)


@dataclass(frozen=True)
class SensitivityProfile:
    F: int
    tau: float
    gs: float

    def __post_init__(self):
        if int(self.F) != self.F or self.F < 0:
            raise ParameterError(f"F must be a nonnegative integer, got {self.F}")
        if not self.tau > 0:
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not self.gs > 0:
            raise ParameterError(f"gs must be positive, got {self.gs}")


def tsum(batch: GradientBatch, F: int) -> np.ndarray:
    """Sum of all but the ``F`` largest-norm vectors (zero if ``len(batch) <= F``)."""
    if F < 0:
        raise ParameterError(f"F must be nonnegative, got {F}")
    m = len(batch)
    if m <= F:
        return np.zeros(batch.dim)
    return batch.vectors[batch.order[: m - F]].sum(axis=0)


def local_sensitivity_r(batch: GradientBatch, profile: SensitivityProfile, r: int) -> float:
    """Largest single-edit change of the trimmed sum over datasets within ``r`` edits.

    Equals the norm of the ``(m - F + 1 + r)``-th smallest vector for
    ``r <= F - 1`` and the global sensitivity beyond. A nonpositive index means
    even ``r`` additions leave at most ``F`` points, so the trimmed sum stays 0.
    """
    if r < 0:
        raise ParameterError(f"r must be nonnegative, got {r}")
    F = profile.F
    if r > F - 1:
        return float(profile.gs)
    idx = len(batch) - F + 1 + r
    if idx <= 0:
        return 0.0
    return float(batch.sorted_norms[idx - 1])


def local_sensitivity_profile(batch: GradientBatch, profile: SensitivityProfile) -> list[float]:
    """``local_sensitivity_r`` for ``r = 0..F`` (the last entry is always ``gs``)."""
    return [local_sensitivity_r(batch, profile, r) for r in range(profile.F + 1)]


def safety_margin(batch: GradientBatch, profile: SensitivityProfile) -> float:
    """Smallest ``r`` with local sensitivity above ``tau``; ``inf`` if none exists."""
    for r in range(profile.F):
        if local_sensitivity_r(batch, profile, r) > profile.tau:
            return float(r)
    return float(profile.F) if profile.tau < profile.gs else math.inf


class TrimmedSumOracle:
    """PTR oracle over a :class:`GradientBatch`: plain sum vs. ``F``-trimmed sum."""

    def __init__(self, F: int, gs: float):
        self.F = int(F)
        self.gs = float(gs)

    def eval_f1(self, dataset: GradientBatch) -> np.ndarray:
        return dataset.total()

    def eval_f2(self, dataset: GradientBatch) -> np.ndarray:
        return tsum(dataset, self.F)

    def safety_margin(self, dataset: GradientBatch, tau: float) -> float:
        return safety_margin(dataset, SensitivityProfile(self.F, tau, self.gs))
