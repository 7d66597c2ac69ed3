"""Trimmed-mean DP-SGD with a PTR aggregator on small synthetic problems.

Models have closed-form per-example gradients so a full run takes seconds.
Privacy is accounted per iteration with the subsampled PTR curve; the curve
does not depend on the trim count, so the running total is a multiple of the
per-step curve.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Protocol

import numpy as np
from scipy import optimize

from .errors import ConfigurationError, ParameterError
from .ptr import Branch, PtrConfig, run_ptr
from .rdp import DEFAULT_ALPHAS, DpGuarantee, RdpCurve, compose, rdp_to_dp
from .subsampling import SubsampleParams, subsampled_ptr_curve, subsampled_rdp_lower_bound
from .trimmed_sum import GradientBatch, TrimmedSumOracle

__all__ = [
    "Flag",
    "CorruptionKind",
    "CorruptionSpec",
    "Dataset",
    "LinearRegression",
    "SoftmaxRegression",
    "make_linear_data",
    "make_mixture_data",
    "TrainConfig",
    "IterationRecord",
    "TrainReport",
    "ConvergenceParams",
    "ConvergenceBound",
    "inject_corruption",
    "aggregate_ptr_tmean",
    "adapt_F",
    "ptr_step_curve",
    "gaussian_step_curve",
    "calibrate_gaussian_sigma",
    "train",
    "convergence_bound",
]


class Flag(str, enum.Enum):
    PLUS = "+"  # test failed, large-noise sum released
    MINUS = "-"  # test passed, small-noise trimmed sum released
    EMPTY = "0"  # no example drawn this step


class CorruptionKind(str, enum.Enum):
    NONE = "none"
    LABEL_FLIP = "label_flip"
    TARGETED_LABEL_FLIP = "targeted_label_flip"
    FEATURE_NOISE = "feature_noise"
    GRADIENT_NOISE = "gradient_noise"
    GRADIENT_BIT_FLIP = "gradient_bit_flip"

    @property
    def acts_on_data(self) -> bool:
        return self in (CorruptionKind.LABEL_FLIP, CorruptionKind.TARGETED_LABEL_FLIP, CorruptionKind.FEATURE_NOISE)

    @property
    def acts_on_gradients(self) -> bool:
        return self in (CorruptionKind.GRADIENT_NOISE, CorruptionKind.GRADIENT_BIT_FLIP)


@dataclass(frozen=True)
class CorruptionSpec:
    kind: CorruptionKind = CorruptionKind.NONE
    ratio: float = 0.0
    noise_sigma: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "kind", CorruptionKind(self.kind))
        if not 0 <= self.ratio < 0.5:
            raise ParameterError(f"corruption ratio must lie in [0, 0.5), got {self.ratio}")
        if not self.noise_sigma >= 0:
            raise ParameterError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")

    def count(self, m: int) -> int:
        if self.kind is CorruptionKind.NONE:
            return 0
        k = math.floor(self.ratio * m)
        if m > 0 and k >= m / 2:
            raise ParameterError(f"corrupting {k} of {m} elements is not a minority")
        return k


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int | None = None

    def __len__(self) -> int:
        return self.X.shape[0]


class Model(Protocol):
    num_params: int

    def loss(self, w: np.ndarray, data: Dataset) -> float: ...

    def per_example_grads(self, w: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray: ...


class LinearRegression:
    """Squared loss ``0.5 (x.w - y)^2``."""

    def __init__(self, d: int):
        self.d = d
        self.num_params = d

    def loss(self, w, data):
        resid = data.X @ w - data.y
        return float(0.5 * np.mean(resid**2))

    def per_example_grads(self, w, X, y):
        return X * (X @ w - y)[:, None]


class SoftmaxRegression:
    """Multinomial logistic regression; parameters are a flattened ``d x C`` matrix."""

    def __init__(self, d: int, num_classes: int):
        self.d = d
        self.num_classes = num_classes
        self.num_params = d * num_classes

    def _probs(self, w, X):
        logits = X @ w.reshape(self.d, self.num_classes)
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def loss(self, w, data):
        p = self._probs(w, data.X)
        return float(-np.mean(np.log(p[np.arange(len(data)), data.y.astype(int)] + 1e-300)))

    def per_example_grads(self, w, X, y):
        p = self._probs(w, X)
        p[np.arange(X.shape[0]), y.astype(int)] -= 1.0
        return (X[:, :, None] * p[:, None, :]).reshape(X.shape[0], -1)


def make_linear_data(n: int, d: int, rng: np.random.Generator, noise_std: float = 0.0,
                     w_norm: float = 1.0) -> tuple[Dataset, np.ndarray]:
    """Gaussian design with a planted parameter of norm ``w_norm``."""
    w_star = rng.standard_normal(d)
    w_star *= w_norm / np.linalg.norm(w_star)
    X = rng.standard_normal((n, d))
    y = X @ w_star + noise_std * rng.standard_normal(n)
    return Dataset(X, y), w_star


def make_mixture_data(n: int, d: int, num_classes: int, rng: np.random.Generator,
                      separation: float = 3.0) -> Dataset:
    """Isotropic Gaussian clusters with random centres."""
    centres = separation * rng.standard_normal((num_classes, d)) / math.sqrt(d)
    y = rng.integers(num_classes, size=n)
    X = centres[y] + rng.standard_normal((n, d))
    return Dataset(X, y, num_classes)


def inject_corruption(data, spec: CorruptionSpec, rng: np.random.Generator, num_classes: int | None = None):
    """Corrupt exactly ``floor(ratio * m)`` randomly chosen elements.

    ``data`` is a gradient array of shape ``(m, p)`` for gradient kinds and a
    :class:`Dataset` for label/feature kinds. Returns the corrupted copy and
    the sorted indices that were touched.
    """
    if spec.kind is CorruptionKind.NONE or spec.ratio == 0:
        return data, np.zeros(0, dtype=int)
    if spec.kind.acts_on_gradients:
        if isinstance(data, Dataset):
            raise ConfigurationError(f"{spec.kind.value} corrupts gradients, not a dataset")
        grads = np.array(data, dtype=float, copy=True)
        idx = np.sort(rng.choice(grads.shape[0], size=spec.count(grads.shape[0]), replace=False))
        if spec.kind is CorruptionKind.GRADIENT_BIT_FLIP:
            grads[idx] = -grads[idx]
        else:
            grads[idx] += spec.noise_sigma * rng.standard_normal((len(idx), grads.shape[1]))
        return grads, idx
    if not isinstance(data, Dataset):
        raise ConfigurationError(f"{spec.kind.value} corrupts a dataset, not gradients")
    X, y = data.X.copy(), data.y.copy()
    idx = np.sort(rng.choice(len(data), size=spec.count(len(data)), replace=False))
    C = num_classes if num_classes is not None else data.num_classes
    if spec.kind is CorruptionKind.FEATURE_NOISE:
        X[idx] += spec.noise_sigma * rng.standard_normal((len(idx), X.shape[1]))
    else:
        if C is None:
            raise ConfigurationError("label corruption needs a classification dataset")
        if spec.kind is CorruptionKind.LABEL_FLIP:
            y[idx] = rng.integers(C, size=len(idx))
        else:
            y[idx] = (C - 1) - y[idx]
    return Dataset(X, y, data.num_classes), idx


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters of one training run.

    ``sigma`` is the noise multiplier: the large branch adds ``sigma * clip_R``
    and the small branch ``sigma * tau``. ``F_init=None`` starts at 25% of the
    expected batch. For the plain-mean aggregator ``sigma_mean`` is the noise
    multiplier of the sum; ``None`` calibrates it to the PTR spend.
    """

    q: float = 0.01
    eta_B: float = 0.1
    F_init: int | None = None
    f_adapt_frac: float = 0.02
    f_bounds: tuple[float, float] = (0.05, 0.45)
    adapt: bool = True
    clip_R: float = 1.0
    tau: float = 0.5
    sigma: float = 8.0
    b: float = 2.0
    delta0: float = 1e-5
    T_max: int = 200
    budget: DpGuarantee = field(default_factory=lambda: DpGuarantee(10.0, 1e-5))
    seed: int = 0
    aggregator: str = "ptr"
    sigma_mean: float | None = None

    def __post_init__(self):
        if not 0 <= self.q < 1:
            raise ParameterError(f"q must lie in [0, 1), got {self.q}")
        if not self.eta_B > 0:
            raise ParameterError(f"eta_B must be positive, got {self.eta_B}")
        lo, hi = self.f_bounds
        if not 0 < lo <= hi < 0.5:
            raise ParameterError(f"f_bounds must satisfy 0 < lo <= hi < 0.5, got {self.f_bounds}")
        if not self.f_adapt_frac >= 0:
            raise ParameterError("f_adapt_frac must be nonnegative")
        if self.aggregator not in ("ptr", "mean"):
            raise ParameterError(f"aggregator must be 'ptr' or 'mean', got {self.aggregator!r}")
        if self.T_max < 0 or int(self.T_max) != self.T_max:
            raise ParameterError("T_max must be a nonnegative integer")
        if self.F_init is not None and self.F_init < 0:
            raise ParameterError("F_init must be nonnegative")
        if self.sigma_mean is not None and not self.sigma_mean > 0:
            raise ParameterError("sigma_mean must be positive")
        if self.budget.delta <= 0:
            raise ParameterError("budget delta must be positive")
        self.ptr_config()  # validates sigma, tau, b, delta0 together

    def ptr_config(self) -> PtrConfig:
        return PtrConfig(self.sigma * self.clip_R, self.sigma * self.tau, self.tau, self.b, self.delta0)

    def f_limits(self, expected_batch: float) -> tuple[int, int]:
        lo, hi = self.f_bounds
        return math.ceil(lo * expected_batch), max(math.ceil(lo * expected_batch), math.floor(hi * expected_batch))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def adapt_F(current_F: int, branch: Flag | str, config: TrainConfig, expected_batch: float) -> int:
    """Move ``F`` up after a failed test and down after a passed one, within clamps."""
    branch = Flag(branch)
    if branch is Flag.EMPTY:
        return current_F
    step = _round_half_up(config.f_adapt_frac * expected_batch)
    lo, hi = config.f_limits(expected_batch)
    nxt = current_F + step if branch is Flag.PLUS else current_F - step
    return min(max(nxt, lo), hi)


def aggregate_ptr_tmean(gradients: GradientBatch, F: int, config: TrainConfig,
                        rng: np.random.Generator) -> tuple[np.ndarray, Flag, float]:
    """Noisy sum or trimmed sum of clipped gradients, with the branch flag and noisy margin."""
    if len(gradients) == 0:
        return np.zeros(gradients.dim), Flag.EMPTY, math.nan
    oracle = TrimmedSumOracle(F, config.clip_R)
    out = run_ptr(gradients, config.ptr_config(), oracle, rng)
    flag = Flag.PLUS if out.branch is Branch.LARGE_NOISE else Flag.MINUS
    return out.release, flag, out.delta_hat


def ptr_step_curve(config: TrainConfig, alphas=DEFAULT_ALPHAS) -> tuple[RdpCurve, tuple[str, ...]]:
    """Per-iteration curve of subsampled PTR (white-box, black-box fallback)."""
    if config.q == 0:
        alphas = tuple(alphas)
        return RdpCurve(alphas, (0.0,) * len(alphas)), ("none",) * len(alphas)
    return subsampled_ptr_curve(SubsampleParams(config.q, config.ptr_config(), config.clip_R), alphas)


_GAUSS_ORDERS = tuple(float(a) for a in range(2, 201))


def gaussian_step_curve(q: float, sigma: float, orders=_GAUSS_ORDERS) -> RdpCurve:
    """Per-iteration curve of the Poisson-subsampled Gaussian at integer orders."""
    orders = tuple(orders)
    if q == 0:
        return RdpCurve(orders, (0.0,) * len(orders))
    base = RdpCurve(orders, tuple(a / (2 * sigma**2) for a in orders))
    return RdpCurve(orders, tuple(subsampled_rdp_lower_bound(base, q, int(a)) for a in orders))


def calibrate_gaussian_sigma(q: float, steps: int, target_eps: float, delta: float) -> float:
    """Noise multiplier of subsampled-Gaussian DP-SGD spending ``target_eps`` after ``steps``."""
    if q == 0 or steps == 0:
        raise ParameterError("calibration needs q > 0 and at least one step")

    def gap(log_sigma):
        return rdp_to_dp(gaussian_step_curve(q, math.exp(log_sigma)).scaled(steps), delta).eps - target_eps

    lo, hi = math.log(0.3), math.log(200.0)
    if gap(lo) < 0 or gap(hi) > 0:
        raise ConfigurationError(f"target eps {target_eps} is outside the calibratable range")
    return math.exp(optimize.brentq(gap, lo, hi, xtol=1e-10))


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    loss: float
    branch: str
    F: int
    delta_hat: float
    batch_size: int
    eps_so_far: float


@dataclass
class TrainReport:
    records: list[IterationRecord]
    step_curve: RdpCurve
    step_methods: tuple[str, ...]
    cumulative: RdpCurve
    final: DpGuarantee
    params: np.ndarray
    initial_loss: float
    stopped_by_budget: bool
    sigma_mean: float | None = None

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else self.initial_loss

    def per_iteration_curves(self) -> list[RdpCurve]:
        return [self.step_curve] * self.steps

    def summary(self) -> dict:
        branches = [r.branch for r in self.records]
        return {
            "steps": self.steps,
            "stopped_by_budget": self.stopped_by_budget,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "final_eps": self.final.eps,
            "final_delta": self.final.delta,
            "final_order": self.final.order,
            "branch_counts": {f.value: branches.count(f.value) for f in Flag},
            "sigma_mean": self.sigma_mean,
            "params": [float(v) for v in self.params],
        }


def train(model, dataset: Dataset, config: TrainConfig, corruption: CorruptionSpec = CorruptionSpec(),
          rng: np.random.Generator | None = None, w0: np.ndarray | None = None,
          eval_data: Dataset | None = None) -> TrainReport:
    """Run trimmed-mean DP-SGD (or the plain-mean baseline) until ``T_max`` or the budget.

    The reported loss is measured on ``eval_data`` (default: the uncorrupted
    ``dataset``). The update is ``w -= eta * release / (q N)`` with
    ``eta_A = (n - F) / n * eta_B`` after a failed test.
    """
    if len(dataset) == 0:
        raise ParameterError("dataset is empty")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    eval_data = dataset if eval_data is None else eval_data
    N = len(dataset)
    expected = config.q * N
    if corruption.kind.acts_on_data:
        train_data, _ = inject_corruption(dataset, corruption, rng)
    else:
        train_data = dataset
    w = np.zeros(model.num_params) if w0 is None else np.array(w0, dtype=float)

    sigma_mean = None
    if config.aggregator == "ptr":
        step_curve, methods = ptr_step_curve(config)
    else:
        sigma_mean = config.sigma_mean
        if sigma_mean is None:
            ptr_curve, _ = ptr_step_curve(config)
            target = rdp_to_dp(ptr_curve.scaled(max(config.T_max, 1)), config.budget.delta).eps
            sigma_mean = calibrate_gaussian_sigma(config.q, max(config.T_max, 1), target, config.budget.delta)
        step_curve = gaussian_step_curve(config.q, sigma_mean)
        methods = ("exact",) * len(step_curve)

    lo, hi = config.f_limits(expected)
    F = _round_half_up(0.25 * expected) if config.F_init is None else int(config.F_init)
    if config.adapt:
        F = min(max(F, lo), hi)
    denom = max(expected, 1e-300)
    records: list[IterationRecord] = []
    initial_loss = model.loss(w, eval_data)
    stopped = False
    for t in range(config.T_max):
        eps_next = rdp_to_dp(step_curve.scaled(t + 1), config.budget.delta).eps
        if eps_next > config.budget.eps:
            stopped = True
            break
        idx = np.flatnonzero(rng.random(N) < config.q)
        grads = model.per_example_grads(w, train_data.X[idx], train_data.y[idx])
        if corruption.kind.acts_on_gradients and len(idx):
            grads, _ = inject_corruption(grads, corruption, rng)
        batch = GradientBatch(grads, config.clip_R, dim=model.num_params)
        if config.aggregator == "ptr":
            release, flag, delta_hat = aggregate_ptr_tmean(batch, F, config, rng)
        elif len(batch) == 0:
            release, flag, delta_hat = np.zeros(model.num_params), Flag.EMPTY, math.nan
        else:
            release = batch.total() + sigma_mean * config.clip_R * rng.standard_normal(model.num_params)
            flag, delta_hat = Flag.MINUS, math.nan
        m = len(batch)
        if flag is Flag.PLUS:
            eta = config.eta_B * max(m - F, 0) / m
        else:
            eta = config.eta_B
        w = w - eta * release / denom
        used_F = F
        if config.aggregator == "ptr" and config.adapt:
            F = adapt_F(F, flag, config, expected)
        records.append(IterationRecord(t, model.loss(w, eval_data), flag.value, used_F, delta_hat, m, eps_next))

    cumulative = step_curve.scaled(len(records))
    final = rdp_to_dp(cumulative, config.budget.delta)
    return TrainReport(records, step_curve, methods, cumulative, final, w, initial_loss, stopped, sigma_mean)


@dataclass(frozen=True)
class ConvergenceParams:
    alpha_sc: float
    beta_sm: float
    R_lip: float
    sigma_grad: float
    n: int
    F: int
    sigma1_noise: float
    sigma2_noise: float
    d: int
    eta_B: float

    def __post_init__(self):
        if not 0 < self.alpha_sc <= self.beta_sm:
            raise ParameterError("need 0 < alpha_sc <= beta_sm")
        if not 0 <= self.F < self.n / 2:
            raise ParameterError(f"need 0 <= F < n/2, got F={self.F}, n={self.n}")


@dataclass(frozen=True)
class ConvergenceBound:
    admissible: bool
    eta_max: float
    eta_A: float
    rho_A: float
    M_A: float
    rho_B: float
    M_B: float
    limit_radius: float | None
    sigma2_floor_ok: bool


def convergence_bound(params: ConvergenceParams) -> ConvergenceBound:
    """Contraction factors and noise floors of both PTR routines.

    ``limit_radius`` bounds the limiting mean squared distance to the optimum
    and is ``None`` when ``eta_B`` is not admissible.
    """
    p = params
    n, F, a, beta = p.n, p.F, p.alpha_sc, p.beta_sm
    eta_max = 2 * a * (n - 2 * F) / (n**2 + (n - F + 1) * (n - F) * beta**2)
    eta_B = p.eta_B
    eta_A = (n - F) / n * eta_B
    bias = (F / n) ** 2 * p.R_lip**2
    rho_B = 1 - 2 * eta_B * a * (n - 2 * F) + eta_B**2 * (n**2 + (n - F + 1) * (n - F) * beta**2)
    M_B = eta_B**2 * (n - F + 1) * ((n - F) * p.sigma_grad**2 + p.d * p.sigma2_noise**2) + bias
    rho_A = 1 - 2 * eta_A * a * (n - F) + eta_A**2 * (n**2 + (n + 1) * (n - F) * beta**2)
    M_A = eta_A**2 * (n + 1) * ((n - F) * p.sigma_grad**2 + F * p.R_lip + p.d * p.sigma1_noise**2) + bias
    floor = (n - F) * (n + 1) / n**2 * (((n - F) * p.sigma_grad**2 + F * p.R_lip) / p.d + p.sigma1_noise**2)
    admissible = 0 < eta_B <= eta_max
    radius = M_B / (1 - rho_B) if admissible and rho_B < 1 else None
    return ConvergenceBound(admissible, eta_max, eta_A, rho_A, M_A, rho_B, M_B, radius, p.sigma2_noise**2 >= floor)
