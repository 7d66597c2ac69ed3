import math

import numpy as np
import pytest
from scipy import integrate

from ptr_accountant.errors import ConfigurationError, ParameterError
from ptr_accountant.rdp import DpGuarantee, compose, rdp_to_dp
from ptr_accountant.robust_sgd import (
    ConvergenceParams,
    CorruptionKind,
    CorruptionSpec,
    Dataset,
    Flag,
    LinearRegression,
    SoftmaxRegression,
    TrainConfig,
    adapt_F,
    aggregate_ptr_tmean,
    calibrate_gaussian_sigma,
    convergence_bound,
    gaussian_step_curve,
    inject_corruption,
    make_linear_data,
    make_mixture_data,
    train,
)
from ptr_accountant.trimmed_sum import GradientBatch, SensitivityProfile, safety_margin, tsum

UNLIMITED = DpGuarantee(math.inf, 1e-5)


class ConstantGradients:
    """Every example has the same fixed gradient; loss is the distance travelled."""

    def __init__(self, g):
        self.g = np.asarray(g, dtype=float)
        self.num_params = self.g.size

    def loss(self, w, data):
        return float(np.linalg.norm(w))

    def per_example_grads(self, w, X, y):
        return np.tile(self.g, (X.shape[0], 1))


# corruption ----------------------------------------------------------------------


def test_corruption_ratio_zero_is_identity():
    g = np.arange(12.0).reshape(6, 2)
    out, idx = inject_corruption(g, CorruptionSpec(CorruptionKind.GRADIENT_BIT_FLIP, 0.0), np.random.default_rng(0))
    np.testing.assert_array_equal(out, g)
    assert idx.size == 0


def test_bit_flip_negates_exactly():
    g = np.random.default_rng(1).standard_normal((20, 3))
    out, idx = inject_corruption(g, CorruptionSpec("gradient_bit_flip", 0.2), np.random.default_rng(2))
    assert idx.size == 4
    np.testing.assert_array_equal(out[idx], -g[idx])
    rest = np.setdiff1d(np.arange(20), idx)
    np.testing.assert_array_equal(out[rest], g[rest])


def test_gradient_noise_count_and_scale():
    g = np.zeros((1000, 50))
    out, idx = inject_corruption(g, CorruptionSpec("gradient_noise", 0.3), np.random.default_rng(3))
    assert idx.size == 300
    assert out[idx].std() == pytest.approx(10.0, rel=0.02)
    assert not np.any(np.delete(out, idx, axis=0))


def test_targeted_label_flip():
    data = Dataset(np.zeros((10, 2)), np.full(10, 3), 10)
    out, idx = inject_corruption(data, CorruptionSpec("targeted_label_flip", 0.4), np.random.default_rng(0))
    assert idx.size == 4
    assert np.all(out.y[idx] == 6)
    assert np.all(np.delete(out.y, idx) == 3)
    assert np.all(data.y == 3)


def test_label_flip_and_feature_noise():
    rng = np.random.default_rng(4)
    data = make_mixture_data(500, 3, 4, rng)
    out, idx = inject_corruption(data, CorruptionSpec("label_flip", 0.1), rng)
    assert idx.size == 50 and set(np.unique(out.y[idx])) <= set(range(4))
    noisy, idx2 = inject_corruption(data, CorruptionSpec("feature_noise", 0.1), rng)
    diff = noisy.X - data.X
    assert idx2.size == 50 and not np.any(np.delete(diff, idx2, axis=0))


def test_corruption_errors():
    with pytest.raises(ParameterError):
        CorruptionSpec("label_flip", 0.5)
    with pytest.raises(ConfigurationError):
        inject_corruption(Dataset(np.zeros((4, 1)), np.zeros(4)), CorruptionSpec("gradient_bit_flip", 0.25),
                          np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        inject_corruption(np.zeros((4, 1)), CorruptionSpec("label_flip", 0.25), np.random.default_rng(0))
    with pytest.raises(ConfigurationError):
        inject_corruption(Dataset(np.zeros((4, 1)), np.zeros(4)), CorruptionSpec("label_flip", 0.25),
                          np.random.default_rng(0))


# adaptive F ----------------------------------------------------------------------


def test_adapt_F_examples():
    cfg = TrainConfig()
    assert adapt_F(64, "-", cfg, 256) == 59
    assert adapt_F(64, "+", cfg, 256) == 69
    lo, hi = cfg.f_limits(256)
    assert (lo, hi) == (13, 115)
    assert adapt_F(hi, "+", cfg, 256) == hi
    assert adapt_F(lo, "-", cfg, 256) == lo
    assert adapt_F(64, "0", cfg, 256) == 64
    assert adapt_F(adapt_F(64, "+", cfg, 256), "-", cfg, 256) == 64


def test_adapt_F_rounds_half_up():
    cfg = TrainConfig(f_adapt_frac=0.02)
    assert adapt_F(50, "+", cfg, 125) == 53  # 2.5 -> 3


# aggregation ---------------------------------------------------------------------


def test_aggregate_noiseless_infinite_margin_returns_tsum():
    cfg = TrainConfig(sigma=1e-12, tau=1.0, clip_R=1.0, b=1.0, delta0=0.1)
    batch = GradientBatch(np.random.default_rng(0).uniform(-1, 1, size=(30, 3)), 1.0)
    release, flag, delta_hat = aggregate_ptr_tmean(batch, 5, cfg, np.random.default_rng(1))
    assert flag is Flag.MINUS and math.isinf(delta_hat)
    np.testing.assert_allclose(release, tsum(batch, 5), atol=1e-9)


def test_aggregate_zero_margin_always_large_branch():
    cfg = TrainConfig(sigma=4.0, tau=0.5, clip_R=1.0, b=1.0, delta0=1e-8)
    batch = GradientBatch([[1.0]] * 10, 1.0)
    assert safety_margin(batch, SensitivityProfile(3, cfg.tau, 1.0)) == 0
    rng = np.random.default_rng(2)
    flags = {aggregate_ptr_tmean(batch, 3, cfg, rng)[1] for _ in range(100_000)}
    assert flags == {Flag.PLUS}


def test_aggregate_identical_small_norms_pass_with_laplace_tail():
    cfg = TrainConfig(sigma=4.0, tau=0.5, clip_R=1.0, b=1.0, delta0=1e-3)
    batch = GradientBatch([[0.1, 0.0]] * 40, 1.0)
    F = 8
    margin = safety_margin(batch, SensitivityProfile(F, cfg.tau, 1.0))
    assert margin == F
    threshold = cfg.ptr_config().threshold
    p_minus = 1 - 0.5 * math.exp(-(margin - threshold) / cfg.b)
    rng = np.random.default_rng(3)
    n = 20_000
    minus = sum(aggregate_ptr_tmean(batch, F, cfg, rng)[1] is Flag.MINUS for _ in range(n))
    assert abs(minus / n - p_minus) < 4 * math.sqrt(p_minus * (1 - p_minus) / n)


def test_aggregate_empty_batch():
    release, flag, dh = aggregate_ptr_tmean(GradientBatch([], 1.0, dim=4), 2, TrainConfig(), np.random.default_rng(0))
    np.testing.assert_array_equal(release, np.zeros(4))
    assert flag is Flag.EMPTY and math.isnan(dh)


# accounting helpers --------------------------------------------------------------


def subsampled_gaussian_rdp_by_integration(q, sigma, alpha):
    def log_n(x, m):
        return -0.5 * ((x - m) / sigma) ** 2

    def integrand(x):
        log_mu = np.logaddexp(math.log1p(-q) + log_n(x, 0), math.log(q) + log_n(x, 1))
        return math.exp(alpha * log_mu + (1 - alpha) * log_n(x, 0)) / (sigma * math.sqrt(2 * math.pi))

    val = integrate.quad(integrand, -np.inf, np.inf, epsabs=0, epsrel=1e-12, limit=200)[0]
    return math.log(val) / (alpha - 1)


@pytest.mark.parametrize("q, sigma, alpha", [(0.01, 1.0, 2), (0.1, 2.0, 3), (0.05, 0.8, 5), (0.2, 4.0, 8)])
def test_gaussian_step_curve_matches_integration(q, sigma, alpha):
    curve = gaussian_step_curve(q, sigma)
    assert curve.eps_at(alpha) == pytest.approx(subsampled_gaussian_rdp_by_integration(q, sigma, alpha), rel=1e-8)


def test_calibration_hits_target():
    sigma = calibrate_gaussian_sigma(0.05, 200, 2.0, 1e-5)
    eps = rdp_to_dp(gaussian_step_curve(0.05, sigma).scaled(200), 1e-5).eps
    assert eps == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ParameterError):
        calibrate_gaussian_sigma(0.0, 10, 1.0, 1e-5)


# training ------------------------------------------------------------------------


class DistanceToOptimum(LinearRegression):
    """Linear regression whose reported loss is the distance to a known optimum."""

    def __init__(self, d, w_star):
        super().__init__(d)
        self.w_star = w_star

    def loss(self, w, data):
        return float(np.linalg.norm(w - self.w_star))


def quadratic_problem(seed, n=2000, d=2, noise_std=0.0):
    return make_linear_data(n, d, np.random.default_rng(seed), noise_std=noise_std)


def test_zero_q_makes_no_updates_and_spends_nothing():
    data, _ = quadratic_problem(0)
    cfg = TrainConfig(q=0.0, T_max=20, budget=DpGuarantee(1.0, 1e-5))
    rep = train(LinearRegression(2), data, cfg)
    assert rep.steps == 20
    assert {r.branch for r in rep.records} == {"0"}
    np.testing.assert_array_equal(rep.params, np.zeros(2))
    assert rep.final.eps == 0.0


def test_training_is_deterministic():
    data, _ = quadratic_problem(1)
    cfg = TrainConfig(q=0.05, T_max=50, seed=9, budget=UNLIMITED)
    spec = CorruptionSpec("gradient_bit_flip", 0.2)
    a = train(LinearRegression(2), data, cfg, spec)
    b = train(LinearRegression(2), data, cfg, spec)
    assert a.records == b.records
    np.testing.assert_array_equal(a.params, b.params)


def test_noiseless_small_branch_descends_monotonically():
    data, w_star = quadratic_problem(0)
    cfg = TrainConfig(q=0.05, eta_B=0.5, sigma=1e-12, tau=0.999, clip_R=1.0, b=1e-3, delta0=1e-5,
                      T_max=200, budget=UNLIMITED)
    rng = np.random.default_rng(1)
    rep = train(DistanceToOptimum(2, w_star), data, cfg, rng=rng)
    branches = [r.branch for r in rep.records]
    assert branches[20:].count("-") == len(branches) - 20
    dist = [r.loss for r in rep.records]
    # the residual 1e-12 noise jitters the iterate once it is converged to ~1e-14
    assert all(b <= a * (1 + 1e-9) + 1e-10 for a, b in zip(dist[20:], dist[21:]))
    assert np.linalg.norm(rep.params - w_star) < 1e-6


def test_bit_flip_costs_at_most_twice_the_clean_loss():
    finals = {}
    for spec in (CorruptionSpec(), CorruptionSpec("gradient_bit_flip", 0.2)):
        losses = []
        for seed in range(5):
            data, _ = quadratic_problem(100 + seed, n=4000, noise_std=0.5)
            cfg = TrainConfig(q=0.05, eta_B=0.5, F_init=50, adapt=False, sigma=8.0, tau=0.5, b=2.0,
                              T_max=300, seed=seed, budget=UNLIMITED)
            losses.append(train(LinearRegression(2), data, cfg, spec).final_loss)
        finals[spec.kind] = np.mean(losses)
    assert finals[CorruptionKind.GRADIENT_BIT_FLIP] <= 2 * finals[CorruptionKind.NONE]


def test_branch_economics_with_concentrated_gradients():
    # expected batch 200; lower clamp keeps F >= 10, well above the test threshold b ln(1/(2 delta0)) = 5.4
    data = Dataset(np.zeros((4000, 1)), np.zeros(4000))
    cfg = TrainConfig(q=0.05, sigma=8.0, tau=0.5, clip_R=1.0, b=0.5, delta0=1e-5, T_max=500, budget=UNLIMITED)
    rep = train(ConstantGradients([0.2, 0.1]), data, cfg)
    branches = [r.branch for r in rep.records]
    assert branches.count("-") >= 0.99 * len(branches)
    lo, hi = cfg.f_limits(200)
    assert all(lo <= r.F <= hi for r in rep.records)


def test_ledger_consistency_and_budget_stop():
    data, _ = quadratic_problem(2)
    cfg = TrainConfig(q=0.05, T_max=2000, budget=DpGuarantee(1.0, 1e-5))
    rep = train(LinearRegression(2), data, cfg)
    assert rep.stopped_by_budget and 0 < rep.steps < 2000
    assert all(r.eps_so_far <= 1.0 for r in rep.records)
    assert rep.final.eps <= 1.0
    assert compose(rep.per_iteration_curves()).eps == pytest.approx(rep.cumulative.eps, rel=1e-12)
    next_eps = rdp_to_dp(rep.step_curve.scaled(rep.steps + 1), 1e-5).eps
    assert next_eps > 1.0


def test_budget_exhausted_before_first_step():
    data, _ = quadratic_problem(3)
    rep = train(LinearRegression(2), data, TrainConfig(q=0.05, budget=DpGuarantee(1e-6, 1e-5)))
    assert rep.steps == 0 and rep.stopped_by_budget
    assert rep.final_loss == rep.initial_loss


def test_mean_aggregator_calibrated_to_ptr_spend():
    data, _ = quadratic_problem(4)
    base = dict(q=0.05, T_max=100, budget=DpGuarantee(50.0, 1e-5))
    ptr = train(LinearRegression(2), data, TrainConfig(**base))
    mean = train(LinearRegression(2), data, TrainConfig(aggregator="mean", **base))
    assert mean.sigma_mean is not None
    assert mean.final.eps == pytest.approx(ptr.final.eps, rel=1e-6)
    assert {r.branch for r in mean.records} <= {"-", "0"}


def test_softmax_model_trains():
    rng = np.random.default_rng(5)
    data = make_mixture_data(3000, 4, 3, rng, separation=6.0)
    model = SoftmaxRegression(4, 3)
    cfg = TrainConfig(q=0.05, eta_B=1.0, sigma=2.0, tau=0.5, T_max=150, budget=UNLIMITED)
    rep = train(model, data, cfg, CorruptionSpec("targeted_label_flip", 0.1))
    assert rep.final_loss < rep.initial_loss


def test_softmax_gradients_match_finite_differences():
    rng = np.random.default_rng(6)
    model = SoftmaxRegression(3, 4)
    X = rng.standard_normal((5, 3))
    y = rng.integers(4, size=5)
    w = rng.standard_normal(model.num_params)
    grads = model.per_example_grads(w, X, y)
    for i in range(5):
        one = Dataset(X[i:i + 1], y[i:i + 1], 4)
        num = np.array([(model.loss(w + h, one) - model.loss(w - h, one)) / 2e-6
                        for h in np.eye(model.num_params) * 1e-6])
        np.testing.assert_allclose(grads[i], num, atol=1e-6)


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(f_bounds=(0.1, 0.5))
    with pytest.raises(ParameterError):
        TrainConfig(aggregator="median")
    with pytest.raises(ParameterError):
        TrainConfig(eta_B=0.0)
    with pytest.raises(ConfigurationError):
        TrainConfig(tau=2.0, clip_R=1.0)


# convergence ---------------------------------------------------------------------


def conv(**kw):
    base = dict(alpha_sc=1.0, beta_sm=1.0, R_lip=1.0, sigma_grad=1.0, n=100, F=10, sigma1_noise=2.0,
                sigma2_noise=1.0, d=5, eta_B=1e-4)
    base.update(kw)
    return ConvergenceParams(**base)


def test_convergence_contracts_at_half_eta_max():
    eta_max = convergence_bound(conv()).eta_max
    assert eta_max == pytest.approx(2 * 80 / (100**2 + 91 * 90))
    res = convergence_bound(conv(eta_B=eta_max / 2))
    assert res.admissible and res.rho_B < 1 and res.limit_radius == pytest.approx(res.M_B / (1 - res.rho_B))
    assert res.eta_A == pytest.approx(0.9 * eta_max / 2)


def test_convergence_zero_eta_limit():
    res = convergence_bound(conv(F=0, eta_B=1e-12))
    assert res.rho_B < 1 and res.rho_B == pytest.approx(1.0, abs=1e-9)
    assert res.M_B == pytest.approx(0.0, abs=1e-18)


def test_convergence_noise_dependence():
    eta = 1e-4
    a = convergence_bound(conv(eta_B=eta, sigma2_noise=1.5))
    b = convergence_bound(conv(eta_B=eta, sigma2_noise=3.0))
    assert b.M_B - a.M_B == pytest.approx(eta**2 * 91 * 5 * 3 * 1.5**2, rel=1e-9)


def test_convergence_inadmissible_and_validation():
    res = convergence_bound(conv(eta_B=1.0))
    assert not res.admissible and res.limit_radius is None
    with pytest.raises(ParameterError):
        conv(F=50)
    with pytest.raises(ParameterError):
        conv(alpha_sc=2.0, beta_sm=1.0)


def test_sigma2_floor_flag():
    assert not convergence_bound(conv(sigma2_noise=0.1)).sigma2_floor_ok
    assert convergence_bound(conv(sigma2_noise=100.0)).sigma2_floor_ok
