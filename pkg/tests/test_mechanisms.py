import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import logsumexp

from dpkit.core import ParameterError, RobustnessProfile, make_rng
from dpkit.estimators import RobustEstimatorSpec
from dpkit.mechanisms import (
    CalibrationError,
    EmptySupportError,
    MechanismConfig,
    ProductScoreField,
    axis_grid,
    build_field,
    exp_mech_finite,
    exp_mech_probabilities,
    exp_mech_sample_many,
    laplace,
    ptr_pipeline,
    smooth_inv_mech,
    truncated_inv_mech,
)
from dpkit.sensitivity import INF, CoordinateQuantileOracle, QuantileOracle, ScoreField

S = [1, 2, 3, 4, 5]
MED = RobustEstimatorSpec("projectedMedian", 10)


def test_singleton_support():
    fld = ScoreField([[0.0], [1.0], [2.0]], [INF, 4, INF])
    for seed in range(20):
        assert exp_mech_finite(fld, 1.0, seed).value[0] == 1.0


def test_two_point_softmax():
    fld = ScoreField([[0.0], [1.0]], [0, 1])
    p = 1 / (1 + math.exp(-1))
    assert exp_mech_probabilities(fld, 2.0)[0] == pytest.approx(p, abs=1e-15)
    idx = exp_mech_sample_many(fld, 2.0, 100_000, 3)
    assert abs(np.mean(idx == 0) - 0.7311) <= 0.01


def test_equal_scores_uniform():
    fld = ScoreField(np.arange(20.0).reshape(-1, 1), np.full(20, 3.0))
    counts = np.bincount(exp_mech_sample_many(fld, 1.0, 100_000, 4), minlength=20)
    assert stats.chisquare(counts).pvalue > 0.01


def test_empty_support_and_bad_epsilon():
    fld = ScoreField([[0.0], [1.0]], [INF, INF])
    with pytest.raises(EmptySupportError):
        exp_mech_finite(fld, 1.0, 0)
    with pytest.raises(ParameterError):
        exp_mech_probabilities(ScoreField([[0.0]], [0]), 0.0)


def test_normalizer_log_domain():
    rng = np.random.default_rng(5)
    scores = rng.integers(0, 400, size=300).astype(float)
    fld = ScoreField(np.arange(300.0).reshape(-1, 1), scores)
    out = exp_mech_finite(fld, 1.0, 0)
    direct = math.fsum(math.exp(-s / 2) for s in scores)
    assert abs(out.normalizer - direct) <= 1e-10 * direct
    # large K: the direct sum underflows but the log normalizer stays finite
    big = ScoreField(fld.points, scores + 5000)
    assert math.isfinite(exp_mech_finite(big, 1.0, 0).log_normalizer)


def test_deterministic_given_seed():
    cfg = MechanismConfig(1.0, rho=0.2, grid_res=0.1, radius=10)
    a = smooth_inv_mech(S, MED, cfg, seed=7)
    b = smooth_inv_mech(S, MED, cfg, seed=7)
    assert np.array_equal(a.value, b.value)


def test_smooth_concentrates_at_large_epsilon():
    cfg = MechanismConfig(50.0, rho=0.1, grid_res=0.05, radius=10)
    hits = sum(abs(smooth_inv_mech(S, MED, cfg, seed=s).value[0] - 3) <= 0.15 for s in range(1000))
    assert hits >= 990


def test_cell_frequencies_match_analytic_weights():
    cfg = MechanismConfig(1.0, rho=0.5, grid_res=0.25, radius=3)
    fld = build_field(S, cfg, QuantileOracle(0.5, 3))
    lw = -fld.scores * 0.5
    p = np.exp(lw - logsumexp(lw))
    counts = np.bincount(exp_mech_sample_many(fld, 1.0, 100_000, 9), minlength=len(p))
    assert counts[p == 0].sum() == 0
    keep = p * 100_000 >= 5
    rest = (p > 0) & ~keep
    obs, exp = counts[keep], p[keep] * 100_000
    if rest.any():
        obs, exp = np.append(obs, counts[rest].sum()), np.append(exp, p[rest].sum() * 100_000)
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_output_contained_in_ball():
    rng = np.random.default_rng(6)
    for s in range(200):
        cfg = MechanismConfig(0.3, rho=0.4, grid_res=0.3, radius=2)
        x = rng.normal(size=7) * 5
        v = smooth_inv_mech(x, RobustEstimatorSpec("projectedMedian", 2), cfg, seed=s).value
        assert abs(v[0]) <= 2 + 0.4 + 0.3


def test_grid_must_resolve_rho():
    with pytest.raises(ParameterError):
        MechanismConfig(1.0, rho=0.1, grid_res=0.2)
    with pytest.raises(ParameterError):
        MechanismConfig(1.0, rho=0.1, grid_res=0.1, K=0)
    with pytest.raises(ParameterError):
        smooth_inv_mech(S, MED, MechanismConfig(1.0, rho=0.0, grid_res=0.1, radius=10))


def test_invalid_config_rejected():
    cfg = MechanismConfig(1.0, rho=0.2, grid_res=0.1, radius=10, K=3, valid=False, reason="test")
    with pytest.raises(CalibrationError):
        smooth_inv_mech(S, MED, cfg)
    with pytest.raises(CalibrationError):
        truncated_inv_mech(S, MED, cfg)


def test_truncated_scores_at_most_K():
    x = np.random.default_rng(7).normal(size=41)
    cfg = MechanismConfig(0.2, rho=0.2, grid_res=0.1, radius=10, K=4)
    fld = build_field(x, cfg, QuantileOracle(0.5, 10), truncate=True)
    idx = exp_mech_sample_many(fld, 0.2, 10_000, 1)
    assert fld.scores[idx].max() <= 4
    assert truncated_inv_mech(x, MED, cfg, seed=2).score <= 4


def test_truncated_vacuous_equals_smooth():
    x = np.random.default_rng(8).normal(size=11)
    base = MechanismConfig(1.0, rho=0.3, grid_res=0.15, radius=3)
    smooth = build_field(x, base, QuantileOracle(0.5, 3))
    K = int(np.max(smooth.scores[np.isfinite(smooth.scores)]))
    cfg = MechanismConfig(1.0, rho=0.3, grid_res=0.15, radius=3, K=K)
    trunc = build_field(x, cfg, QuantileOracle(0.5, 3), truncate=True)
    tv = 0.5 * np.abs(exp_mech_probabilities(smooth, 1.0) - exp_mech_probabilities(trunc, 1.0)).sum()
    assert tv < 1e-12


def test_truncated_empty_support_is_calibration_error():
    x = np.zeros(9)
    cfg = MechanismConfig(1.0, rho=0.1, grid_res=0.1, radius=1, K=1)

    class Far:
        def field(self, data, points, rho, sparsity=None):
            return np.full(len(points), 5.0)

    with pytest.raises(CalibrationError):
        truncated_inv_mech(x, MED, cfg, oracle=Far())
    assert truncated_inv_mech(x, MED, cfg, oracle=QuantileOracle(0.5, 1)).score == 0


def test_truncated_within_3B_when_safe():
    rng = np.random.default_rng(9)
    for _ in range(5):
        x = rng.normal(size=101)
        q = QuantileOracle(0.5, 10)
        K = 10
        B = q.modulus(x, K + 1) * 1.01
        cfg = MechanismConfig(1.0, rho=2 * B, grid_res=B / 2, radius=10, K=K, B=B)
        fld = build_field(x, cfg, q, truncate=True)
        idx = exp_mech_sample_many(fld, 1.0, 10_000, 3)
        f = q.estimator(x)[0]
        assert np.max(np.abs(fld.points[idx, 0] - f)) <= 3 * B + 1e-12


def test_analytic_dp_ratio_on_neighbors():
    rng = np.random.default_rng(10)
    q = QuantileOracle(0.5, 2)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        x = rng.normal(size=n)
        y = x.copy()
        y[rng.integers(n)] = rng.normal() * 3
        cfg = MechanismConfig(1.0, rho=0.3, grid_res=0.15, radius=2)
        pa = exp_mech_probabilities(build_field(x, cfg, q), 1.0)
        pb = exp_mech_probabilities(build_field(y, cfg, q), 1.0)
        assert np.all((pa > 0) == (pb > 0))
        both = pa > 0
        assert np.max(np.abs(np.log(pa[both]) - np.log(pb[both]))) <= 1.0 + 1e-12


def _rob(tau, alpha=0.5, beta=1e-3):
    return MED.with_profile(RobustnessProfile(tau, beta, alpha))


def _ptr_config(n=500, tau=0.3, alpha=0.5):
    K = int(math.floor(n * tau / 2)) - 1
    return MechanismConfig(1.0, 1e-3, 4 * alpha, K, alpha, 10, B=2 * alpha, beta=1e-3)


def test_ptr_planted_bad_returns_bot():
    n = 500
    planted = np.concatenate([np.full(n // 2, -5.0), np.full(n // 2, 5.0)])
    cfg = _ptr_config()
    rob = _rob(0.3)
    out = ptr_pipeline(planted, rob, cfg, seed=0)
    assert out.bot and out.diagnostics["dist"] == 0
    bots = sum(ptr_pipeline(planted, rob, cfg, seed=s).bot for s in range(2000))
    assert bots / 2000 >= 1 - 1e-3 / 2 - 0.003


def test_ptr_forced_noise_controls_release():
    x = np.random.default_rng(11).normal(size=500)
    cfg = _ptr_config()
    rob = _rob(0.3)
    thr = 2 * math.log(1000)
    dist = ptr_pipeline(x, rob, cfg, zeta=0.0).diagnostics["dist"]
    assert ptr_pipeline(x, rob, cfg, zeta=thr - dist).bot
    out = ptr_pipeline(x, rob, cfg, zeta=thr - dist + 1)
    assert not out.bot and out.score <= cfg.K
    assert out.to_json(5)["bot"] is False
    assert ptr_pipeline(x, rob, cfg, zeta=-1e9).to_json()["value"] is None


def test_ptr_tau_precondition():
    x = np.random.default_rng(12).normal(size=500)
    with pytest.raises(CalibrationError):
        ptr_pipeline(x, _rob(0.01), _ptr_config())
    with pytest.raises(CalibrationError):
        ptr_pipeline(x, _rob(0.3), MechanismConfig(1.0, 0.0, 2.0, 5, 0.5, 10, B=1.0))


def test_laplace_sampler():
    rng = make_rng(13)
    z = laplace(2.0, rng, 1_000_000)
    assert abs(np.median(z)) < 0.01
    assert abs(np.mean(np.abs(z)) / 2.0 - 1) <= 0.02
    for q in (0.1, 0.01):
        k = int((z > 2.0 * math.log(1 / q)).sum())
        lo, hi = stats.binomtest(k, len(z)).proportion_ci(0.999)
        assert lo <= q / 2 <= hi
    with pytest.raises(ParameterError):
        laplace(0.0, rng)


def test_product_field_matches_enumeration():
    rng = np.random.default_rng(14)
    x = rng.normal(size=(15, 3))
    axes = [axis_grid(1.0, 0.25)] * 3
    scores = CoordinateQuantileOracle(0.5, 1.0).axis_scores(x, axes, 0.25)
    for sparsity, K in ((None, None), (2, None), (1, 6), (2, 4)):
        pf = ProductScoreField(axes, scores, sparsity, K)
        full = pf.to_field()
        fin = np.isfinite(full.scores)
        assert pf.support_cells() == int(fin.sum())
        lw = -full.scores[fin] / 2
        assert pf.log_normalizer(1.0) == pytest.approx(float(logsumexp(lw)), rel=1e-12)
        for t, s in zip(full.points[::7], full.scores[::7]):
            assert pf.score(t) == s


def test_product_field_sampling_distribution():
    x = np.random.default_rng(15).normal(size=(9, 2))
    axes = [axis_grid(1.0, 0.5)] * 2
    scores = CoordinateQuantileOracle(0.5, 1.0).axis_scores(x, axes, 0.5)
    pf = ProductScoreField(axes, scores, sparsity=1)
    full = pf.to_field()
    p = exp_mech_probabilities(full, 1.0)
    index = {tuple(pt): i for i, pt in enumerate(full.points)}
    counts = np.zeros(len(p))
    for s in range(20_000):
        counts[index[tuple(pf.sample(1.0, s).value)]] += 1
    keep = p > 0
    assert counts[~keep].sum() == 0
    assert stats.chisquare(counts[keep], p[keep] * 20_000).pvalue > 0.01


def test_product_field_sparse_outputs():
    x = np.random.default_rng(16).normal(size=(50, 20))
    axes = [axis_grid(2.0, 0.2)] * 20
    scores = CoordinateQuantileOracle(0.5, 2.0).axis_scores(x, axes, 0.2)
    pf = ProductScoreField(axes, scores, sparsity=2)
    for s in range(50):
        assert np.count_nonzero(pf.sample(1.0, s).value) <= 2
    # exact counts exceed float range without trouble
    assert pf.support_cells() == sum(math.comb(20, j) * 20 ** j for j in range(3))
    assert ProductScoreField(axes, scores).support_cells() == 21 ** 20
    assert sum(pf.level_counts()) == pf.support_cells()
