import csv
import math

import numpy as np
import pytest

from dpkit.audit import (
    AuditUnsupportedError,
    ConstantMechanism,
    GaussianSource,
    GridMechanism,
    IdentityMechanism,
    PTRMechanism,
    RandomizedResponse,
    ScenarioError,
    analytic_epsilon,
    audit_dp,
    audit_robustness,
    bench_accuracy,
    clopper_pearson,
    equivalence_experiment,
    quantile_ci,
    upper_quantile,
)
from dpkit.core import ParameterError, ReplaceWithConstant, RobustnessProfile
from dpkit.estimators import RobustEstimatorSpec
from dpkit.mechanisms import MechanismConfig


def test_randomized_response_estimate():
    rep = audit_dp(RandomizedResponse(1.0), [([0], [1])], 1.0, samples=100_000, seed=1)
    assert 0.85 <= rep.epsilon_hat <= 1.0
    assert rep.passed


def test_constant_mechanism_zero():
    rep = audit_dp(ConstantMechanism(), [([0], [1]), ([2], [3])], 0.5, samples=10_000)
    assert rep.epsilon_hat == 0


def test_identity_flagged():
    # the CI-adjusted ratio of a zero-mass cell is finite but grows with samples
    rep = audit_dp(IdentityMechanism([0, 1]), [([0], [1])], 5.0, samples=10_000)
    assert rep.epsilon_hat > 5.0 and not rep.passed
    more = audit_dp(IdentityMechanism([0, 1]), [([0], [1])], 5.0, samples=100_000)
    assert more.epsilon_hat > rep.epsilon_hat
    assert analytic_epsilon([1, 0], [0, 1]) == math.inf


def test_audit_errors():
    with pytest.raises(ParameterError):
        audit_dp(RandomizedResponse(1.0), [([0], [1])], 1.0, samples=9_999)

    class Continuous:
        def sample_cells(self, data, size, seed):
            return np.zeros(size, dtype=int)

    with pytest.raises(AuditUnsupportedError):
        audit_dp(Continuous(), [([0], [1])], 1.0)


def _neighbors(rng, n):
    x = rng.normal(size=n)
    y = x.copy()
    y[rng.integers(n)] = rng.normal() * 3
    return x, y


def test_grid_mechanism_sound_and_analytic():
    rng = np.random.default_rng(0)
    cfg = MechanismConfig(1.0, rho=0.4, grid_res=0.2, radius=2)
    mech = GridMechanism(RobustEstimatorSpec("projectedMedian", 2), cfg)
    pairs = [_neighbors(rng, 7) for _ in range(3)]
    for a, b in pairs:
        assert analytic_epsilon(mech.probabilities(a), mech.probabilities(b)) <= 1.0 + 1e-12
    rep = audit_dp(mech, pairs, 1.0, samples=100_000, seed=2)
    assert rep.epsilon_hat <= 1.0


def test_ptr_mechanism_handle():
    n = 60
    rob = RobustEstimatorSpec("projectedMedian", 5).with_profile(RobustnessProfile(0.45, 0.05, 0.5))
    cfg = MechanismConfig(2.0, 0.05, 2.0, 12, 0.5, 5, B=1.0, beta=0.05)
    mech = PTRMechanism(rob, cfg)
    x = np.random.default_rng(3).normal(size=n)
    p = mech.probabilities(x)
    assert p.sum() == pytest.approx(1.0)
    assert len(p) == mech.finite_support
    counts = np.bincount(mech.sample_cells(x, 20_000, 4), minlength=len(p))
    assert abs(counts[-1] / 20_000 - p[-1]) < 0.02


def test_statistics_helpers():
    lo, hi = clopper_pearson([0, 5, 10], 10, 0.05)
    assert lo[0] == 0 and hi[-1] == 1
    assert np.all(lo <= hi)
    v = np.arange(1, 101)
    assert upper_quantile(v, 0.05) == 96
    a, b = quantile_ci(v, 0.5)
    assert a <= 50 <= b


def test_robustness_tau_zero_is_clean_error():
    med = RobustEstimatorSpec("projectedMedian", 1e9)
    rep = audit_robustness(med, GaussianSource(101), RobustnessProfile(0.0, 0.05, 0.4),
                           trials=200, seed=5)
    cell = rep.cells[0]
    assert cell["budget"] == 0 and cell["adversaries"] == []
    assert cell["quantile_error"] < 0.4


def test_robustness_median_vs_mean():
    source = GaussianSource(101)
    adv = [ReplaceWithConstant(1e6)]
    med = RobustEstimatorSpec("projectedMedian", 1e9)
    mean = RobustEstimatorSpec("trimmedMean", 1e9, fraction=0.0)
    prof = RobustnessProfile(0.2, 0.05, 1.0)
    rm = audit_robustness(med, source, prof, adv, trials=100, seed=6)
    rn = audit_robustness(mean, source, prof, adv, trials=100, seed=6)
    assert rm.passed and rm.cells[0]["quantile_error"] < 1
    assert not rn.passed and rn.cells[0]["median_error"] > 100
    with pytest.raises(ParameterError):
        audit_robustness(med, source, prof, adv, trials=99)


def test_bench_rows_and_worker_invariance(tmp_path):
    p1, p4 = tmp_path / "a.csv", tmp_path / "b.csv"
    r1 = bench_accuracy((100, 400), (1.0,), 200, seed=7, csv_path=p1)
    r4 = bench_accuracy((100, 400), (1.0,), 200, seed=7, csv_path=p4, workers=4)
    assert p1.read_bytes() == p4.read_bytes()
    assert r1.to_json() == r4.to_json()
    with open(p1) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["n", "epsilon", "trial", "error", "seed"]
    assert len(rows) - 1 == 2 * 200
    with pytest.raises(ParameterError):
        bench_accuracy((100,), (1.0,), 199)


def test_bench_shape():
    rep = bench_accuracy(trials=200, seed=8)
    assert rep.criteria["nonincreasing_in_n"]
    assert rep.criteria["within_factor_3"]


def test_report_json_reproducible(tmp_path):
    a = equivalence_experiment(1000, 1.0, trials=200, seed=9)
    b = equivalence_experiment(1000, 1.0, trials=200, seed=9, workers=3)
    assert a.to_json() == b.to_json()
    assert "wall_clock" not in a.to_dict()
    a.write(tmp_path / "r.json", timing=True)
    assert "wall_clock" in (tmp_path / "r.json").read_text()


def test_equivalence_band_and_stability():
    rep = equivalence_experiment(2000, 1.0, trials=500, seed=10)
    assert rep.passed
    ratios = [rep.cells[0]["ratio"]]
    for s in (11, 12):
        ratios.append(equivalence_experiment(2000, 1.0, trials=500, seed=s).cells[0]["ratio"])
    assert max(ratios) <= 2 * min(ratios)


def test_equivalence_small_epsilon():
    assert equivalence_experiment(2000, 0.25, trials=500, seed=13).passed


def test_equivalence_scenario_errors():
    with pytest.raises(ScenarioError):
        equivalence_experiment(2000, 0.001, trials=100)
    with pytest.raises(ScenarioError):
        equivalence_experiment(2000, 1.0, trials=100, mu=2.0)
