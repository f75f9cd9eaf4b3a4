"""Empirical auditors and Monte-Carlo experiments.

Every experiment takes a master seed. Trial ``i`` draws its data and noise
from ``derive_seed(master, i)`` only, so results do not depend on trial
order or on the number of worker threads. Reports serialize to JSON with
sorted keys; wall-clock time is kept out of the JSON unless requested so
repeated runs are byte-identical.
"""

from __future__ import annotations

import csv
import inspect
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.optimize import nnls

from .core import (
    LossSpec,
    ParameterError,
    PrivacyBudget,
    ReplaceWithConstant,
    RobustnessProfile,
    ShiftToExtreme,
    as_dataset,
    corrupt,
    derive_seed,
    gen_gaussian,
    loss_eval,
    make_rng,
)
from .estimators import RobustEstimatorSpec
from .mechanisms import (
    MechanismConfig,
    ProductScoreField,
    axis_grid,
    build_field,
    default_oracle,
    exp_mech_probabilities,
    exp_mech_sample_many,
    ptr_pipeline,
    smooth_inv_mech,
)
from .sensitivity import CoordinateQuantileOracle, QuantileOracle, ScoreField
from .transforms import calibrate_K, calibrate_tau_star, robust_to_private

EUCLIDEAN = LossSpec()


class AuditUnsupportedError(ParameterError):
    pass


class ScenarioError(ParameterError):
    pass


# -- reports ---------------------------------------------------------------------


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return _clean(v.tolist())
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


@dataclass
class ExperimentReport:
    scenario: str
    params: dict = field(default_factory=dict)
    cells: list = field(default_factory=list)
    criteria: dict = field(default_factory=dict)
    epsilon_hat: float | None = None
    master_seed: int | None = None
    wall_clock: float | None = None

    @property
    def passed(self) -> bool:
        return all(self.criteria.values())

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "scenario": self.scenario,
            "params": self.params,
            "cells": self.cells,
            "criteria": self.criteria,
            "epsilon_hat": self.epsilon_hat,
            "master_seed": self.master_seed,
            "passed": self.passed,
        }
        if timing:
            out["wall_clock"] = self.wall_clock
        return _clean(out)

    def to_json(self, timing: bool = False) -> str:
        return json.dumps(self.to_dict(timing), sort_keys=True, indent=2)

    def write(self, path, timing: bool = False) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json(timing) + "\n")


def _map(fn, items, workers: int = 1) -> list:
    if workers <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- statistics helpers ------------------------------------------------------------


def clopper_pearson(k, n: int, alpha: float):
    """Two-sided (1 - alpha) exact binomial interval, vectorized over k."""
    k = np.asarray(k, dtype=float)
    lo = np.where(k > 0, stats.beta.ppf(alpha / 2, k, n - k + 1), 0.0)
    hi = np.where(k < n, stats.beta.ppf(1 - alpha / 2, k + 1, n - k), 1.0)
    return lo, hi


def upper_quantile(values, beta: float) -> float:
    """The (1 - beta) empirical quantile, rounded toward the larger order statistic."""
    return float(np.quantile(np.sort(np.asarray(values, dtype=float)), 1 - beta, method="higher"))


def quantile_ci(values, q: float, alpha: float = 0.05) -> tuple[float, float]:
    """Distribution-free order-statistic interval for the q-quantile."""
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    lo = int(stats.binom.ppf(alpha / 2, n, q))
    hi = int(stats.binom.ppf(1 - alpha / 2, n, q))
    return float(x[max(lo - 1, 0)]), float(x[min(hi, n - 1)])


# -- mechanism handles for the DP auditor --------------------------------------------
#
# A handle exposes ``finite_support`` (number of output cells) and
# ``sample_cells(data, size, seed)`` returning cell indices. ``probabilities``
# returns the exact cell distribution where it is available.


class GridMechanism:
    """Smooth (or truncated) inverse-sensitivity mechanism on an enumerable grid."""

    def __init__(self, estimator, config: MechanismConfig, oracle=None, truncated: bool = False):
        self.estimator = estimator
        self.config = config
        self.oracle = default_oracle(estimator) if oracle is None else oracle
        self.truncated = truncated
        self.points = None

    def field(self, data) -> ScoreField:
        fld = build_field(data, self.config, self.oracle, truncate=self.truncated)
        if isinstance(fld, ProductScoreField):
            fld = fld.to_field()
        self.points = fld.points
        return fld

    @property
    def finite_support(self) -> int:
        if self.points is None:
            raise AuditUnsupportedError("grid unknown until a field has been built")
        return len(self.points)

    def probabilities(self, data) -> np.ndarray:
        return exp_mech_probabilities(self.field(data), self.config.epsilon)

    def sample_cells(self, data, size: int, seed: int) -> np.ndarray:
        return exp_mech_sample_many(self.field(data), self.config.epsilon, size, seed)


class PTRMechanism:
    """Propose-test-release; the last cell is the failure output."""

    def __init__(self, rob, config: MechanismConfig, oracle=None):
        self.inner = GridMechanism(rob, config, oracle, truncated=True)
        self.config = config

    @property
    def finite_support(self) -> int:
        return self.inner.finite_support + 1

    def _pass_prob(self, data) -> float:
        c = self.config
        dist = self.inner.oracle.dist_to_bad(as_dataset(data, c.dim), c.K, c.B)
        if math.isinf(dist):
            return 1.0
        thr = 2 * math.log(1 / min(c.delta, c.beta)) / c.epsilon
        return float(stats.laplace.sf(thr - dist, scale=2 / c.epsilon))

    def probabilities(self, data) -> np.ndarray:
        fld = self.inner.field(data)
        inner = exp_mech_probabilities(fld, self.config.epsilon / 2) * self._pass_prob(data)
        return np.append(inner, 1 - inner.sum())

    def sample_cells(self, data, size: int, seed: int) -> np.ndarray:
        c = self.config
        data = as_dataset(data, c.dim)
        fld = self.inner.field(data)
        dist = self.inner.oracle.dist_to_bad(data, c.K, c.B)
        thr = 2 * math.log(1 / min(c.delta, c.beta)) / c.epsilon
        zeta = make_rng(seed).laplace(0.0, 2 / c.epsilon, size)
        ok = dist + zeta > thr
        out = np.full(size, len(fld.points))
        if ok.any():
            out[ok] = exp_mech_sample_many(fld, c.epsilon / 2, int(ok.sum()), derive_seed(seed, 1))
        return out


class RandomizedResponse:
    """Reports a single private bit, flipped with probability 1 / (1 + e^eps)."""

    finite_support = 2

    def __init__(self, epsilon: float):
        self.epsilon = epsilon

    def probabilities(self, data) -> np.ndarray:
        bit = int(np.asarray(data).reshape(-1)[0])
        keep = math.exp(self.epsilon) / (1 + math.exp(self.epsilon))
        return np.array([keep, 1 - keep]) if bit == 0 else np.array([1 - keep, keep])

    def sample_cells(self, data, size: int, seed: int) -> np.ndarray:
        p = self.probabilities(data)
        return (make_rng(seed).random(size) < p[1]).astype(int)


class ConstantMechanism:
    finite_support = 1

    def probabilities(self, data) -> np.ndarray:
        return np.ones(1)

    def sample_cells(self, data, size: int, seed: int) -> np.ndarray:
        return np.zeros(size, dtype=int)


class IdentityMechanism:
    """Releases the first record exactly (not private); cells are ``values``."""

    def __init__(self, values):
        self.values = [float(v) for v in values]
        self.finite_support = len(self.values)

    def probabilities(self, data) -> np.ndarray:
        p = np.zeros(self.finite_support)
        p[self.values.index(float(np.asarray(data).reshape(-1)[0]))] = 1
        return p

    def sample_cells(self, data, size: int, seed: int) -> np.ndarray:
        return np.full(size, int(np.argmax(self.probabilities(data))))


def analytic_epsilon(p, q) -> float:
    """max over cells of |log p - log q|; infinite if supports differ."""
    p, q = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    if np.any((p > 0) != (q > 0)):
        return math.inf
    both = p > 0
    return float(np.max(np.abs(np.log(p[both]) - np.log(q[both])))) if both.any() else 0.0


def audit_dp(mech, pairs, epsilon: float, samples: int = 100_000, seed: int = 0,
             confidence: float = 0.999) -> ExperimentReport:
    """Sampling audit of the e^eps ratio bound on every output cell.

    The per-cell probabilities get Clopper-Pearson intervals with a Bonferroni
    split of ``1 - confidence`` over all cells, pairs and both directions, and
    eps_hat is the largest log ratio of a lower bound over an upper bound.
    """
    if not hasattr(mech, "sample_cells") or not (
            hasattr(type(mech), "finite_support") or "finite_support" in vars(mech)):
        raise AuditUnsupportedError("mechanism has no finite cell mapping")
    if samples < 10_000:
        raise ParameterError("the DP audit needs at least 10^4 samples per side")
    t0 = time.perf_counter()
    pairs = list(pairs)
    counts = []
    for i, (a, b) in enumerate(pairs):
        ca = mech.sample_cells(a, samples, derive_seed(seed, 2 * i))
        cb = mech.sample_cells(b, samples, derive_seed(seed, 2 * i + 1))
        m = mech.finite_support
        counts.append((np.bincount(ca, minlength=m), np.bincount(cb, minlength=m)))
    cells = counts[0][0].size if counts else 1
    alpha = (1 - confidence) / max(1, 2 * cells * len(pairs))
    eps_hat = 0.0
    rows = []
    for i, (na, nb) in enumerate(counts):
        la, ha = clopper_pearson(na, samples, alpha)
        lb, hb = clopper_pearson(nb, samples, alpha)
        with np.errstate(divide="ignore"):
            r = np.maximum(np.log(la) - np.log(hb), np.log(lb) - np.log(ha))
        worst = float(np.max(r))
        eps_hat = max(eps_hat, worst)
        rows.append({"pair": i, "eps_hat": max(worst, 0.0)})
    return ExperimentReport(
        "audit-dp",
        {"epsilon": epsilon, "samples": samples, "pairs": len(pairs), "confidence": confidence},
        rows,
        {"eps_hat<=epsilon": eps_hat <= epsilon},
        epsilon_hat=eps_hat,
        master_seed=seed,
        wall_clock=time.perf_counter() - t0,
    )


# -- robustness ---------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianSource:
    """n i.i.d. draws of N(mu, sigma); ``truth`` is the estimation target."""

    n: int
    mu: tuple = (0.0,)
    sigma: float = 1.0

    @property
    def truth(self) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.mu, dtype=float))

    @property
    def dim(self) -> int:
        return self.truth.size

    def sample(self, seed: int) -> np.ndarray:
        return gen_gaussian(self.n, self.truth, self.sigma, seed)


def default_adversaries(d: int = 1) -> list:
    """Shift-to-extreme along every signed axis plus far constants.

    For a 1-d median the two shifts realize the worst case exactly.
    """
    suite = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 1.0
        suite += [ShiftToExtreme(tuple(e), 1e3), ShiftToExtreme(tuple(-e), 1e3)]
    suite += [ReplaceWithConstant(tuple([1e6] * d)), ReplaceWithConstant(tuple([-1e6] * d))]
    return suite


def _call(alg, data, seed: int):
    try:
        nparams = len(inspect.signature(alg).parameters)
    except (TypeError, ValueError):
        nparams = 1
    out = alg(data, seed) if nparams >= 2 else alg(data)
    return np.atleast_1d(np.asarray(out, dtype=float))


def worst_errors(alg, source, budget: int, adversaries, trials: int, seed: int,
                 loss: LossSpec = EUCLIDEAN, workers: int = 1) -> np.ndarray:
    """Per-trial worst loss over the adversary suite at the given budget."""
    truth = source.truth

    def trial(i):
        s = derive_seed(seed, i)
        data = source.sample(s)
        errs = [loss_eval(loss, _call(alg, data, derive_seed(s, 7)), truth)]
        if budget > 0:
            errs = []
            for j, adv in enumerate(adversaries):
                bad = corrupt(data, budget, adv, derive_seed(s, 100 + j))
                errs.append(loss_eval(loss, _call(alg, bad, derive_seed(s, 7)), truth))
        return max(errs)

    return np.array(_map(trial, range(trials), workers))


def audit_robustness(alg, dist, profile: RobustnessProfile, adversaries=None, trials: int = 500,
                     seed: int = 0, loss: LossSpec = EUCLIDEAN, workers: int = 1,
                     confidence: float = 0.95) -> ExperimentReport:
    """Failure frequency Pr[worst tested corruption error > alpha] against beta.

    The adversary suite is finite, so this lower-bounds the failure
    probability over all corruptions.
    """
    if trials < 100:
        raise ParameterError("robustness audits need at least 100 trials")
    t0 = time.perf_counter()
    adversaries = default_adversaries(dist.dim) if adversaries is None else list(adversaries)
    budget = profile.budget(dist.n)
    errs = worst_errors(alg, dist, budget, adversaries, trials, seed, loss, workers)
    fails = int((errs > profile.alpha).sum())
    lo, hi = clopper_pearson(fails, trials, 1 - confidence)
    cell = {
        "n": dist.n, "tau": profile.tau, "budget": budget, "alpha": profile.alpha,
        "beta": profile.beta, "failures": fails, "failure_rate": fails / trials,
        "ci_low": float(lo), "ci_high": float(hi),
        "median_error": float(np.median(errs)),
        "quantile_error": upper_quantile(errs, profile.beta),
        "adversaries": [a.name for a in adversaries] if budget > 0 else [],
    }
    return ExperimentReport("audit-robust", {"trials": trials}, [cell],
                            {"failure_rate<=beta": bool(lo <= profile.beta)},
                            master_seed=seed, wall_clock=time.perf_counter() - t0)


def clean_baseline(alg, source, beta: float, trials: int = 500, seed: int = 0,
                   loss: LossSpec = EUCLIDEAN, workers: int = 1) -> float:
    """Monte-Carlo (1 - beta) quantile of the uncorrupted error: the default alpha0."""
    return upper_quantile(worst_errors(alg, source, 0, [], trials, seed, loss, workers), beta)


def robust_alpha(alg, source, tau: float, beta: float, trials: int = 500, seed: int = 0,
                 adversaries=None, loss: LossSpec = EUCLIDEAN, workers: int = 1) -> float:
    """Audited alpha: (1 - beta) quantile of the worst tested corruption error."""
    adversaries = default_adversaries(source.dim) if adversaries is None else adversaries
    budget = int(math.floor(source.n * tau + 1e-9))
    return upper_quantile(worst_errors(alg, source, budget, adversaries, trials, seed, loss,
                                       workers), beta)


# -- accuracy benchmark ---------------------------------------------------------------


def bench_accuracy(n_grid=(200, 800, 3200), eps_grid=(0.5, 1.0), trials: int = 200,
                   seed: int = 0, beta: float = 0.05, radius: float = 10.0,
                   csv_path=None, workers: int = 1) -> ExperimentReport:
    """Gaussian mean via the smooth mechanism around the projected median.

    rho = 1/sqrt(n) and w = rho/2. The per-cell (1 - beta) quantile error is
    fitted against a sqrt(1/n) + b log(Rn)/(n eps) by nonnegative least
    squares, and against a single constant C (sqrt(1/n) + log(Rn)/(n eps)).
    """
    if trials < 200:
        raise ParameterError("the accuracy benchmark needs at least 200 trials per cell")
    t0 = time.perf_counter()
    spec = RobustEstimatorSpec("projectedMedian", radius)
    rows, cells = [], []
    for ci, (n, eps) in enumerate((n, e) for n in n_grid for e in eps_grid):
        rho = 1 / math.sqrt(n)
        config = MechanismConfig(eps, rho=rho, grid_res=rho / 2, radius=radius)
        source = GaussianSource(n)
        master = derive_seed(seed, ci)

        def trial(i, source=source, config=config, master=master):
            s = derive_seed(master, i)
            out = smooth_inv_mech(source.sample(s), spec, config, seed=derive_seed(s, 1))
            return s, float(abs(out.value[0]))

        res = _map(trial, range(trials), workers)
        errs = np.array([r[1] for r in res])
        rows += [(n, eps, i, e, s) for i, (s, e) in enumerate(res)]
        lo, hi = quantile_ci(errs, 1 - beta)
        cells.append({"n": n, "epsilon": eps, "quantile_error": upper_quantile(errs, beta),
                      "quantile_ci": [lo, hi], "median_error": float(np.median(errs))})
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "epsilon", "trial", "error", "seed"])
            for n, eps, i, e, s in rows:
                w.writerow([n, repr(float(eps)), i, format(e, ".17g"), s])
    x1 = np.array([1 / math.sqrt(c["n"]) for c in cells])
    x2 = np.array([math.log(radius * c["n"]) / (c["n"] * c["epsilon"]) for c in cells])
    q = np.array([c["quantile_error"] for c in cells])
    coef, _ = nnls(np.stack([x1, x2], axis=1), q)
    C = float(np.exp(np.mean(np.log(q / (x1 + x2)))))
    ratio = q / (C * (x1 + x2))
    monotone = True
    for eps in eps_grid:
        row = [c for c in cells if c["epsilon"] == eps]
        for a, b in zip(row, row[1:]):
            monotone &= b["quantile_ci"][0] <= a["quantile_ci"][1]
    return ExperimentReport(
        "bench",
        {"n_grid": list(n_grid), "eps_grid": list(eps_grid), "trials": trials, "beta": beta,
         "radius": radius, "fit_a": float(coef[0]), "fit_b": float(coef[1]), "fit_C": C,
         "csv_rows": len(rows)},
        cells,
        {"within_factor_3": bool(np.all((ratio <= 3) & (ratio >= 1 / 3))),
         "nonincreasing_in_n": bool(monotone)},
        master_seed=seed, wall_clock=time.perf_counter() - t0,
    )


# -- acceptance experiments -----------------------------------------------------------


def pure_transform_experiment(n_grid=(200, 800, 3200), eps_grid=(0.5, 1.0), trials: int = 500,
                              seed: int = 0, beta: float = 0.025, radius: float = 10.0,
                              workers: int = 1) -> ExperimentReport:
    """Pure robust-to-private transformation of the projected median at tau = tau*.

    Per cell: alpha0 is the clean (1 - beta) error quantile, alpha is the
    audited robust error at tau*, and the check is that the mechanism's
    (1 - 2 beta) error quantile stays within the claimed 4 alpha.
    """
    t0 = time.perf_counter()
    spec = RobustEstimatorSpec("projectedMedian", radius)
    cells = []
    for ci, (n, eps) in enumerate((n, e) for n in n_grid for e in eps_grid):
        source = GaussianSource(n)
        master = derive_seed(seed, ci)
        alpha0 = clean_baseline(spec, source, beta, trials, derive_seed(master, 1), workers=workers)
        tau = calibrate_tau_star(1, radius, alpha0, beta, n, eps)
        alpha = robust_alpha(spec, source, tau, beta, trials, derive_seed(master, 2),
                             workers=workers)
        rob = spec.with_profile(RobustnessProfile(tau, beta, alpha))
        cal = robust_to_private(rob, PrivacyBudget(eps), alpha0, "pure", n)
        run_seed = derive_seed(master, 3)

        def trial(i, cal=cal, source=source, run_seed=run_seed):
            s = derive_seed(run_seed, i)
            out = smooth_inv_mech(source.sample(s), rob, cal.config, seed=derive_seed(s, 1))
            return float(abs(out.value[0] - source.truth[0]))

        errs = np.array(_map(trial, range(trials), workers))
        q = upper_quantile(errs, 2 * beta)
        cells.append({"n": n, "epsilon": eps, "alpha0": alpha0, "tauStar": tau,
                      "budget": int(math.floor(n * tau + 1e-9)), "alpha": alpha,
                      "K": cal.K, "claimedError": cal.claimed_error, "quantile_error": q,
                      "valid": cal.valid, "ok": bool(cal.valid and q <= cal.claimed_error)})
    decreasing = True
    for eps in eps_grid:
        row = [c["quantile_error"] for c in cells if c["epsilon"] == eps]
        decreasing &= row[-1] < row[0]
    return ExperimentReport(
        "pure-transform", {"trials": trials, "beta": beta, "radius": radius}, cells,
        {"error<=4alpha": all(c["ok"] for c in cells), "decreasing_in_n": bool(decreasing)},
        master_seed=seed, wall_clock=time.perf_counter() - t0)


def ptr_experiment(n: int = 500, epsilon: float = 1.0, delta: float = 1e-3, beta: float = 1e-3,
                   runs: int = 500, seed: int = 0, radius: float = 10.0,
                   alpha_trials: int = 4000, workers: int = 1) -> ExperimentReport:
    """Propose-test-release around the projected median on N(0, 1) data.

    tau is the smallest value the approximate transformation accepts; alpha
    is audited by Monte-Carlo at that tau. A planted dataset with half its
    records at -5 and half at +5 lies in the unsafe set.
    """
    t0 = time.perf_counter()
    source = GaussianSource(n)
    spec = RobustEstimatorSpec("projectedMedian", radius)
    tau = 8 * (1 + math.log(1 / min(delta, beta))) / (n * epsilon)
    alpha = robust_alpha(spec, source, tau, beta, alpha_trials, derive_seed(seed, 1),
                         workers=workers)
    rob = spec.with_profile(RobustnessProfile(tau, beta, alpha))
    cal = robust_to_private(rob, PrivacyBudget(epsilon, delta), None, "approx", n)

    def trial(i):
        s = derive_seed(derive_seed(seed, 2), i)
        out = ptr_pipeline(source.sample(s), rob, cal.config, derive_seed(s, 1))
        return None if out.bot else float(abs(out.value[0]))

    res = _map(trial, range(runs), workers)
    errs = np.array([r for r in res if r is not None])
    released = len(errs)
    _, rel_hi = clopper_pearson(released, runs, 0.05)

    planted = np.concatenate([np.full(n // 2, -5.0), np.full(n - n // 2, 5.0)])
    bots = sum(ptr_pipeline(planted, rob, cal.config, derive_seed(derive_seed(seed, 3), i)).bot
               for i in range(runs))
    _, bot_hi = clopper_pearson(bots, runs, 0.05)
    cell = {"tau": tau, "alpha": alpha, "K": cal.K, "B": cal.B, "threshold": cal.threshold,
            "claimedError": cal.claimed_error, "released": released,
            "release_rate": released / runs, "max_error": float(errs.max()) if released else None,
            "planted_dist": QuantileOracle(0.5, radius).dist_to_bad(planted, cal.K, cal.B),
            "planted_bot_rate": bots / runs}
    return ExperimentReport(
        "ptr", {"n": n, "epsilon": epsilon, "delta": delta, "beta": beta, "runs": runs},
        [cell],
        {"release_rate>=1-2beta": bool(rel_hi >= 1 - 2 * beta),
         "error<=7alpha": bool(released and errs.max() <= cal.claimed_error),
         "planted_bot_rate>=1-delta/2": bool(bot_hi >= 1 - delta / 2)},
        master_seed=seed, wall_clock=time.perf_counter() - t0)


def discrete_utility_experiment(n: int = 401, epsilon: float = 1.0, beta: float = 0.05,
                                trials: int = 2000, seed: int = 0, top: int = 20) -> ExperimentReport:
    """Plain inverse-sensitivity mechanism for the median on integers 0..top.

    Records are rounded N(top/2, 9) values clipped to the range; replacements
    may be any integer in the range, so len is the analytic interval count
    with bounds 0 and top.
    """
    t0 = time.perf_counter()
    outputs = np.arange(top + 1, dtype=float).reshape(-1, 1)
    K = calibrate_K("discrete", epsilon=epsilon, beta=beta, diameter=float(top),
                    range_size=top + 1)
    oracle = QuantileOracle(0.5, None, 0.0, float(top))
    exceed = 0
    for i in range(trials):
        s = derive_seed(seed, i)
        data = np.clip(np.round(gen_gaussian(n, [top / 2], 9.0, s)), 0, top)
        fld = ScoreField(outputs, oracle.field(data, outputs))
        idx = exp_mech_sample_many(fld, epsilon, 1, derive_seed(s, 1))[0]
        err = abs(outputs[idx, 0] - oracle.estimator(data)[0])
        exceed += err > oracle.modulus(data, min(K, n))
    lo, _ = clopper_pearson(exceed, trials, 0.05)
    return ExperimentReport(
        "discrete-utility", {"n": n, "epsilon": epsilon, "beta": beta, "trials": trials, "K": K},
        [{"exceed": exceed, "rate": exceed / trials, "ci_low": float(lo)}],
        {"exceed_rate<=beta": bool(lo <= beta)}, master_seed=seed,
        wall_clock=time.perf_counter() - t0)


def equivalence_experiment(n: int = 2000, epsilon: float = 1.0, trials: int = 500, seed: int = 0,
                           beta: float = 0.05, mu: float = 0.5, band: float = 8.0,
                           workers: int = 1) -> ExperimentReport:
    """Compare robust error at tau = log n / (n eps) with the private error.

    Bounded-mean scenario: N(mu, 1) data with |mu| <= 1, projected median
    with R = 1. alpha_rob is the audited worst-adversary error quantile;
    alpha_priv is the (1 - beta) error quantile of the pure transformation.
    """
    t0 = time.perf_counter()
    if abs(mu) > 1:
        raise ScenarioError("bounded-mean scenario needs |mu| <= 1")
    tau = math.log(n) / (n * epsilon)
    if not epsilon > math.log(n) / n or tau > 0.25:
        raise ScenarioError(f"tau = log n/(n eps) = {tau:.4g}; need eps > log(n)/n and tau <= 1/4")
    radius = 1.0
    source = GaussianSource(n, (mu,))
    spec = RobustEstimatorSpec("projectedMedian", radius)
    alpha_rob = robust_alpha(spec, source, tau, beta, trials, derive_seed(seed, 1), workers=workers)
    alpha0 = clean_baseline(spec, source, beta, trials, derive_seed(seed, 2), workers=workers)
    tau_star = calibrate_tau_star(1, radius, alpha0, beta, n, epsilon)
    alpha_at = robust_alpha(spec, source, tau_star, beta, trials, derive_seed(seed, 3),
                            workers=workers)
    rob = spec.with_profile(RobustnessProfile(tau_star, beta, max(alpha_at, alpha0)))
    cal = robust_to_private(rob, PrivacyBudget(epsilon), alpha0, "pure", n)

    def trial(i):
        s = derive_seed(derive_seed(seed, 4), i)
        out = smooth_inv_mech(source.sample(s), rob, cal.config, seed=derive_seed(s, 1))
        return float(abs(out.value[0] - mu))

    alpha_priv = upper_quantile(_map(trial, range(trials), workers), beta)
    ratio = alpha_priv / alpha_rob
    return ExperimentReport(
        "equivalence",
        {"n": n, "epsilon": epsilon, "beta": beta, "trials": trials, "mu": mu, "band": band},
        [{"tau": tau, "alpha_rob": alpha_rob, "alpha0": alpha0, "tauStar": tau_star,
          "alpha_priv": alpha_priv, "ratio": ratio}],
        {"ratio_in_band": bool(1 / band <= ratio <= band)},
        master_seed=seed, wall_clock=time.perf_counter() - t0)


def sparse_experiment(d: int = 20, k: int = 2, n: int = 1000, epsilon: float = 1.0,
                      trials: int = 300, seed: int = 0, beta: float = 0.05,
                      radius: float = 10.0, workers: int = 1) -> ExperimentReport:
    """Sparse-score versus dense-score mechanism for a k-sparse Gaussian mean.

    Both use the coordinate-median score on an l-infinity box with the same
    rho (the clean (1 - beta) quantile of the l-infinity median error) and
    the same data; the sparse score is infinite off k-sparse points.
    """
    t0 = time.perf_counter()
    mu = np.zeros(d)
    mu[:k] = [1.0 if j % 2 == 0 else -1.0 for j in range(k)]
    source = GaussianSource(n, tuple(mu))
    spec = RobustEstimatorSpec("topKSparseMedian", radius, d, k=k)
    oracle = CoordinateQuantileOracle(0.5, radius)

    def linf_err(i):
        data = source.sample(derive_seed(derive_seed(seed, 1), i))
        return float(np.max(np.abs(np.median(data, axis=0) - mu)))

    rho = upper_quantile(_map(linf_err, range(trials), workers), beta)
    w = rho / 2
    axes = [axis_grid(radius + rho, w)] * d

    def trial(i):
        s = derive_seed(derive_seed(seed, 2), i)
        data = source.sample(s)
        scores = oracle.axis_scores(data, axes, rho)
        out = []
        for j, sp in enumerate((k, None)):
            t = ProductScoreField(axes, scores, sp).sample(epsilon, derive_seed(s, 1 + j)).value
            out.append(float(np.linalg.norm(t - mu)))
        return out

    res = np.array(_map(trial, range(trials), workers))
    q_sparse = upper_quantile(res[:, 0], beta)
    q_dense = upper_quantile(res[:, 1], beta)
    K_sparse = calibrate_K("sparse", epsilon=epsilon, beta=beta, d=d, k=k, R=radius, rho=rho)
    K_dense = calibrate_K("continuous", epsilon=epsilon, beta=beta, d=d, R=radius, rho=rho)
    return ExperimentReport(
        "sparse",
        {"d": d, "k": k, "n": n, "epsilon": epsilon, "trials": trials, "beta": beta,
         "radius": radius, "estimator": spec.kind},
        [{"rho": rho, "quantile_error_sparse": q_sparse, "quantile_error_dense": q_dense,
          "K_sparse": K_sparse, "K_dense": K_dense,
          "median_error_sparse": float(np.median(res[:, 0])),
          "median_error_dense": float(np.median(res[:, 1]))}],
        {"sparse<dense": bool(q_sparse < q_dense)},
        master_seed=seed, wall_clock=time.perf_counter() - t0)
