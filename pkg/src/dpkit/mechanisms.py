"""Exponential mechanisms over inverse-sensitivity score fields.

The continuous smooth mechanism is realized as a finite exponential mechanism
on an axis-aligned grid of cell width ``w <= rho`` covering ball(R + rho).
All cells have equal volume, so cell weights are ``exp(-score * eps / 2)``
and privacy holds exactly for the mechanism as implemented.

Sampling is inverse-CDF over grid points in lexicographic order, driven by a
single uniform draw from the Philox stream of ``seed``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import ParameterError, PrivacyBudget, as_dataset, derive_seed, make_rng
from .estimators import RobustEstimatorSpec, ball_grid
from .sensitivity import CoordinateQuantileOracle, QuantileOracle, ScoreField, sparsity_gate

INF = math.inf


class CalibrationError(ParameterError):
    """A mechanism was given parameters that void its guarantee."""


class EmptySupportError(ParameterError):
    pass


@dataclass(frozen=True)
class MechanismConfig:
    epsilon: float
    delta: float = 0.0
    rho: float = 0.0
    K: int | None = None
    grid_res: float = 0.1
    radius: float = 1.0
    dim: int = 1
    B: float | None = None
    beta: float = 0.05
    norm: str = "l2"
    sparsity: int | None = None
    valid: bool = True
    reason: str = ""

    def __post_init__(self):
        PrivacyBudget(self.epsilon, self.delta)
        if not self.grid_res > 0:
            raise ParameterError("grid resolution must be positive")
        if self.rho < 0:
            raise ParameterError("rho must be nonnegative")
        if self.rho > 0 and self.grid_res > self.rho * (1 + 1e-9):
            raise ParameterError(f"grid resolution {self.grid_res} exceeds rho {self.rho}")
        if self.K is not None and self.K < 1:
            raise ParameterError("K must be at least 1")
        if self.norm not in ("l2", "linf"):
            raise ParameterError(f"unknown norm {self.norm!r}")

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)

    def require_valid(self) -> None:
        if not self.valid:
            raise CalibrationError(f"invalid configuration: {self.reason}")


@dataclass
class MechanismOutput:
    value: np.ndarray | None
    score: float | None = None
    log_normalizer: float | None = None
    support_cells: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def bot(self) -> bool:
        return self.value is None

    @property
    def normalizer(self) -> float:
        return math.exp(self.log_normalizer) if self.log_normalizer is not None else math.nan

    def to_json(self, seed: int | None = None) -> dict:
        return {
            "value": None if self.bot else [float(v) for v in self.value],
            "bot": self.bot,
            "score": None if self.score is None else float(self.score),
            "support_cells": int(self.support_cells),
            "seed": seed,
        }


# -- finite exponential mechanism ------------------------------------------------


def log_weights(scores, epsilon: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(scores), -INF, -scores * epsilon / 2)


def exp_mech_probabilities(field: ScoreField, epsilon: float) -> np.ndarray:
    """Exact cell probabilities of the finite exponential mechanism."""
    if not epsilon > 0:
        raise ParameterError("epsilon must be positive")
    lw = log_weights(field.scores, epsilon)
    if not np.isfinite(lw).any():
        raise EmptySupportError("every score is infinite")
    return np.exp(lw - logsumexp(lw))


def _inverse_cdf(probs: np.ndarray, u) -> np.ndarray:
    cdf = np.cumsum(probs)
    idx = np.searchsorted(cdf, np.asarray(u) * cdf[-1], side="right")
    last = np.flatnonzero(probs > 0)[-1]
    return np.minimum(idx, last)


def exp_mech_finite(field: ScoreField, epsilon: float, seed: int) -> MechanismOutput:
    """Draw one grid point with probability proportional to exp(-score * eps / 2)."""
    probs = exp_mech_probabilities(field, epsilon)
    lw = log_weights(field.scores, epsilon)
    i = int(_inverse_cdf(probs, make_rng(seed).random()))
    return MechanismOutput(field.points[i].copy(), float(field.scores[i]), float(logsumexp(lw)),
                           int(np.isfinite(field.scores).sum()))


def exp_mech_sample_many(field: ScoreField, epsilon: float, size: int, seed: int) -> np.ndarray:
    """Indices of ``size`` independent draws (one vectorized stream)."""
    probs = exp_mech_probabilities(field, epsilon)
    return _inverse_cdf(probs, make_rng(seed).random(size))


# -- Laplace noise ----------------------------------------------------------------


def laplace(scale: float, rng: np.random.Generator, size=None):
    if not scale > 0:
        raise ParameterError("Laplace scale must be positive")
    return rng.laplace(0.0, scale, size)


# -- grids ------------------------------------------------------------------------


def axis_grid(radius: float, resolution: float) -> np.ndarray:
    m = int(math.floor(radius / resolution + 1e-9))
    return np.arange(-m, m + 1) * resolution


def output_grid(radius: float, rho: float, resolution: float, dim: int = 1,
                norm: str = "l2") -> np.ndarray:
    """Lexicographically ordered grid points ``i * w`` covering ball(R + rho)."""
    if norm == "l2":
        return ball_grid(radius + rho, resolution, dim)
    axis = axis_grid(radius + rho, resolution)
    if dim == 1:
        return axis.reshape(-1, 1)
    return np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def _randbelow(rng: np.random.Generator, n: int) -> int:
    """Uniform integer in [0, n) for arbitrary-size Python ints."""
    if n <= 0:
        raise ValueError("empty range")
    if n < 2**62:
        return int(rng.integers(0, n))
    bits = n.bit_length()
    words = (bits + 31) // 32
    while True:
        r = 0
        for w in rng.integers(0, 2**32, size=words, dtype=np.uint64):
            r = (r << 32) | int(w)
        r >>= words * 32 - bits
        if r < n:
            return r


class ProductScoreField:
    """Score ``max_j s_j(t_j)`` over a product of per-axis grids.

    Handles high-dimensional boxes without enumerating them. Points may be
    restricted to at most ``sparsity`` nonzero coordinates, and scores above
    ``K`` are dropped. Sampling is exact: a score level is drawn using exact
    integer level counts, then a point uniformly within that level.
    """

    def __init__(self, axes, axis_scores, sparsity: int | None = None, K: int | None = None):
        self.axes = [np.asarray(a, dtype=float) for a in axes]
        self.scores = [np.asarray(s, dtype=float) for s in axis_scores]
        self.d = len(self.axes)
        self.sparsity = self.d if sparsity is None else int(sparsity)
        self.K = K
        finite = np.unique(np.concatenate([s[np.isfinite(s)] for s in self.scores]))
        if K is not None:
            finite = finite[finite <= K]
        self.levels = finite
        self._zero = [np.flatnonzero(a == 0) for a in self.axes]

    def _counts(self, j: int, upper: float, lower: float | None = None):
        """(zero, nonzero) value counts on axis j with lower < score <= upper."""
        s = self.scores[j]
        mask = s <= upper
        if lower is not None:
            mask &= s > lower
        z = int(mask[self._zero[j]].sum())
        return z, int(mask.sum()) - z

    def count_le(self, level: float) -> int:
        """Number of admissible points with every axis score <= level."""
        poly = [1] + [0] * self.sparsity
        for j in range(self.d):
            z, nz = self._counts(j, level)
            nxt = [0] * (self.sparsity + 1)
            for c, v in enumerate(poly):
                if v:
                    nxt[c] += v * z
                    if c < self.sparsity:
                        nxt[c + 1] += v * nz
            poly = nxt
        return sum(poly)

    def level_counts(self) -> list[int]:
        out, prev = [], 0
        for lv in self.levels:
            c = self.count_le(lv)
            out.append(c - prev)
            prev = c
        return out

    def level_log_weights(self, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
        counts = self.level_counts()
        lw = np.array([math.log(c) - lv * epsilon / 2 if c > 0 else -INF
                       for c, lv in zip(counts, self.levels)])
        return self.levels, lw

    def log_normalizer(self, epsilon: float) -> float:
        _, lw = self.level_log_weights(epsilon)
        if not np.isfinite(lw).any():
            raise EmptySupportError("every score is infinite")
        return float(logsumexp(lw))

    def support_cells(self) -> int:
        return self.count_le(self.levels[-1]) if len(self.levels) else 0

    def score(self, t) -> float:
        t = np.asarray(t, dtype=float)
        if np.count_nonzero(t) > self.sparsity:
            return INF
        s = 0.0
        for j in range(self.d):
            i = int(np.argmin(np.abs(self.axes[j] - t[j])))
            s = max(s, self.scores[j][i])
        if self.K is not None and s > self.K:
            return INF
        return s

    def _sample_level(self, level: float, prev: float | None, rng) -> np.ndarray:
        """Uniform point among admissible points whose max axis score is ``level``."""
        k = self.sparsity
        # per axis: counts for (zero, below), (zero, at), (nonzero, below), (nonzero, at)
        cats = []
        for j in range(self.d):
            zb, nb = self._counts(j, prev) if prev is not None else (0, 0)
            za, na = self._counts(j, level, prev)
            cats.append((zb, za, nb, na))
        # completions[j][c][h]: ways to fill axes j.. with c nonzeros used, hit flag h
        comp = [[[0, 0] for _ in range(k + 1)] for _ in range(self.d + 1)]
        for c in range(k + 1):
            comp[self.d][c][1] = 1
        for j in range(self.d - 1, -1, -1):
            zb, za, nb, na = cats[j]
            for c in range(k + 1):
                for h in (0, 1):
                    total = zb * comp[j + 1][c][h] + za * comp[j + 1][c][1]
                    if c < k:
                        total += nb * comp[j + 1][c + 1][h] + na * comp[j + 1][c + 1][1]
                    comp[j][c][h] = total
        t = np.zeros(self.d)
        c, h = 0, 0
        for j in range(self.d):
            zb, za, nb, na = cats[j]
            options = [(zb * comp[j + 1][c][h], "zero", False),
                       (za * comp[j + 1][c][1], "zero", True)]
            if c < k:
                options += [(nb * comp[j + 1][c + 1][h], "nonzero", False),
                            (na * comp[j + 1][c + 1][1], "nonzero", True)]
            r = _randbelow(rng, sum(o[0] for o in options))
            for weight, kind, at in options:
                if r < weight:
                    break
                r -= weight
            s = self.scores[j]
            mask = (s <= level) & (s > prev) if (at and prev is not None) else \
                (s <= level) if at else (s <= prev)
            nonzero = self.axes[j] != 0
            mask &= nonzero if kind == "nonzero" else ~nonzero
            pool = np.flatnonzero(mask)
            t[j] = self.axes[j][pool[_randbelow(rng, len(pool))]]
            c += kind == "nonzero"
            h = h or int(at)
        return t

    def sample(self, epsilon: float, seed: int) -> MechanismOutput:
        levels, lw = self.level_log_weights(epsilon)
        if not np.isfinite(lw).any():
            raise EmptySupportError("every score is infinite")
        rng = make_rng(seed)
        probs = np.exp(lw - logsumexp(lw))
        i = int(_inverse_cdf(probs, rng.random()))
        prev = float(levels[i - 1]) if i > 0 else None
        t = self._sample_level(float(levels[i]), prev, rng)
        return MechanismOutput(t, float(levels[i]), float(logsumexp(lw)), self.support_cells())

    def to_field(self) -> ScoreField:
        """Enumerate every cell; only for small boxes."""
        mesh = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.d)
        parts = np.meshgrid(*self.scores, indexing="ij")
        scores = np.max(np.stack(parts, axis=-1).reshape(-1, self.d), axis=1)
        scores = sparsity_gate(mesh, scores, self.sparsity)
        if self.K is not None:
            scores = np.where(scores > self.K, INF, scores)
        return ScoreField(mesh, scores)


# -- inverse-sensitivity mechanisms ---------------------------------------------------


def default_oracle(f):
    """Analytic oracle for catalog estimators that have one."""
    if isinstance(f, RobustEstimatorSpec):
        if f.kind == "projectedMedian" and f.dim == 1:
            return QuantileOracle(0.5, f.radius)
        if f.kind == "topKSparseMedian":
            return CoordinateQuantileOracle(0.5, f.radius)
    raise ParameterError("no analytic oracle for this estimator; pass one explicitly")


def build_field(data, config: MechanismConfig, oracle, truncate: bool = False):
    """Score field of the smooth (optionally truncated) inverse sensitivity."""
    data = as_dataset(data, config.dim)
    K = config.K if truncate else None
    if config.norm == "linf" and hasattr(oracle, "axis_scores"):
        axes = [axis_grid(config.radius + config.rho, config.grid_res)] * config.dim
        return ProductScoreField(axes, oracle.axis_scores(data, axes, config.rho),
                                 config.sparsity, K)
    points = output_grid(config.radius, config.rho, config.grid_res, config.dim, config.norm)
    scores = oracle.field(data, points, config.rho, config.sparsity)
    if K is not None:
        scores = np.where(scores > K, INF, scores)
    return ScoreField(points, scores, rho=config.rho, cell_volume=config.grid_res ** config.dim)


def _draw(fld, epsilon: float, seed: int) -> MechanismOutput:
    if isinstance(fld, ProductScoreField):
        return fld.sample(epsilon, seed)
    return exp_mech_finite(fld, epsilon, seed)


def smooth_inv_mech(data, f, config: MechanismConfig, oracle=None, seed: int = 0,
                    epsilon: float | None = None) -> MechanismOutput:
    config.require_valid()
    if not config.rho > 0:
        raise ParameterError("smooth mechanism needs rho > 0")
    oracle = default_oracle(f) if oracle is None else oracle
    fld = build_field(data, config, oracle)
    return _draw(fld, config.epsilon if epsilon is None else epsilon, seed)


def truncated_inv_mech(data, f, config: MechanismConfig, oracle=None, seed: int = 0,
                       epsilon: float | None = None) -> MechanismOutput:
    """Smooth mechanism with every score above ``config.K`` given zero weight."""
    config.require_valid()
    if config.K is None:
        raise ParameterError("truncated mechanism needs K")
    oracle = default_oracle(f) if oracle is None else oracle
    fld = build_field(data, config, oracle, truncate=True)
    try:
        return _draw(fld, config.epsilon if epsilon is None else epsilon, seed)
    except EmptySupportError as exc:
        raise CalibrationError(f"no grid point has score <= K: {exc}") from None


def ptr_threshold(epsilon: float, delta: float, beta: float) -> float:
    return 2 * math.log(1 / min(delta, beta)) / epsilon


def ptr_min_tau(n: int, d: int, epsilon: float, delta: float, beta: float) -> float:
    return 8 * (d + math.log(1 / min(delta, beta))) / (n * epsilon)


def ptr_pipeline(data, rob: RobustEstimatorSpec, config: MechanismConfig, seed: int = 0,
                 oracle=None, zeta: float | None = None) -> MechanismOutput:
    """Propose-test-release around the truncated mechanism.

    Noisy distance to the unsafe set is compared against the threshold with
    half the budget; the truncated mechanism spends the other half. ``zeta``
    overrides the Laplace draw (for deterministic tests).
    """
    config.require_valid()
    data = as_dataset(data, config.dim)
    n = len(data)
    if config.K is None or config.B is None or not config.delta > 0:
        raise CalibrationError("PTR needs K, B and delta > 0")
    if rob.profile is not None:
        need = ptr_min_tau(n, config.dim, config.epsilon, config.delta, config.beta)
        if rob.profile.tau < need - 1e-12:
            raise CalibrationError(f"tau={rob.profile.tau:.4g} below required {need:.4g}")
    oracle = default_oracle(rob) if oracle is None else oracle
    dist = oracle.dist_to_bad(data, config.K, config.B)
    if zeta is None:
        zeta = float(laplace(2 / config.epsilon, make_rng(seed)))
    d_hat = dist + zeta
    threshold = ptr_threshold(config.epsilon, config.delta, config.beta)
    diag = {"dist": dist, "d_hat": d_hat, "threshold": threshold}
    if not d_hat > threshold:
        return MechanismOutput(None, diagnostics=diag)
    out = truncated_inv_mech(data, rob, config, oracle, derive_seed(seed, 1),
                             epsilon=config.epsilon / 2)
    out.diagnostics = diag
    return out
