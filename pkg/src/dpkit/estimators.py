"""Deterministic robust estimators, Tukey depth and derandomization.

Catalog estimators accept arrays of shape ``(..., n, d)`` so that brute-force
oracles can evaluate many candidate datasets in one call.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .core import (
    OutputRange,
    ParameterError,
    RobustnessProfile,
    UnsupportedDimensionError,
    as_dataset,
    make_rng,
)


def lower_median_index(n: int) -> int:
    """1-based rank of the lower median."""
    return (n + 1) // 2


def quantile_index(n: int, q: float) -> int:
    """1-based rank of the lower q-quantile order statistic."""
    if not 0 < q < 1:
        raise ParameterError("quantile level must lie in (0, 1)")
    if q == 0.5:
        return lower_median_index(n)
    return min(n, max(1, math.ceil(q * n - 1e-12)))


def project_l2(x, radius: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    norm = np.linalg.norm(x, axis=-1, keepdims=True)
    scale = np.where(norm > radius, radius / np.where(norm > 0, norm, 1.0), 1.0)
    return x * scale


def _check_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[-2] < 1:
        raise ParameterError("estimation needs at least one record")
    return x


def projected_median(x, radius: float) -> np.ndarray:
    """Coordinate-wise lower median, then projection onto ball(radius)."""
    x = _check_batch(x)
    m = lower_median_index(x.shape[-2])
    med = np.sort(x, axis=-2)[..., m - 1, :]
    return project_l2(med, radius)


def trimmed_mean(x, fraction: float, radius: float) -> np.ndarray:
    if not 0 <= fraction < 0.5:
        raise ParameterError("trim fraction must lie in [0, 1/2)")
    x = _check_batch(x)
    n = x.shape[-2]
    cut = int(math.floor(fraction * n))
    kept = np.sort(x, axis=-2)[..., cut : n - cut, :]
    return project_l2(kept.mean(axis=-2), radius)


def _top_k(v: np.ndarray, k: int) -> np.ndarray:
    # stable argsort on -|v| keeps the lower index first among ties
    order = np.argsort(-np.abs(v), axis=-1, kind="stable")
    mask = np.zeros(v.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :k], True, axis=-1)
    return np.where(mask, v, 0.0)


def top_k_sparse_mean(x, k: int, radius: float) -> np.ndarray:
    """Coordinate means, keep the k largest magnitudes, project."""
    x = _check_batch(x)
    if not 1 <= k <= x.shape[-1]:
        raise ParameterError("k must lie in [1, d]")
    # summing sorted values makes the float result independent of record order
    return project_l2(_top_k(np.sort(x, axis=-2).mean(axis=-2), k), radius)


def top_k_sparse_median(x, k: int, radius: float) -> np.ndarray:
    """Coordinate lower medians clipped to [-R, R], keep the k largest magnitudes.

    The box clip (rather than a Euclidean projection) keeps every coordinate
    separable, which the product-grid mechanisms rely on.
    """
    x = _check_batch(x)
    if not 1 <= k <= x.shape[-1]:
        raise ParameterError("k must lie in [1, d]")
    m = lower_median_index(x.shape[-2])
    med = np.clip(np.sort(x, axis=-2)[..., m - 1, :], -radius, radius)
    return _top_k(med, k)


# -- Tukey depth --------------------------------------------------------------


def tukey_depth(data, t) -> float:
    """Normalized Tukey depth of ``t``: min over directions of the closed
    halfspace count, divided by n.

    d=1 counts directly. d=2 evaluates the midpoints of the arcs between
    critical directions, which is exact. d=3 evaluates the strict count at
    every vertex of the great-circle arrangement (normals of record pairs),
    exact for records in general position.
    """
    data = as_dataset(data)
    n, d = data.shape
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.size != d:
        raise ParameterError("point and records have different dimension")
    if d > 3:
        raise UnsupportedDimensionError("Tukey depth is implemented for d <= 3")
    if n == 0:
        raise ParameterError("depth of an empty dataset is undefined")
    p = data - t
    if d == 1:
        x = p[:, 0]
        return min(int((x >= 0).sum()), int((x <= 0).sum())) / n
    if d == 2:
        return _depth_2d(p) / n
    return _depth_3d(p) / n


def _depth_2d(p: np.ndarray) -> int:
    at_t = np.all(p == 0, axis=1)
    q = p[~at_t]
    base = int(at_t.sum())
    if len(q) == 0:
        return base
    phi = np.sort(np.mod(np.arctan2(q[:, 1], q[:, 0]), 2 * np.pi))
    # count flips where a direction becomes orthogonal to some record
    crit = np.sort(np.mod(np.concatenate([phi + np.pi / 2, phi - np.pi / 2]), 2 * np.pi))
    gaps = np.diff(np.concatenate([crit, [crit[0] + 2 * np.pi]]))
    mids = np.mod(crit + gaps / 2, 2 * np.pi)
    dirs = np.stack([np.cos(mids), np.sin(mids)], axis=1)
    best = len(q)
    for chunk in np.array_split(dirs, max(1, len(dirs) // 512)):
        counts = (q @ chunk.T >= 0).sum(axis=0)
        best = min(best, int(counts.min()))
    return base + best


def _depth_3d(p: np.ndarray) -> int:
    at_t = np.all(p == 0, axis=1)
    q = p[~at_t]
    base = int(at_t.sum())
    if len(q) == 0:
        return base
    dirs = []
    for i, j in itertools.combinations(range(len(q)), 2):
        v = np.cross(q[i], q[j])
        nv = np.linalg.norm(v)
        if nv > 1e-12:
            dirs += [v / nv, -v / nv]
    if not dirs:
        # every record lies on one line through t
        u = q[0] / np.linalg.norm(q[0])
        return base + int(min((q @ u >= 0).sum(), (q @ -u >= 0).sum()))
    dirs = np.array(dirs)
    strict = (q @ dirs.T > 1e-12).sum(axis=0)
    return base + int(strict.min())


def ball_grid(radius: float, resolution: float, dim: int) -> np.ndarray:
    """Points ``i * resolution`` inside ball(radius), in lexicographic order."""
    if not resolution > 0:
        raise ParameterError("grid resolution must be positive")
    m = int(math.floor(radius / resolution + 1e-9))
    axis = np.arange(-m, m + 1) * resolution
    if dim == 1:
        return axis.reshape(-1, 1)
    mesh = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return mesh[np.linalg.norm(mesh, axis=1) <= radius + 1e-12]


def tukey_median_grid(data, radius: float, resolution: float) -> np.ndarray:
    """Deepest grid point in ball(radius); ties go to the lexicographically
    smallest point."""
    data = as_dataset(data)
    if data.shape[1] > 3:
        raise UnsupportedDimensionError("Tukey median is implemented for d <= 3")
    grid = ball_grid(radius, resolution, data.shape[1])
    # exact depth only where a cheap upper bound can still beat the best so far
    ub = _depth_upper_bound(data, grid)
    order = np.argsort(-ub, kind="stable")
    best, winner = -1, None
    for i in order:
        if ub[i] < best:
            break
        dep = tukey_depth(data, grid[i])
        # grid is in lexicographic order, so the smallest index wins ties
        if dep > best or (dep == best and i < winner):
            best, winner = dep, i
    return grid[winner].copy()


def _depth_upper_bound(data: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Halfspace counts along axes and diagonals; each bounds the depth."""
    n, d = data.shape
    dirs = list(np.eye(d))
    for i, j in itertools.combinations(range(d), 2):
        for sgn in (1.0, -1.0):
            u = np.zeros(d)
            u[i], u[j] = 1.0, sgn
            dirs.append(u)
    ub = np.full(len(grid), n)
    for u in dirs:
        proj = np.sort(data @ u)
        g = grid @ u
        # the 1e-9 guard keeps the bound valid under rounding of the projections
        above = n - np.searchsorted(proj, g - 1e-9, side="left")
        below = np.searchsorted(proj, g + 1e-9, side="right")
        ub = np.minimum(ub, np.minimum(above, below))
    return ub / n


# -- catalog -------------------------------------------------------------------

KINDS = ("projectedMedian", "trimmedMean", "tukeyMedianGrid", "topKSparseMean", "topKSparseMedian")


@dataclass(frozen=True)
class RobustEstimatorSpec:
    """A deterministic robust estimator with its claimed robustness profile.

    ``randomized`` marks estimators that still need :func:`derandomize` before
    the robust-to-private transformations will accept them.
    """

    kind: str
    radius: float
    dim: int = 1
    fraction: float = 0.1
    k: int = 1
    resolution: float = 0.1
    profile: RobustnessProfile | None = None
    randomized: bool = False
    norm: str = "l2"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown estimator kind {self.kind!r}")
        if self.kind == "trimmedMean" and not 0 <= self.fraction < 0.5:
            raise ParameterError("trim fraction must lie in [0, 1/2)")
        if self.kind.startswith("topK") and not 1 <= self.k <= self.dim:
            raise ParameterError("k must lie in [1, d]")
        if self.kind == "topKSparseMedian":
            object.__setattr__(self, "norm", "linf")

    @property
    def output_range(self) -> OutputRange:
        return OutputRange(self.radius, self.dim, self.norm)

    @property
    def sparsity(self) -> int | None:
        return self.k if self.kind.startswith("topK") else None

    @property
    def batched(self) -> bool:
        return self.kind != "tukeyMedianGrid"

    def with_profile(self, profile: RobustnessProfile) -> "RobustEstimatorSpec":
        return replace(self, profile=profile)

    def __call__(self, data) -> np.ndarray:
        return estimate(self, data)


def estimate(spec: RobustEstimatorSpec, data) -> np.ndarray:
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[-1] != spec.dim:
        raise ParameterError(f"estimator expects dimension {spec.dim}, got {x.shape[-1]}")
    if spec.kind == "projectedMedian":
        return projected_median(x, spec.radius)
    if spec.kind == "trimmedMean":
        return trimmed_mean(x, spec.fraction, spec.radius)
    if spec.kind == "topKSparseMean":
        return top_k_sparse_mean(x, spec.k, spec.radius)
    if spec.kind == "topKSparseMedian":
        return top_k_sparse_median(x, spec.k, spec.radius)
    if x.ndim > 2:
        return np.stack([estimate(spec, xi) for xi in x])
    return tukey_median_grid(x, spec.radius, spec.resolution)


def tukey_profile(n: int, d: int, beta: float, tau: float, c0: float = 1.0) -> RobustnessProfile:
    """Robustness profile of the projected Tukey median for N(mu, Sigma) data
    with I <= Sigma: alpha = 7 (alpha0 + tau), alpha0 = c0 sqrt((d + log 1/beta) / n).

    Raises outside the validity region tau <= 0.05, alpha0 <= 0.05, alpha <= 1.
    """
    alpha0 = c0 * math.sqrt((d + math.log(1 / beta)) / n)
    alpha = 7 * (alpha0 + tau)
    if tau > 0.05:
        raise ParameterError(f"Tukey profile needs tau <= 0.05, got {tau:.4g}")
    if alpha0 > 0.05:
        raise ParameterError(f"Tukey profile needs alpha0 <= 0.05, got {alpha0:.4g}")
    if alpha > 1:
        raise ParameterError(f"Tukey profile needs alpha <= 1, got {alpha:.4g}")
    return RobustnessProfile(tau, beta, alpha)


# -- randomized to deterministic ----------------------------------------------------


@dataclass
class Derandomized:
    """Deterministic wrapper around a randomized estimator.

    Calls :func:`derandomize` with a fixed seed, so the wrapper is a function
    of the data alone. Its profile doubles alpha and beta of the wrapped one.
    """

    rand_alg: Callable
    alpha: float
    candidate_grid: np.ndarray
    samples: int = 1000
    seed: int = 0
    profile: RobustnessProfile | None = None
    randomized: bool = field(default=False, init=False)

    def __post_init__(self):
        if self.profile is not None:
            p = self.profile
            self.profile = RobustnessProfile(p.tau, min(2 * p.beta, 1 - 1e-12), 2 * p.alpha)

    def __call__(self, data) -> np.ndarray:
        return derandomize(self.rand_alg, data, self.alpha, self.candidate_grid,
                           self.samples, self.seed)


def derandomize(rand_alg: Callable, data, alpha: float, candidate_grid, samples: int,
                seed: int) -> np.ndarray:
    """Centre of the alpha-ball holding the most draws of ``rand_alg(data, rng)``.

    The empirical ball mass stands in for the exact output distribution, so
    the answer carries Monte-Carlo error that shrinks with ``samples``.
    """
    if samples < 1:
        raise ParameterError("need at least one sample")
    grid = np.asarray(candidate_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid.reshape(-1, 1)
    if len(grid) == 0:
        raise ParameterError("candidate grid is empty")
    rng = make_rng(seed)
    draws = np.array([np.atleast_1d(rand_alg(data, rng)) for _ in range(samples)], dtype=float)
    counts = np.zeros(len(grid), dtype=np.int64)
    for chunk in range(0, len(grid), 1024):
        g = grid[chunk : chunk + 1024]
        dist = np.linalg.norm(draws[None, :, :] - g[:, None, :], axis=-1)
        counts[chunk : chunk + 1024] = (dist <= alpha).sum(axis=1)
    best = np.flatnonzero(counts == counts.max())
    # lexicographic tie-break over the candidates with maximal mass
    winners = grid[best]
    order = np.lexsort(winners.T[::-1])
    return winners[order[0]].copy()
