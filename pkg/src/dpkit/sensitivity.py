"""Path-length (inverse sensitivity) oracles and related local quantities.

``len_f(S; t)`` is the fewest record replacements that make ``f`` output
``t``. The oracles here compute it exactly for 1-d quantile estimators
(:class:`QuantileOracle`), coordinate-wise for box-clipped medians
(:class:`CoordinateQuantileOracle`), and by exhaustive enumeration over a
finite replacement grid for any estimator on small datasets
(:class:`BruteForceOracle`).

Every oracle also provides the local modulus of continuity and the Hamming
distance to the unsafe set ``{S : modulus(S, K + 1) > B}``.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .core import ParameterError, as_dataset
from .estimators import RobustEstimatorSpec, quantile_index

INF = math.inf


def l0_norm(t) -> np.ndarray:
    return np.count_nonzero(np.asarray(t), axis=-1)


def sparsity_gate(points, scores, k: int | None) -> np.ndarray:
    """Set the score of every point with more than ``k`` nonzeros to infinity."""
    scores = np.asarray(scores, dtype=float)
    if k is None:
        return scores
    return np.where(l0_norm(points) > k, INF, scores)


class QuantileOracle:
    """Exact path length of ``clip(lower q-quantile)`` for 1-d data.

    With sorted values x(1..n) and m the quantile rank, k replacements reach
    exactly the outputs in [x(m-k), x(m+k)], where out-of-range ranks take the
    domain bounds ``lo``/``hi`` (default -inf/+inf). Clipping to [-R, R] is
    monotone, so it is applied to the order statistics directly.
    """

    def __init__(self, q: float = 0.5, radius: float | None = None,
                 lo: float = -INF, hi: float = INF):
        self.q = q
        self.radius = radius
        self.lo = lo
        self.hi = hi

    @classmethod
    def for_estimator(cls, spec: RobustEstimatorSpec) -> "QuantileOracle":
        if spec.kind != "projectedMedian" or spec.dim != 1:
            raise ParameterError("analytic oracle needs a 1-d projected median")
        return cls(0.5, spec.radius)

    def estimator(self, data) -> np.ndarray:
        y, m = self._extended(data)
        return np.array([y[m]])

    def _clip(self, v):
        if self.radius is None:
            return v
        return np.clip(v, -self.radius, self.radius)

    def _extended(self, data):
        data = as_dataset(data)
        if data.shape[1] != 1:
            raise ParameterError("analytic quantile oracle needs d = 1")
        n = data.shape[0]
        if n == 0:
            raise ParameterError("empty dataset")
        x = np.sort(data[:, 0])
        y = self._clip(np.concatenate([[self.lo], x, [self.hi]]))
        return y, quantile_index(n, self.q)

    def smooth(self, data, t, rho: float = 0.0) -> np.ndarray:
        """Vectorized rho-smooth path length at targets ``t`` (rho=0: plain)."""
        if rho < 0:
            raise ParameterError("rho must be nonnegative")
        y, m = self._extended(data)
        n = len(y) - 2
        t = np.asarray(t, dtype=float).reshape(-1)
        i_up = np.searchsorted(y, t - rho, side="left")
        i_dn = np.searchsorted(y, t + rho, side="right") - 1
        k = np.maximum(np.maximum(i_up - m, 0), np.maximum(m - i_dn, 0)).astype(float)
        k[(i_up > n + 1) | (i_dn < 0)] = INF
        return k

    def len(self, data, t) -> float:
        return float(self.smooth(data, np.atleast_1d(t)[:1], 0.0)[0])

    def field(self, data, points, rho: float = 0.0, sparsity: int | None = None) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 1)
        return sparsity_gate(points, self.smooth(data, points[:, 0], rho), sparsity)

    def modulus(self, data, K: int) -> float:
        y, m = self._extended(data)
        n = len(y) - 2
        if K < 0 or K > n:
            raise ParameterError(f"K={K} outside [0, {n}]")
        return float(max(y[min(m + K, n + 1)] - y[m], y[m] - y[max(m - K, 0)]))

    def dist_to_bad(self, data, K: int, B: float) -> float:
        """Fewest replacements giving a dataset whose modulus at K+1 exceeds B.

        Moving ``a`` records below and ``b`` above the window around rank m
        widens the rank gaps of the modulus by ``a + b``; the maximum over
        splits of j = a + b is the largest modulus reachable in j steps.
        """
        y, m = self._extended(data)
        n = len(y) - 2
        w = K + 1

        def Y(i):
            return y[np.clip(i, 0, n + 1)]

        for j in range(n + 1):
            a = np.arange(j + 1)
            b = j - a
            upper = Y(m + w + b) - Y(m - a)
            lower = Y(m + b) - Y(m - w - a)
            if max(upper.max(), lower.max()) > B:
                return j
        return INF


class CoordinateQuantileOracle:
    """Column-separable score for box-clipped coordinate quantiles.

    The score of ``t`` is ``max_j len_j(t_j)``, the path length of the
    coordinate-wise quantile when corruption is counted per column. It never
    exceeds the row-wise path length and still changes by at most one between
    neighbors, so it is a valid exponential-mechanism score. Smoothing is in
    the l-infinity norm, which keeps the score separable.
    """

    def __init__(self, q: float = 0.5, radius: float | None = None):
        self.column = QuantileOracle(q, radius)

    def axis_scores(self, data, axes, rho: float = 0.0) -> list[np.ndarray]:
        data = as_dataset(data)
        if len(axes) != data.shape[1]:
            raise ParameterError("one axis grid per coordinate is required")
        return [self.column.smooth(data[:, [j]], ax, rho) for j, ax in enumerate(axes)]

    def smooth(self, data, t, rho: float = 0.0) -> np.ndarray:
        data = as_dataset(data)
        t = np.atleast_2d(np.asarray(t, dtype=float))
        cols = [self.column.smooth(data[:, [j]], t[:, j], rho) for j in range(data.shape[1])]
        return np.max(np.stack(cols, axis=1), axis=1)

    def len(self, data, t) -> float:
        return float(self.smooth(data, t, 0.0)[0])

    def field(self, data, points, rho: float = 0.0, sparsity: int | None = None) -> np.ndarray:
        return sparsity_gate(points, self.smooth(data, points, rho), sparsity)


class BruteForceOracle:
    """Path length by exhaustive replacement over a finite value grid.

    Replacement values come from ``replacement_grid`` (rows are records), and
    outputs are compared after rounding to ``resolution``. The result is
    ``min(len, cap)``. Sensitivity one holds for datasets whose records are
    themselves grid values. Cost grows like sum_k C(n, k) C(|G| + k - 1, k),
    so keep n <= 8 and the grid small.
    """

    def __init__(self, estimator, replacement_grid, cap: int,
                 resolution: float = 1e-9, batched: bool | None = None,
                 symmetric: bool = True):
        grid = np.asarray(replacement_grid, dtype=float)
        if grid.size == 0:
            raise ParameterError("replacement grid is empty")
        if grid.ndim == 1:
            grid = grid.reshape(-1, 1)
        if cap < 1:
            raise ParameterError("cap must be at least 1")
        self.estimator = estimator
        self.grid = np.unique(grid, axis=0)
        self.cap = int(cap)
        self.resolution = resolution
        self.batched = getattr(estimator, "batched", False) if batched is None else batched
        self.symmetric = symmetric
        self._cache: dict = {}

    def _eval(self, batch: np.ndarray) -> np.ndarray:
        if self.batched:
            out = np.asarray(self.estimator(batch), dtype=float)
        else:
            out = np.array([np.atleast_1d(self.estimator(b)) for b in batch], dtype=float)
        return out.reshape(len(batch), -1)

    def _key(self, v) -> tuple:
        return tuple(np.round(np.atleast_1d(v) / self.resolution).astype(np.int64).tolist())

    def _candidates(self, data: np.ndarray, k: int):
        """Yield batches of datasets with exactly k rows replaced by grid values."""
        n = len(data)
        values = np.array(list(itertools.combinations_with_replacement(range(len(self.grid)), k)))
        seen = set()
        for idx in itertools.combinations(range(n), k):
            if self.symmetric:
                sig = tuple(sorted(map(tuple, data[list(idx)].tolist())))
                if sig in seen:
                    continue
                seen.add(sig)
            batch = np.repeat(data[None], len(values), axis=0)
            batch[:, list(idx), :] = self.grid[values]
            yield batch

    def levels(self, data, max_k: int) -> dict:
        """Map from quantized output to (fewest replacements, an exact output)."""
        data = as_dataset(data)
        ck = (data.tobytes(), data.shape, max_k)
        if ck in self._cache:
            return self._cache[ck]
        table = {}
        f0 = self._eval(data[None])[0]
        table[self._key(f0)] = (0, f0)
        for k in range(1, min(max_k, len(data)) + 1):
            for batch in self._candidates(data, k):
                out = self._eval(batch)
                keys = np.round(out / self.resolution).astype(np.int64)
                _, first = np.unique(keys, axis=0, return_index=True)
                for i in first:
                    key = tuple(keys[i].tolist())
                    if key not in table:
                        table[key] = (k, out[i])
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[ck] = table
        return table

    def len(self, data, t) -> float:
        table = self.levels(data, self.cap - 1)
        hit = table.get(self._key(t))
        return float(self.cap if hit is None else min(hit[0], self.cap))

    def field(self, data, points, rho: float = 0.0, sparsity: int | None = None) -> np.ndarray:
        """Capped (smooth) path length at each of ``points``.

        The smooth score minimizes over every reachable output within rho,
        which is exact for the grid-restricted path length.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        table = self.levels(data, self.cap - 1)
        if rho == 0:
            scores = np.array([self.len(data, p) for p in points])
        else:
            outs = np.array([v[1] for v in table.values()])
            lv = np.array([v[0] for v in table.values()], dtype=float)
            scores = np.full(len(points), float(self.cap))
            for s in range(0, len(points), 256):
                dist = np.linalg.norm(points[s : s + 256, None, :] - outs[None], axis=-1)
                near = np.where(dist <= rho + 1e-12, lv[None, :], float(self.cap))
                scores[s : s + 256] = np.minimum(near.min(axis=1), self.cap)
        return sparsity_gate(points, scores, sparsity)

    def smooth(self, data, t, rho: float = 0.0) -> np.ndarray:
        return self.field(data, t, rho)

    def modulus(self, data, K: int) -> float:
        data = as_dataset(data)
        if K < 0 or K > len(data):
            raise ParameterError(f"K={K} outside [0, {len(data)}]")
        table = self.levels(data, K)
        base = self._eval(data[None])[0]
        return float(max(np.linalg.norm(v[1] - base) for v in table.values()))

    def dist_to_bad(self, data, K: int, B: float) -> float:
        """Exhaustive nested search: outer over replaced datasets, inner modulus."""
        data = as_dataset(data)
        n = len(data)
        w = min(K + 1, n)
        seen = set()
        for j in range(n + 1):
            frontier = [data[None]] if j == 0 else self._candidates(data, j)
            for batch in frontier:
                for cand in batch:
                    if self.symmetric:
                        sig = tuple(sorted(map(tuple, cand.tolist())))
                        if sig in seen:
                            continue
                        seen.add(sig)
                    if self.modulus(cand, w) > B:
                        return j
        return INF


# -- module-level operations ----------------------------------------------------------


def len_bruteforce(f, data, t, cap: int, replacement_grid, resolution: float = 1e-9) -> float:
    return BruteForceOracle(f, replacement_grid, cap, resolution).len(data, t)


def len_median_analytic(data, t, lo: float = -INF, hi: float = INF) -> float:
    data = as_dataset(data)
    if data.shape[1] != 1:
        raise ParameterError("len_median_analytic needs d = 1")
    return QuantileOracle(0.5, None, lo, hi).len(data, t)


def smooth_len(oracle, data, t, rho: float, sparsity: int | None = None) -> float:
    if rho < 0:
        raise ParameterError("rho must be nonnegative")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if sparsity is not None and l0_norm(t) > sparsity:
        return INF
    return float(np.asarray(oracle.smooth(data, t[None] if t.ndim == 1 else t, rho)).reshape(-1)[0])


def _resolve(f, method: str, replacement_grid, cap: int):
    if method == "medianAnalytic":
        if isinstance(f, QuantileOracle):
            return f
        if isinstance(f, RobustEstimatorSpec):
            return QuantileOracle.for_estimator(f)
        return QuantileOracle(0.5)
    if method == "bruteforce":
        if isinstance(f, BruteForceOracle):
            return f
        if replacement_grid is None:
            raise ParameterError("brute force needs a replacement grid")
        return BruteForceOracle(f, replacement_grid, cap)
    raise ParameterError(f"unknown method {method!r}")


def modulus(f, data, K: int, method: str = "medianAnalytic", replacement_grid=None) -> float:
    data = as_dataset(data)
    if K > len(data):
        raise ParameterError(f"K={K} exceeds n={len(data)}")
    return _resolve(f, method, replacement_grid, K + 1).modulus(data, K)


def dist_to_bad(f, data, K: int, B: float, method: str = "medianAnalytic",
                replacement_grid=None) -> float:
    return _resolve(f, method, replacement_grid, K + 2).dist_to_bad(as_dataset(data), K, B)


def serialize_dist(d: float, n: int) -> int:
    """Numeric form of a distance; the infinite sentinel becomes n + 1."""
    return n + 1 if math.isinf(d) else int(d)


# -- score fields ---------------------------------------------------------------


@dataclass
class ScoreField:
    """Finite output grid with one (possibly infinite) score per point."""

    points: np.ndarray
    scores: np.ndarray
    cap: int | None = None
    rho: float = 0.0
    cell_volume: float = 1.0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 1 and self.points.shape[1] != 1 and np.ndim(self.scores) == 1 \
                and len(self.scores) == self.points.shape[1]:
            self.points = self.points.T
        self.scores = np.asarray(self.scores, dtype=float).reshape(-1)
        if len(self.points) != len(self.scores):
            raise ParameterError("one score per grid point is required")

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def write(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow([f"t_{i + 1}" for i in range(self.dim)] + ["score"])
        for p, s in zip(self.points, self.scores):
            score = "inf" if math.isinf(s) else str(int(s)) if float(s).is_integer() else repr(float(s))
            writer.writerow([format(float(v), ".17g") for v in p] + [score])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write(fh)

    @classmethod
    def from_csv(cls, path) -> "ScoreField":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        body = [r for r in rows[1:] if r]
        pts = np.array([[float(v) for v in r[:-1]] for r in body])
        scores = np.array([float(r[-1]) for r in body])
        return cls(pts.reshape(len(body), len(rows[0]) - 1), scores)
