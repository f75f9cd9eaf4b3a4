"""Datasets, losses, parameter records, synthetic data and contamination.

A dataset is a float array of shape ``(n, d)``. One-dimensional inputs are
promoted to a single column. Neighboring datasets have equal length and differ
in at most one row (Hamming distance over rows).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ParameterError(ValueError):
    """Invalid argument to a library operation."""


class UnsupportedDimensionError(ParameterError):
    pass


# -- randomness ---------------------------------------------------------------
#
# All randomness goes through numpy's Philox counter-based bit generator keyed
# by a SeedSequence, so draws are identical across platforms. A trial's stream
# is keyed by (master_seed, trial_index); nothing shares a mutable generator.


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Philox generator for ``seed`` and an optional tuple of counter keys."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(master: int, index: int) -> int:
    """Deterministic 63-bit seed for trial ``index`` under ``master``."""
    state = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index)])
    lo, hi = state.generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)


# -- parameter records ----------------------------------------------------------


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float = 0.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ParameterError(f"delta must lie in [0, 1), got {self.delta}")

    @property
    def pure(self) -> bool:
        return self.delta == 0


@dataclass(frozen=True)
class RobustnessProfile:
    """Claimed (tau, beta, alpha) robustness of an estimator.

    ``n * tau`` is read as a corruption count through :meth:`budget` (floor).
    """

    tau: float
    beta: float
    alpha: float

    def __post_init__(self):
        if not 0 <= self.tau <= 1:
            raise ParameterError(f"tau must lie in [0, 1], got {self.tau}")
        if not 0 < self.beta < 1:
            raise ParameterError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.alpha >= 0:
            raise ParameterError(f"alpha must be nonnegative, got {self.alpha}")

    def budget(self, n: int) -> int:
        # small epsilon guards n*tau values like 29.999999999999996
        return int(math.floor(n * self.tau + 1e-9))


@dataclass(frozen=True)
class OutputRange:
    radius: float
    dim: int = 1
    norm: str = "l2"

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("radius must be positive")
        if self.dim < 1:
            raise ParameterError("dim must be a positive integer")
        if self.norm not in ("l2", "linf"):
            raise ParameterError(f"unknown norm {self.norm!r}")


@dataclass(frozen=True)
class LossSpec:
    """Error metric: ``euclidean`` or ``mahalanobis`` with covariance ``sigma``."""

    kind: str = "euclidean"
    sigma: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "euclidean":
            return
        if self.kind != "mahalanobis":
            raise ParameterError(f"unknown loss kind {self.kind!r}")
        if self.sigma is None:
            raise ParameterError("mahalanobis loss needs a covariance matrix")
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        _cholesky(sigma)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def mahalanobis(cls, sigma) -> "LossSpec":
        return cls("mahalanobis", sigma)

    def lipschitz_constant(self) -> float:
        """Smallest c with ``loss(u, v) <= c * ||u - v||_2`` for all u, v."""
        if self.kind == "euclidean":
            return 1.0
        return float(1.0 / math.sqrt(np.linalg.eigvalsh(self.sigma).min()))

    def __call__(self, u, v) -> float:
        return loss_eval(self, u, v)


def _cholesky(sigma: np.ndarray) -> np.ndarray:
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ParameterError("covariance must be a square matrix")
    if not np.allclose(sigma, sigma.T):
        raise ParameterError("covariance must be symmetric")
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise ParameterError("covariance must be positive definite") from None


def loss_eval(loss: LossSpec, u, v) -> float:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ParameterError(f"dimension mismatch: {u.shape} vs {v.shape}")
    diff = u - v
    if loss.kind == "euclidean":
        return float(np.linalg.norm(diff))
    if loss.sigma.shape != (diff.size, diff.size):
        raise ParameterError("covariance does not match vector dimension")
    return float(math.sqrt(max(diff @ np.linalg.solve(loss.sigma, diff), 0.0)))


# -- datasets ------------------------------------------------------------------


def as_dataset(data, dim: int | None = None) -> np.ndarray:
    """Coerce records to a float array of shape (n, d)."""
    arr = np.asarray(data, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1) if dim in (None, 1) else arr.reshape(-1, dim)
    if arr.ndim != 2:
        raise ParameterError(f"dataset must be 2-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ParameterError(f"expected records of dimension {dim}, got {arr.shape[1]}")
    return arr


def hamming(a, b) -> int:
    """Number of row positions at which two same-length datasets differ."""
    a, b = as_dataset(a), as_dataset(b)
    if a.shape != b.shape:
        raise ParameterError("Hamming distance needs datasets of equal shape")
    return int(np.any(a != b, axis=1).sum())


def gen_gaussian(n: int, mu, sigma, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws from N(mu, sigma); bit-identical for a fixed seed.

    ``sigma`` may be a matrix, or a scalar variance applied to every axis.
    """
    if n < 0:
        raise ParameterError("n must be nonnegative")
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    d = mu.size
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim == 0:
        if not sigma > 0:
            raise ParameterError("variance must be positive")
        sigma = float(sigma) * np.eye(d)
    chol = _cholesky(np.atleast_2d(sigma))
    if chol.shape[0] != d:
        raise ParameterError("mean and covariance dimensions differ")
    z = make_rng(seed).standard_normal((n, d))
    return z @ chol.T + mu


def write_csv(path, data, header: Sequence[str] | None = None) -> None:
    data = as_dataset(data)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header is not None:
            writer.writerow(header)
        for row in data:
            writer.writerow([format(float(x), ".17g") for x in row])


def read_csv(path, header: bool = False) -> np.ndarray:
    with open(path, newline="") as fh:
        text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if header:
        rows = rows[1:]
    rows = [r for r in rows if r]
    if not rows:
        return np.empty((0, 1))
    try:
        return np.array([[float(x) for x in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ParameterError(f"{path}: non-numeric CSV field ({exc})") from None


# -- contamination ------------------------------------------------------------


@dataclass(frozen=True)
class ReplaceWithConstant:
    value: float | Sequence[float]
    name: str = "replace-with-constant"


@dataclass(frozen=True)
class ShiftToExtreme:
    """Move the records lowest along ``direction`` by ``magnitude`` along it."""

    direction: float | Sequence[float] = 1.0
    magnitude: float = 1e3
    name: str = "shift-to-extreme"


@dataclass(frozen=True)
class GreedyWorstCase:
    """Greedy displacement maximiser for a target estimator.

    Candidate replacement values are ``+-10R`` along each axis plus the current
    records. This is a heuristic lower bound on adversarial damage, not the
    worst case.
    """

    target: Callable[[np.ndarray], np.ndarray]
    radius: float
    name: str = "greedy-worst-case"


def corrupt(data, budget: int, adversary, seed: int = 0) -> np.ndarray:
    """Replace up to ``budget`` records according to ``adversary``.

    Constant and shift adversaries change exactly ``budget`` rows (constant
    replacement skips rows that already equal the constant while others
    remain). The greedy adversary stops early when no single replacement
    increases the target's displacement.
    """
    data = as_dataset(data)
    n, d = data.shape
    if budget < 0 or budget > n:
        raise ParameterError(f"budget {budget} outside [0, {n}]")
    out = data.copy()
    if budget == 0:
        return out
    rng = make_rng(seed)

    if isinstance(adversary, ReplaceWithConstant):
        value = np.broadcast_to(np.asarray(adversary.value, dtype=float), (d,))
        differs = np.flatnonzero(np.any(data != value, axis=1))
        same = np.flatnonzero(np.all(data == value, axis=1))
        order = np.concatenate([rng.permutation(differs), same])
        out[order[:budget]] = value
        return out

    if isinstance(adversary, ShiftToExtreme):
        direction = np.broadcast_to(np.asarray(adversary.direction, dtype=float), (d,))
        norm = np.linalg.norm(direction)
        if norm == 0:
            raise ParameterError("shift direction must be nonzero")
        unit = direction / norm
        proj = data @ unit
        idx = np.lexsort((np.arange(n), proj))[:budget]
        out[idx] = data[idx] + adversary.magnitude * unit
        return out

    if isinstance(adversary, GreedyWorstCase):
        return _greedy(out, budget, adversary)

    raise ParameterError(f"unknown adversary {adversary!r}")


def _greedy(data: np.ndarray, budget: int, adv: GreedyWorstCase) -> np.ndarray:
    n, d = data.shape
    base = np.atleast_1d(np.asarray(adv.target(data), dtype=float))
    extremes = []
    for j in range(d):
        e = np.zeros(d)
        e[j] = 10 * adv.radius
        extremes += [e, -e]
    extremes = np.array(extremes)
    touched = np.zeros(n, dtype=bool)
    current = data
    best_disp = 0.0
    for _ in range(budget):
        candidates = np.concatenate([extremes, np.unique(current, axis=0)])
        best = None
        for i in np.flatnonzero(~touched):
            for v in candidates:
                if np.array_equal(v, current[i]):
                    continue
                trial = current.copy()
                trial[i] = v
                disp = np.linalg.norm(np.atleast_1d(adv.target(trial)) - base)
                if disp > best_disp + 1e-12:
                    best_disp, best = disp, (i, v)
        if best is None:
            break
        i, v = best
        current = current.copy()
        current[i] = v
        touched[i] = True
    return current
