"""Calibration of the robust-to-private and private-to-robust transformations.

Failed preconditions never raise here. They come back as a
:class:`CalibrationResult` with ``valid=False`` and a reason, and every
mechanism refuses a config built from such a result.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .core import LossSpec, ParameterError, PrivacyBudget, RobustnessProfile
from .mechanisms import MechanismConfig, ptr_min_tau, ptr_threshold

VARIANTS = ("discrete", "continuous", "sparse", "truncated")


def _positive(**kw) -> None:
    for name, v in kw.items():
        if v is None:
            raise ParameterError(f"missing parameter {name}")
        if not v > 0:
            raise ParameterError(f"{name} must be positive, got {v}")


def _ceil(x: float) -> int:
    # values like 2 * log(e**-8) land a hair above the integer
    return int(math.ceil(x - 1e-9))


def sparse_complexity(d: int, k: int, R: float, rho: float) -> float:
    return k * (math.log(math.e * d / k) + math.log(R / rho + 1))


def calibrate_tau_star(d: int, R: float, alpha0: float, beta: float, n: int, epsilon: float,
                       sparsity: int | None = None) -> float:
    """Smallest corruption fraction the pure transformation accepts.

    With ``sparsity=k`` the dimension term becomes k (log(ed/k) + log(R/alpha0 + 1)).
    """
    _positive(d=d, R=R, alpha0=alpha0, beta=beta, n=n, epsilon=epsilon)
    if alpha0 > R:
        raise ParameterError("alpha0 must not exceed R")
    if sparsity is None:
        size = d * math.log(R / alpha0 + 1)
    else:
        size = sparse_complexity(d, sparsity, R, alpha0)
    return 2 * (size + math.log(1 / beta)) / (n * epsilon)


def calibrate_K(variant: str, **params) -> int:
    """Corruption threshold K of a utility statement, rounded up.

    discrete: epsilon, beta, diameter, range_size
    continuous: epsilon, beta, d, R, rho
    sparse: epsilon, beta, d, k, R, rho
    truncated: epsilon, delta, d
    """
    p = params.get
    if variant == "discrete":
        _positive(epsilon=p("epsilon"), beta=p("beta"), diameter=p("diameter"),
                  range_size=p("range_size"))
        eps = p("epsilon")
        return _ceil(2 / eps * math.log(2 * p("diameter") * p("range_size") / (p("beta") * eps)))
    if variant == "continuous":
        _positive(epsilon=p("epsilon"), beta=p("beta"), d=p("d"), R=p("R"), rho=p("rho"))
        return _ceil(2 * (p("d") * math.log(p("R") / p("rho") + 1) + math.log(1 / p("beta")))
                     / p("epsilon"))
    if variant == "sparse":
        _positive(epsilon=p("epsilon"), beta=p("beta"), d=p("d"), k=p("k"), R=p("R"),
                  rho=p("rho"))
        size = sparse_complexity(p("d"), p("k"), p("R"), p("rho"))
        return _ceil(2 * (size + math.log(1 / p("beta"))) / p("epsilon"))
    if variant == "truncated":
        _positive(epsilon=p("epsilon"), delta=p("delta"), d=p("d"))
        return _ceil((p("d") + math.log(1 / p("delta"))) / p("epsilon"))
    raise ParameterError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass
class CalibrationResult:
    tau_star: float
    K: int | None
    config: MechanismConfig
    claimed_error: float
    valid: bool
    reason: str = ""
    mode: str = "pure"
    alpha: float = 0.0
    B: float | None = None
    threshold: float | None = None
    lipschitz: float = 1.0

    def to_json(self) -> dict:
        c = self.config
        return {
            "mode": self.mode,
            "valid": self.valid,
            "reason": self.reason,
            "tauStar": self.tau_star,
            "K": self.K,
            "B": self.B,
            "threshold": self.threshold,
            "alpha": self.alpha,
            "claimedError": self.claimed_error,
            "lipschitz": self.lipschitz,
            "config": {
                "epsilon": c.epsilon, "delta": c.delta, "rho": c.rho, "K": c.K,
                "grid_res": c.grid_res, "radius": c.radius, "dim": c.dim, "B": c.B,
                "beta": c.beta, "norm": c.norm, "sparsity": c.sparsity,
            },
        }


def _lipschitz(loss: LossSpec | None, norm: str, d: int) -> float:
    c = 1.0 if loss is None else loss.lipschitz_constant()
    # the mechanism smooths in l-infinity when norm is linf; l2 <= sqrt(d) linf
    return c * math.sqrt(d) if norm == "linf" else c


def robust_to_private(rob, budget: PrivacyBudget, alpha0: float | None = None,
                      mode: str = "pure", n: int | None = None, loss: LossSpec | None = None,
                      grid_res: float | None = None) -> CalibrationResult:
    """Calibrate the inverse-sensitivity mechanism around a robust estimator.

    pure: smooth mechanism with rho = alpha0, valid when tau >= tau*.
    approx: PTR with B = 2 alpha, rho = 2B, K = floor(n tau / 2) - 1.
    """
    if mode not in ("pure", "approx"):
        raise ParameterError(f"unknown mode {mode!r}")
    if n is None or n < 1:
        raise ParameterError("n must be a positive integer")
    profile: RobustnessProfile | None = getattr(rob, "profile", None)
    if profile is None:
        raise ParameterError("estimator has no robustness profile")
    d = getattr(rob, "dim", 1)
    R = rob.radius
    norm = getattr(rob, "norm", "l2")
    k = getattr(rob, "sparsity", None)
    eps, beta, alpha, tau = budget.epsilon, profile.beta, profile.alpha, profile.tau
    c_L = _lipschitz(loss, norm, d)
    problems = []
    if getattr(rob, "randomized", False):
        problems.append("randomized estimator: wrap it with derandomize first")

    if mode == "pure":
        if alpha0 is None:
            raise ParameterError("pure mode needs alpha0")
        tau_star = calibrate_tau_star(d, R, alpha0, beta, n, eps, k)
        if tau < tau_star:
            problems.append(f"tau={tau:.6g} < tauStar={tau_star:.6g}")
        if alpha0 > alpha:
            problems.append(f"alpha0={alpha0:.6g} > alpha={alpha:.6g}")
        if tau_star > 1:
            problems.append(f"tauStar={tau_star:.6g} exceeds 1")
        variant = "continuous" if k is None else "sparse"
        K = calibrate_K(variant, epsilon=eps, beta=beta, d=d, k=k, R=R, rho=alpha0)
        config = MechanismConfig(eps, 0.0, alpha0, None, grid_res or alpha0 / 2, R, d,
                                 beta=beta, norm=norm, sparsity=k, valid=not problems,
                                 reason="; ".join(problems))
        return CalibrationResult(tau_star, K, config, (3 + c_L) * alpha, not problems,
                                 config.reason, "pure", alpha, lipschitz=c_L)

    if not budget.delta > 0:
        raise ParameterError("approx mode needs delta > 0")
    need = ptr_min_tau(n, d, eps, budget.delta, beta)
    if tau < need:
        problems.append(f"tau={tau:.6g} < 8(d + log(1/min(delta, beta)))/(n eps)={need:.6g}")
    K = int(math.floor(n * tau / 2 + 1e-9)) - 1
    if K < 1:
        problems.append(f"K={K} < 1")
        K = 1
    B = 2 * alpha
    rho = 2 * B
    if not rho > 0:
        problems.append("alpha must be positive for PTR")
        rho = 1.0
    threshold = ptr_threshold(eps, budget.delta, beta)
    config = MechanismConfig(eps, budget.delta, rho, K, grid_res or rho / 4, R, d, B=B,
                             beta=beta, norm=norm, sparsity=k, valid=not problems,
                             reason="; ".join(problems))
    return CalibrationResult(need, K, config, 7 * alpha, not problems, config.reason, "approx",
                             alpha, B, threshold, c_L)


@dataclass(frozen=True)
class PrivateClaim:
    """An estimator declared epsilon-DP with error alpha w.p. 1 - beta."""

    epsilon: float
    beta: float
    alpha: float


def private_to_robust(priv, gamma: float, n: int) -> RobustnessProfile:
    """Robustness implied by group privacy: tau = log(1/gamma)/(n eps), failure beta/gamma."""
    if not 0 < gamma < 1:
        raise ParameterError("gamma must lie in (0, 1)")
    _positive(n=n, epsilon=priv.epsilon)
    fail = priv.beta / gamma
    if fail >= 1:
        raise ParameterError(f"failure probability beta/gamma={fail:.4g} is vacuous")
    return RobustnessProfile(math.log(1 / gamma) / (n * priv.epsilon), fail, priv.alpha)
