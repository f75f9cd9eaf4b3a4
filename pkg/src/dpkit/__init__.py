"""Differentially private estimators built from robust ones.

Inverse-sensitivity exponential mechanisms (smooth, truncated, sparse),
propose-test-release, calibration of the robust/private transformations,
and empirical auditors for privacy, robustness and accuracy.
"""

from .core import (
    GreedyWorstCase,
    LossSpec,
    OutputRange,
    ParameterError,
    PrivacyBudget,
    ReplaceWithConstant,
    RobustnessProfile,
    ShiftToExtreme,
    UnsupportedDimensionError,
    as_dataset,
    corrupt,
    derive_seed,
    gen_gaussian,
    hamming,
    loss_eval,
    make_rng,
    read_csv,
    write_csv,
)
from .estimators import (
    Derandomized,
    RobustEstimatorSpec,
    derandomize,
    estimate,
    tukey_depth,
    tukey_median_grid,
    tukey_profile,
)
from .sensitivity import (
    BruteForceOracle,
    CoordinateQuantileOracle,
    QuantileOracle,
    ScoreField,
    dist_to_bad,
    len_bruteforce,
    len_median_analytic,
    modulus,
    smooth_len,
)
from .mechanisms import (
    CalibrationError,
    EmptySupportError,
    MechanismConfig,
    MechanismOutput,
    ProductScoreField,
    exp_mech_finite,
    ptr_pipeline,
    smooth_inv_mech,
    truncated_inv_mech,
)
from .transforms import (
    CalibrationResult,
    PrivateClaim,
    calibrate_K,
    calibrate_tau_star,
    private_to_robust,
    robust_to_private,
)
from .audit import (
    AuditUnsupportedError,
    ExperimentReport,
    ScenarioError,
    audit_dp,
    audit_robustness,
    bench_accuracy,
    equivalence_experiment,
)

__version__ = "0.1.0"
