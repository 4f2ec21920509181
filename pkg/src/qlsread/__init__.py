"""Repetitive indirect qubit-readout toolkit.

Simulates round-by-round readout of a two-subspace qubit, estimates the
subspace with a Bayesian maximum a posteriori reader (fixed-length or
adaptive), and brackets the combined readout-plus-backaction error with
exact binomial confidence bounds.
"""

from .bounds import (
    BisectionError,
    BoundsReport,
    DEFAULT_C,
    InvalidBeta,
    InvalidC,
    beta_star,
    binomial_exact_lower,
    binomial_exact_upper,
    bounds_report,
    confidence_lower,
    confidence_upper,
    l_bias,
    point_bounds,
    sensitivity_grid,
    tuning_counts,
    u_bias,
)
from .estimator import (
    AdaptivePolicy,
    AdaptiveResult,
    DEFAULT_ROUND_CAP,
    DEFAULT_SMOOTHING_FLOOR,
    EmptyColumn,
    FixedRoundsPolicy,
    LengthMismatch,
    ReadoutPolicy,
    ReferenceTable,
    SourceExhausted,
    StopReason,
    adaptive_readout,
    build_reference,
    fixed_n_readout,
    map_estimate,
    posterior,
)
from .harness import (
    DiscardedWindow,
    SweepAxis,
    SweepPoint,
    SweepResult,
    ValidationRecord,
    apply_validation_window,
    run_adaptive_sweep,
    run_bounds_pipeline,
    run_fixed_sweep,
)
from .model import (
    CoarseModel,
    ConditionalRates,
    DoubleReadoutCounts,
    RoundOutcome,
    Subspace,
    ZeroTotal,
    exact_rates,
    flip,
    rates_from_counts,
    true_F,
)
from .sim import (
    DoubleReadoutResult,
    GenerativeConfig,
    InvalidConfig,
    PhotonModel,
    TrialRecord,
    builtin_profiles,
    load_config,
    simulate_double_readout,
    simulate_outcome_matrix,
    simulate_reference,
    simulate_rounds,
    stream_address,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
