"""Simulation and exact-computation toolkit for the facilitated exclusion
process, the constant-rate zero-range process, the cluster bijection
between them, their stationary measures, and their stationary
fluctuations."""

__version__ = "0.1.0"

from .lattice import (
    Box,
    Classification,
    FepConfig,
    Ring,
    ZrConfig,
    apply_swap,
    classify,
    dump_config,
    is_alternating,
    jump_rates,
    parse_config,
    zr_apply_jump,
)
from .measures import (
    TheoryBundle,
    WindowSample,
    markov_chain_window,
    pair_covariance,
    sample_canonical_ring,
    sample_ring_grand,
    sample_window_grand,
    sample_zr_distorted,
    sample_zr_geometric,
    theory,
    window_prob,
)
from .dynamics import (
    CouplingRun,
    CouplingState,
    FepSimulation,
    RateSchedule,
    TrajectoryLog,
    ZrSimulation,
    current,
    run_coupled,
    run_fep,
    run_zr,
    sup_current_moment,
    tagged_empty_site,
)
from .mapping import (
    InsufficientWindowError,
    TaggedState,
    map_backward,
    map_forward,
    replay_events,
    stationary_identity_check,
    translate_state,
    verify_dynamic,
)
from .fluctuations import (
    Bump,
    CovariancePrediction,
    FieldSample,
    Gaussian,
    LocalFunction,
    TableSpline,
    ValidityWindowError,
    boltzmann_gibbs_functional,
    builtin_h,
    covariance_estimate,
    field_eval_fep,
    field_eval_zr,
    grad_norm_sq,
    inner_product,
    quadratic_variation,
    she_covariance,
    transform_test_function,
)
from .ensembles import (
    CanonicalSpec,
    canonical_window_prob,
    count_ergodic,
    cropped_count_range,
    equivalence_error,
    lemma1_check,
    lemma2_sum,
)
from .seeding import seed_split
