"""Coordinate descent driven by Markov-chain block selection, with a
chain-analysis toolkit, convergence envelopes, and an experiment harness."""

__version__ = "0.1.0"

from .chain import (
    Graph,
    MixingProfile,
    NonMixingError,
    StationaryDistribution,
    TransitionSchedule,
    WalkSampler,
    build_random_walk,
    internal_tau,
    load_schedule,
    mixing_time,
    phi_product,
    spectral_mixing_bound,
    stationary_distribution,
)
from .objective import (
    BlockObjective,
    SeparableNonsmooth,
    fd_block_grad,
    fd_full_grad,
    make_least_squares,
    make_multi_agent,
    make_quadratic,
    prox_catalog,
    quadratic_part,
)
from .solver import (
    IterateState,
    NoiseModel,
    RunResult,
    SolverConfig,
    SolverError,
    Trace,
    TraceRecord,
    mcbcd_step,
    mcpbcd_step,
    pathwise_lemma_audit,
    prox_descent_audit,
    prox_grad_residual,
    run,
)
from .dca import (
    DcaDualObjective,
    DcaState,
    ErmDualProblem,
    FrequencyCounter,
    SquaredLosses,
    duality_gap,
    empirical_mcdca_step,
    make_dca_dual,
    mcdca_step,
    primal_from_dual,
    run_empirical_mcdca,
    run_mcdca,
    sdca_baseline,
)
from .dmdp import (
    DmdpModel,
    ExactOracle,
    MonteCarloOracle,
    ValueEstimate,
    bellman_residual,
    direct_solve,
    evaluate_policy_mcbcd,
    monte_carlo_row,
)
from .analysis import (
    ConditionalBoundReport,
    EnvelopeReport,
    RateConstants,
    conditional_bound_check,
    check_dominance,
    envelope_linear,
    envelope_nonconvex,
    envelope_sublinear,
    fit_rate,
    mean_and_band,
    rate_constants,
    running_min_grad_sq,
)
