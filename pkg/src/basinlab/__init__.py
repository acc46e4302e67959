"""Basin-of-attraction analysis, supergame simulation, and cooperation
estimation for N-player repeated social dilemmas."""

from .basin import (
    BasinReport,
    OracleResult,
    PlayerSolution,
    RiskDominance,
    ValuePair,
    basin_corr,
    basin_ind,
    basin_report,
    basin_two_player,
    critical_joint_belief,
    grim_spe_status,
    indifference_oracle,
    risk_dominance,
    solve_cost,
    solve_players,
    strategy_values,
)
from .estimation import (
    CellObservation,
    DummyDecomposition,
    Observation,
    ProbitFit,
    basin_covariates,
    dummy_decomposition,
    fit_piecewise_probit,
    ongoing_from_initial,
    predict_rate,
)
from .game import (
    Action,
    GeneralPD,
    Signal,
    Treatment,
    build_general_pd,
    build_treatment,
    general_pd_payoffs,
    normalize,
    signal_of,
    stage_payoff,
    treatment_from_config,
    treatment_to_config,
)
from .simulator import (
    AdaptiveSettings,
    CoopStats,
    SessionConfig,
    SessionRecord,
    adaptive_step,
    compute_stats,
    draw_lengths,
    expected_success,
    pool_stats,
    run_session,
)
from .strategies import (
    Mixture,
    StrategyKind,
    StrategyState,
    fresh_state,
    next_action,
    sample_strategy,
    update_state,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AdaptiveSettings",
    "BasinReport",
    "CellObservation",
    "CoopStats",
    "DummyDecomposition",
    "GeneralPD",
    "Mixture",
    "Observation",
    "OracleResult",
    "PlayerSolution",
    "ProbitFit",
    "RiskDominance",
    "SessionConfig",
    "SessionRecord",
    "Signal",
    "StrategyKind",
    "StrategyState",
    "Treatment",
    "ValuePair",
    "adaptive_step",
    "basin_corr",
    "basin_covariates",
    "basin_ind",
    "basin_report",
    "basin_two_player",
    "build_general_pd",
    "build_treatment",
    "compute_stats",
    "critical_joint_belief",
    "draw_lengths",
    "dummy_decomposition",
    "expected_success",
    "fit_piecewise_probit",
    "fresh_state",
    "general_pd_payoffs",
    "grim_spe_status",
    "indifference_oracle",
    "next_action",
    "normalize",
    "ongoing_from_initial",
    "pool_stats",
    "predict_rate",
    "risk_dominance",
    "run_session",
    "sample_strategy",
    "signal_of",
    "solve_cost",
    "solve_players",
    "stage_payoff",
    "strategy_values",
    "treatment_from_config",
    "treatment_to_config",
    "update_state",
]
