"""Multi-task stochastic linear contextual bandit laboratory."""

from .environment import (
    ArmDistribution,
    DecisionSet,
    EnvironmentReplay,
    NoiseSpec,
    RngStream,
    TaskMatrixSpec,
    best_arm,
    generate_task_matrix,
    reward,
    sample_decision_sets,
)
from .errors import ConfigError, ConvergenceError, DiagnosticUnavailableError
from .estimator import (
    FitResult,
    LambdaRule,
    MultiTaskData,
    SolverOptions,
    TaskHistory,
    fit_trace_norm,
    kkt_residual,
    lambda_schedule,
    lipschitz_estimate,
    objective,
    smooth_gradient,
)
from .harness import (
    ExperimentConfig,
    RunResult,
    aggregate,
    parse_config,
    run_experiment,
    write_results,
)
from .linalg import SvdResult, nuclear_norm, numerical_rank, operator_norm, svd, svt
from .metrics import (
    DiagnosticsReport,
    RoundRecord,
    cumulative_metrics,
    dn_event_check,
    estimation_error,
    instantaneous_regret,
    n0_report,
    rsc_probe,
)
from .policies import (
    ITLPolicy,
    MLinGreedyStylePolicy,
    OracleBasis,
    ProjectedOraclePolicy,
    TraceNormBanditPolicy,
    init_policy,
)

__version__ = "0.1.0"
