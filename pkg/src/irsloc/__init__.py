"""Device-free localization with two base stations and one passive surface.

The package simulates an OFDM sensing link, recovers delay supports with
l1 / row-l2 regularized fits, reads back range sets, and localizes multiple
passive targets by consistency-pruned data association plus damped
Gauss-Newton trilateration.  `montecarlo` ties the pipeline into a
reproducible experiment harness; `cli` exposes it on the command line.
"""

from . import _kernels
from .assoc import (
    Association,
    LocalizationResult,
    NoiseModel,
    enumerate_feasible,
    irs_range,
    localize,
    solve,
)
from .channel import (
    DelayDesign,
    IrsProfile,
    ReceivedSignal,
    TapBundle,
    build_design,
    compose_channel,
    ofdm_time_signal,
    simulate_rx,
    synth_taps,
)
from .errors import (
    ConfigError,
    CongestedSceneError,
    DelaySpreadError,
    InconsistentDetectionError,
    IrslocError,
    LocalizationError,
    NoConsistentAssociationError,
    PipelineError,
    SolverConvergenceError,
)
from .montecarlo import (
    ExperimentSummary,
    RunConfig,
    SweepGrid,
    TrialConfig,
    TrialResult,
    error_probability,
    oracle_range_sets,
    run_experiment,
    run_trial,
)
from .recovery import (
    GroupLassoConfig,
    LassoConfig,
    RangeSets,
    SupportSet,
    detect_support,
    extract_ranges,
    lasso_optimality_gap,
    recover_ranges,
    solve_group_lasso,
    solve_lasso,
)
from .scene import (
    DEFAULT_PLACEMENT,
    SPEED_OF_LIGHT,
    Placement,
    Point2D,
    RangeTruth,
    Scenario,
    SystemConfig,
    delay_bin,
    distances,
    sample_scenario,
)

__version__ = "0.1.0"


def kernel_backend() -> str:
    """Active hot-loop backend: ``"native"`` (compiled) or ``"python"``."""
    return _kernels.backend()
