"""Relay-link exploration under mmWave blockage.

Exact belief filtering from lossy ACKs, piecewise-linear value iteration
for the optimal stopping thresholds, the equivalent count-based rule, and
a seeded grid-world blockage simulator with a Monte Carlo harness.
"""

from .belief import (
    ChannelModel,
    DegenerateEvidenceError,
    LinkState,
    ack_likelihood,
    failure_trajectory,
    predict,
    success_trajectory,
    update,
)
from .envelope import Envelope, Line, branch_transform, crossing, min_of
from .harness import (
    AggregateStats,
    RunMetrics,
    ScenarioConfig,
    SweepResult,
    emit_outputs,
    load_config,
    monte_carlo,
    pomdp_select,
    rss_baseline_select,
    run_episode,
    sweep,
)
from .simworld import (
    InsufficientDataError,
    LinkSample,
    RadioParams,
    SlotClock,
    World,
    WorldParams,
    ack_sample,
    build_world,
    calibrate,
    link_truth,
    path_loss,
    sample_link,
    step_dynamics,
    viable_set,
)
from .solver import (
    Action,
    CostModel,
    Decision,
    HorizonPolicy,
    StationaryPolicy,
    bellman_backup,
    counts,
    decide,
    extract_thresholds,
    grid_dp_oracle,
    solve_horizon,
    stationary_policy,
    terminal_value,
)

__version__ = "0.1.0"
