"""Frame-level simulation, analytics and trajectory learning for cellular UAV sensing."""

__version__ = "0.1.0"

from ._kernels import BACKEND
from .analytics import (
    CapacityError,
    EquivalentUavScenario,
    JointEvaluator,
    lambert_w_minus1,
    n_vd,
    optimal_tu,
    uplink_success_prob,
    valid_tx_prob,
)
from .channel import ChannelParams, LosMode, marcum_q1, rice_cdf, tx_success_prob
from .protocol import CycleSchedule, SimMode, TrajectoryCyclePlan, simulate_cycle, simulate_cycles
from .runner import ConfigError, ExperimentConfig, monte_carlo_uplink, run_experiment, sweep_tu
from .spatial import Action, GridPoint, LatticeConfig, reduced_action_set

__all__ = [
    "BACKEND",
    "Action",
    "CapacityError",
    "ChannelParams",
    "ConfigError",
    "CycleSchedule",
    "EquivalentUavScenario",
    "ExperimentConfig",
    "GridPoint",
    "JointEvaluator",
    "LatticeConfig",
    "LosMode",
    "SimMode",
    "TrajectoryCyclePlan",
    "lambert_w_minus1",
    "marcum_q1",
    "monte_carlo_uplink",
    "n_vd",
    "optimal_tu",
    "reduced_action_set",
    "rice_cdf",
    "run_experiment",
    "simulate_cycle",
    "simulate_cycles",
    "sweep_tu",
    "tx_success_prob",
    "uplink_success_prob",
    "valid_tx_prob",
    "__version__",
]
