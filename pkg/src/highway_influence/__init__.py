"""Mixed-autonomy highway simulation with influence via barrier-constrained control."""

from .core import (
    Background,
    ControlLimits,
    Human,
    IdmParams,
    LaneChangeParams,
    Robot,
    VehicleState,
    WorldState,
    gap,
    leader_of,
)
from .behavior import idm_accel, idm_partials, drift_term, lane_decision
from .cbf import (
    AccelLower,
    AccelUpper,
    BarrierSpec,
    GapLower,
    VelocityLower,
    VelocityUpper,
    assemble_row,
    assemble_system,
    barrier_value,
    pole_coefficients,
)
from .qp import QpProblem, QpSolution, kkt_residual, solve_qp
from .sim import NoiseConfig, SimConfig, SimulationFault, TrajectoryLog, run, step
from .stats import kmeans_1d, paired_t_test

__version__ = "0.1.0"
