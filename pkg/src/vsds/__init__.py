"""Variable-stiffness spring fields with velocity-tracking feed-forward and energy-tank passivity."""
from .ds_core import eval_field, integrate_open_loop, make_preset, sample_local_attractors
from .energy_tank import PassifierParams, TankState, passive_control, tank_step
from .feedforward import FeedForwardField, assemble_qp, optimize_feedforward, simulate_reference
from .qp_solver import QpProblem, QpSolution, kkt_residual, solve_qp
from .simulator import SimLog, metrics, run_scenario
from .vsds_core import StiffnessProfile, VsdsModel, build_rotation, build_vsds, eval_damping, eval_vsds_org, weights

__version__ = "0.1.0"
