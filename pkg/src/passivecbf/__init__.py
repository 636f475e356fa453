"""Task-space passivity-based control with a manipulability barrier."""

from .dynamics import (coriolis_matrix, dynamics_terms, forward_dynamics, gravity_torques, inverse_dynamics,
                       kinetic_energy, mass_matrix, task_jacobians)
from .manipulability import BarrierConfig, ecbf_row, manipulability, manipulability_gradient
from .qp import QpProblem, QpStatus, kkt_residual, solve_qp
from .qp_control import build_proposed_qp, build_standard_qp
from .robot_model import RobotModel, RobotState, forward_kinematics, load_model, load_model_file
from .sim import Controller, Scenario, ScenarioError, SimulationAbort, load_scenario, run_scenario
from .task_space import (ControllerGains, TaskMapConfig, operational_quantities, pbc_controller,
                         pbc_damped_controller, storage_eval, task_jacobian, task_position)

__version__ = "0.1.0"
