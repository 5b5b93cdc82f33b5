"""Contact-based kinematic calibration for multi-fingered robotic hands.

Calibrates the DH parameters of a kinematic tree purely from pairwise
fingertip-contact events: signed capsule distances measured as exactly zero
at detection. Includes identifiability analysis of the measurement setup,
task D-optimal sample selection, and a simulation harness that exercises the
full campaign without hardware.
"""

from .estimation import (
    CalibrationResult,
    NoiseModel,
    ParameterVector,
    SolverOptions,
    calibrate,
    map_objective,
    parameter_covariance,
)
from .geometry import capsule_signed_distance, segment_segment_distance
from .identifiability import SensitivityReport, kernel_included, propagate_to_task, sensitivity
from .kinematics import Capsule, DHLink, Frame, KinematicTree, dh_to_frame, forward_kinematics
from .measurement import (
    BodyPair,
    MarkerModel,
    Measurement,
    all_pairs,
    cartesian_measurement,
    contact_measurement,
    jacobian,
    stacked_jacobian,
    task_measurement,
)
from .models import HandModel, dlr_like_hand, generic_hand, load_hand_config, save_hand_config
from .oed import CandidatePool, SelectionResult, select_detmax, select_greedy, select_random, task_d_optimality
from .sampling import (
    ContactEvent,
    SearchTrajectory,
    WorkspaceGrid,
    generate_search_trajectories,
    load_dataset,
    save_dataset,
    shared_workspace,
    simulate_contact,
    simulate_contacts,
    uniform_task_test_set,
)

__version__ = "0.1.0"
