"""Leader/follower optimal control of gradient-flow parameter estimation.

A learning problem (datasets, linear-in-parameters model, squared loss) is
turned into the controlled gradient flow

    dtheta/dt = -grad J0(theta) + u1(t) + u2(t),

where a leader (controllability of the validation loss) and a follower
(regularization) each own a subset of the coordinates. Three solvers are
provided: a nested gradient-step sweep, successive approximations with
augmented-Hamiltonian updates, and a time-parallel variant built on
intermediate states.
"""

from .baseline import (IterationRecord, SolveReport, SolverOptions, cost_J1, cost_J2,
                       follower_gradient_step, leader_gradient_step, leader_objective,
                       run_algorithm_O)
from .dynamics import (AdjointTrajectory, BlowUpError, ControlTrajectory, StateTrajectory,
                       augmented_hamiltonian, control_gradient, extremum_residual,
                       hamiltonian, integrate_adjoint, integrate_forward,
                       projected_residual, write_trajectory_csv)
from .grid import FOLLOWER, LEADER, ControlPartition, TimeGrid
from .msa import argmin_augH_follower, argmin_augH_leader, run_algorithm_1
from .oracle import analytic_quadratic_state, direct_transcription_solve, fd_gradient
from .parareal import (IntermediateTrajectory, Segment, concatenate, intermediate_state,
                       m_perturbation_check,
                       run_algorithm_2, solve_subinterval, subcost_follower, subcost_leader,
                       total_cost_bar)
from .problem import (Dataset, DimensionError, ModelSpec, ProblemSpec, bootstrap_split,
                      grad_J0, grad_phi, hvp_J0, load_dataset, loss_J0, phi,
                      reference_problem, save_dataset)

__version__ = "0.1.0"
