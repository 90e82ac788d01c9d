"""Adjoint gradients against central differences.

The discrete adjoint is exact for the RK4 scheme, so the agreement is
limited only by the difference noise (about 1e-10 here).
"""

#%% random admissible controls
import numpy as np

from hocl import reference_problem
from hocl.dynamics import ControlTrajectory, control_gradient, integrate_adjoint, integrate_forward
from hocl.grid import FOLLOWER, LEADER
from hocl.oracle import DiscretizedCost

prob = reference_problem()
rng = np.random.default_rng(0)
u1 = ControlTrajectory.from_values(prob, LEADER, rng.uniform(-0.5, 0.5, (prob.N, prob.p)))
u2 = ControlTrajectory.from_values(prob, FOLLOWER, rng.uniform(-0.5, 0.5, (prob.N, prob.p)))
theta = integrate_forward(prob.theta0, u1, u2, prob.grid, prob)

#%% compare per node
for agent, own, other in ((FOLLOWER, u2, u1), (LEADER, u1, u2)):
    g = control_gradient(agent, integrate_adjoint(agent, theta, prob.grid, prob), own, prob)
    cost = DiscretizedCost(agent, prob, prob.grid, other)
    fd = cost.full(cost.fd_gradient(cost.pack(own.values), 1e-5))
    err = np.max(np.abs(g - fd)) / np.max(np.abs(fd))
    print(f"{agent:8s} max per-node error relative to max|fd|: {err:.2e}")

#%% the same checks from the command line
from hocl.cli import main

main(["check-gradients"])
