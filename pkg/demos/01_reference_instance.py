"""Leader and follower on the reference quadratic instance.

The training flow pulls theta towards (1, -1). The follower pays for its
own control and for the size of theta; the leader steers the terminal state
to keep the validation loss small while the trajectory stays short.
"""

#%% build the problem
import numpy as np

from hocl import SolverOptions, reference_problem, run_algorithm_1, run_algorithm_O

prob = reference_problem()
print(f"p={prob.p}, N={prob.N}, T={prob.T}, leader coords {prob.partition.leader_idx}, "
      f"follower coords {prob.partition.follower_idx}")

#%% gradient-step baseline
base = run_algorithm_O(prob, SolverOptions(max_outer=8000, leader_step=1.0))
print(f"baseline: converged={base.converged} after {base.outer_iters} iterations, "
      f"theta(T)={np.round(base.theta_final, 6)}, phi_gap={base.phi_gap:.6g}")

#%% augmented-Hamiltonian updates
msa = run_algorithm_1(prob, SolverOptions(max_outer=8000))
print(f"msa:      converged={msa.converged} after {msa.outer_iters} iterations, "
      f"theta(T)={np.round(msa.theta_final, 6)}, phi_gap={msa.phi_gap:.6g}")

#%% the leader control is bang-bang with a single switch
u1 = msa.u1[:, 0]
switch = np.flatnonzero(np.diff(np.sign(u1)))
print("leader control at a few nodes:", np.round(u1[::10], 3))
print("sign changes after interval(s):", switch.tolist())
