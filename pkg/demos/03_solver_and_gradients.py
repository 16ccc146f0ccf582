# The neural ODE forward solve and its exact reverse sweep.
# Run: python demos/03_solver_and_gradients.py

import numpy as np

from cdnode import checks, ode
from cdnode.constraints import ConstraintConfig
from cdnode.net import init_network, parameter_count

# Integrators on ds/dt = -s.
for method in ("euler", "rk4", "dopri5"):
    print("%-7s empirical order %.3f" % (method, ode.convergence_order(method)))

print("parameters for D=100, H=64:", parameter_count(100, 64))

# A small model over 50 frames of random features.
rng = np.random.default_rng(1)
net = init_network(6, 16, seed=1, final_scale=1.0)
X = rng.normal(size=(50, 6))
for mode in ("none", "rate_only", "rate_and_range"):
    cc = ConstraintConfig(mode=mode)
    traj = ode.solve_cdnode(net, cc, X, np.zeros(2))
    step = np.abs(np.diff(traj.raw_states[0, :, 0])).max()
    print("%-15s max |d state| per frame %.4f  mu range [%.3f, %.3f]" % (
        mode, step, traj.mu.min(), traj.mu.max()))

# RK4 and the adaptive solver agree on the same model.
cc = ConstraintConfig()
a = ode.solve_cdnode(net, cc, X, np.zeros(2), ode.SolveConfig(substeps_per_frame=8)).outputs
b = ode.solve_cdnode(net, cc, X, np.zeros(2), ode.SolveConfig(method="dopri5")).outputs
print("rk4 x8 vs dopri5 max difference %.2e" % np.abs(a - b).max())

# Finite-difference checks of every gradient.
for name, err in checks.run_all().items():
    print("%-13s max relative error %.2e" % (name, err))
