# Beta parameterizations and the two output constraints.
# Run: python demos/01_beta_and_constraints.py

import numpy as np

from cdnode import beta
from cdnode import constraints as C

# Three ways to write the same distribution.
shape = beta.BetaShape(5.0, 3.0)
mom = beta.shape_to_moments(shape)
print("shape  a=%.1f b=%.1f" % (shape.a, shape.b))
print("moments mu=%.4f sd=%.4f" % (mom.mu, mom.sigma))
print("mode/concentration", beta.shape_to_mode_conc(shape))

# A Beta has an interior mode (a > 1 and b > 1) only below an sd ceiling
# that depends on the mean.
for mu in (0.1, 0.25, 0.5, 0.75, 0.9):
    print("mu=%.2f  largest bell-shaped sd %.4f" % (mu, beta.bell_sigma_bound(mu)))

# The range map sends states into (0, p) x (0, q).  q must sit under the
# ceiling at mu = p, otherwise some outputs would not be bell-shaped.
print("q bound at p=0.75:", C.q_bound(0.75))
C.ConstraintConfig(p=0.75, q=0.15)
try:
    C.ConstraintConfig(p=0.75, q=0.20)
except ValueError as e:
    print("rejected:", e)

# The rate map keeps every derivative inside (-alpha, alpha), even for huge inputs.
z = np.array([-1e9, -3.0, 0.0, 0.2, 3.0, 1e9])
print("phi  ", C.phi(z, 0.5), "all strictly inside:", bool(np.all(np.abs(C.phi(z, 0.5)) < 0.5)))
print("gamma", C.gamma(z, 0.75))
