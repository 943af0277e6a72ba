# %% [markdown]
# # A relativistic fluid as a constrained field theory
#
# The fluid is a conserved current `J`. Continuity `d_m J^m = 0` is a
# first-order constraint. Chetaev's rule admits no variation at all here. The
# Lie drag of `J` along a vector field is the vakonomic variation that makes
# the action reproduce the relativistic Euler equations.

# %%
import numpy as np

from varicon import fluid as fl
from varicon.admissibility import random_jet_point
from varicon.rng import Xorshift

sp = fl.fluid_space()
flat = fl.Metric.minkowski(sp)
rng = Xorshift(1)

# %% [markdown]
# Chetaev's rule admits nothing: the kernel is zero at every sample point.

# %%
rep = fl.chetaev_triviality(fl.continuity_constraint(sp), [random_jet_point(sp, rng) for _ in range(10)])
print(rep.kernel_dims)
print(rep.verdict)

# %% [markdown]
# Static and boosted fluids solve the Euler equations. A density ripple with
# nonzero pressure does not.

# %%
pts = np.array([[rng.uniform(-1, 1) for _ in range(4)] for _ in range(20)])
for name, f in (("static", fl.static_uniform(1.3, "rho")), ("boosted dust", fl.boosted_dust(1.0, 0.5)), ("ripple", fl.pressure_gradient())):
    print(f"{name:>13}: max |R| = {np.max(np.abs(fl.euler_residual(f, flat, pts))):.3e}")

# %% [markdown]
# Lie drag keeps a divergence-free current divergence free.

# %%
f = fl.random_divergence_free(rng)
X = fl.random_vector(rng)
print("max |d(Lie_X J)| =", np.max(np.abs(fl.lie_drag_divergence(f, X, pts))))

# %% [markdown]
# The first variation along a compactly supported drag equals minus the
# pairing of `X` with the Euler residual.

# %%
box = [(0.0, 1.0), (-1.0, 1.0), (0.0, 1.0), (0.0, 1.0)]
Xb = fl.bump_vector(box, 1, power=6)
ripple = fl.pressure_gradient()
dS = fl.fluid_first_variation(ripple, flat, Xb, box, 16)
pair = fl.residual_pairing(ripple, flat, Xb, box, 16)
print(f"dS = {dS:.6f}, -pairing = {-pair:.6f}")

# %% [markdown]
# The drag is not faithful: a rigid twist of a static cylinder moves the
# boundary yet leaves `J` untouched.

# %%
print(fl.twist_counterexample().as_dict())
