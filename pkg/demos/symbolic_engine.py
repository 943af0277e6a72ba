# %% [markdown]
# # The jet expression engine
#
# Expressions live on a jet space: base coordinates `x0..`, fields and their
# derivatives `d(u, 0, 1)`, and named parameters. Formal derivatives follow
# the chain rule through the jets.

# %%
from varicon import exprjet as ej
from varicon.admissibility import random_jet_point
from varicon.rng import Xorshift

space = ej.Space(2, ("u", "w"), ("k",))
e = ej.parse("k*u*d(w,0) + sin(d(u,1))", space)
print("e       =", ej.to_source(e, space))
print("d/dx0 e =", ej.to_source(ej.formal_derivative(e, 0), space))
print("de/du   =", ej.to_source(ej.diff(e, space.jet(0)), space))

# %% [markdown]
# A finite-difference check of a partial derivative at a random jet point.

# %%
rng = Xorshift(3)
p = random_jet_point(space, rng)
params = {"k": 0.7}
u = space.jet(0)
h = 1e-6
exact = float(ej.evaluate(ej.diff(e, u), p, params))
fd = (float(ej.evaluate(e, p.with_value(u, float(ej.evaluate(u, p)) + h), params))
      - float(ej.evaluate(e, p.with_value(u, float(ej.evaluate(u, p)) - h), params))) / (2 * h)
print(exact, fd)
