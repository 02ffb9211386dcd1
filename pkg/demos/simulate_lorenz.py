"""
Simulating the Lorenz systems
=============================

Integrate Lorenz 63 and Lorenz 96 with fixed-step RK4 and look at the
attractor bounds that later serve as a stability check for learned models.
"""
import numpy as np

from chaosflow import Lorenz96Params, SystemSpec, integrate, save_trajectory

# Lorenz 63 with the classical parameters, sampled every 0.01 s for 100 s.
# Each sample is reached with 10 RK4 substeps.
l63 = integrate(SystemSpec("lorenz63"), [1.0, 1.0, 1.0], dt=0.01, n_steps=10_000)
print("Lorenz 63 rows:", l63.n_rows, "labels:", l63.labels)
print("max |state| per variable:", np.round(l63.envelope(), 2))

# the z variable never goes negative on the attractor
print("z range:", l63.states[:, 2].min().round(2), l63.states[:, 2].max().round(2))

# Lorenz 96 with 40 sites. A tiny kick off the equilibrium x = F grows into chaos.
x0 = np.full(40, 8.0)
x0[0] += 0.0081
l96 = integrate(SystemSpec("lorenz96", Lorenz96Params(n=40, forcing=8.0)), x0, dt=0.01, n_steps=5_000)
spread = np.abs(l96.states - 8.0).max(axis=1)
print("Lorenz 96 distance from equilibrium at t = 0, 10, 50 s:", spread[[0, 1000, 5000]].round(3))

# Trajectories can be written as text (exact %.17g values) or as compact binary.
save_trajectory(l63, "lorenz63.csv")
save_trajectory(l63, "lorenz63.cftj")
print(open("lorenz63.csv").readline().strip())
