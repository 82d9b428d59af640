"""Step through the power solver on a two-user, one-codebook cell.

Shows the tangent bound used at each outer step, the per-step sum rates,
and a comparison with a dense grid search over the power split.

Run: python demos/power_walkthrough.py
"""
import numpy as np

from psma import LinkModel, ScenarioConfig, build_topology, sample_channels, structure_for
from psma.power import (PowerProblem, brute_force_power_oracle, equal_split, scale_coeffs,
                        solve_power_scale)

config = ScenarioConfig(num_bs=1, num_users=2, num_subcarriers=2, num_codebooks=1,
                        codebook_size=2, p_max=(2.0,), macro_radius=100.0, seed=4)
channel = sample_channels(build_topology(config), config)
link = LinkModel(channel, structure_for(config), channel.user_cell)

q = np.ones((2, 1), dtype=np.int8)
problem = PowerProblem(link, q, config.p_max)
P0 = equal_split(q, link.user_cell, config.p_max)
print("start powers", P0.ravel(), "SINR", problem.gamma(problem.to_vector(P0)))

# the tangent bound at an SINR of 3: exact there, below ln(1+x) elsewhere
s = scale_coeffs([3.0])
for x in (0.5, 3.0, 30.0):
    print(f"  x={x:5.1f}: bound {s.bound(x)[0]:.4f} <= ln(1+x) {np.log1p(x):.4f}")

P, trace = solve_power_scale(problem, P0, config)
print("\nsum rate per outer step:", np.round(trace.sum_rate, 5).tolist())
print("dual iterations per step:", trace.inner_iters)
print("final powers", P.ravel().round(4), "rate", round(float(link.sum_rate(P)), 5))

best = brute_force_power_oracle(problem, grid_points=2000, max_variables=2)
print("grid optimum", best.ravel().round(4), "rate", round(float(link.sum_rate(best)), 5))
