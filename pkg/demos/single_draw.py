"""Solve one channel draw of the three-cell network and look at the result.

Run: python demos/single_draw.py [--seed 3]
"""
import argparse

import numpy as np

from psma import (LinkModel, ScenarioConfig, alternate_solve, build_topology,
                  sample_channels, structure_for)

parser = argparse.ArgumentParser()
parser.add_argument("--seed", type=int, default=3)
args = parser.parse_args()

# a macro cell with 30 W and two 2 W small cells, four users each
config = ScenarioConfig(num_bs=3, num_users=12, num_subcarriers=8, num_codebooks=28,
                        codebook_size=2, p_max=(30.0, 2.0, 2.0), seed=args.seed)
topology = build_topology(config)
channel = sample_channels(topology, config)
print("users per cell:", np.bincount(topology.user_cell).tolist())
print("distance to serving BS (m):",
      np.round(topology.distances[topology.user_cell, np.arange(12)], 1).tolist())

alloc, trace = alternate_solve(config, channel)
link = LinkModel(channel, structure_for(config), channel.user_cell)

print(f"\nsum rate {link.sum_rate(alloc.p):.2f} nats after {trace.outer_iters} "
      f"alternations (converged={trace.converged})")
print("rate trace:", " -> ".join(f"{r:.1f}" for r in trace.sum_rate))

# how many users share each active codebook, per cell
for f in range(config.num_bs):
    members = alloc.user_cell == f
    load = alloc.q[members].sum(axis=0)
    used = np.flatnonzero(load)
    print(f"cell {f}: {used.size} codebooks in use, sharing "
          f"{dict(zip(*(a.tolist() for a in np.unique(load[used], return_counts=True))))}, "
          f"power {alloc.p[members].sum():.3f} of {config.p_max[f]} W")

gamma = link.gamma(alloc.p)
m, c = np.unravel_index(np.argmax(gamma), gamma.shape)
print(f"\nstrongest stream: user {m} on codebook {c}, SINR {10 * np.log10(gamma[m, c]):.1f} dB")
