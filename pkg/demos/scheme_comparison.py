"""Paired comparison of PSMA against its SCMA and PD-NOMA baselines.

Every scheme sees the same topology and fading per seed, so the per-seed
ratios are paired. Also sweeps the number of users sharing a codebook.

Run: python demos/scheme_comparison.py [--seeds 0..4]
"""
import argparse

from psma import ScenarioConfig, compare_schemes
from psma.experiment import run_trial
from psma.cli import parse_seeds

parser = argparse.ArgumentParser()
parser.add_argument("--seeds", default="0..4")
args = parser.parse_args()
seeds = parse_seeds(args.seeds)

config = ScenarioConfig(num_bs=3, num_users=12, num_subcarriers=8, num_codebooks=28,
                        codebook_size=2, p_max=(30.0, 2.0, 2.0))

comp = compare_schemes(config, seeds)
print("mean sum rate (nats):", {k: round(v, 2) for k, v in comp.means.items()})
for name, mean, se, n in comp.as_rows():
    print(f"  {name}: {mean:.3f} +/- {se:.3f} over {n} seeds")

print("\nPSMA mean sum rate against users per codebook:")
for lt in (1, 2, 3):
    cfg = config.replace(max_users_per_codebook=lt)
    rows = [run_trial(cfg, "psma", s) for s in seeds]
    rates = [r.sum_rate_nats for r in rows if not r.error]
    print(f"  L_T={lt}: {sum(rates) / len(rates):.2f}")
