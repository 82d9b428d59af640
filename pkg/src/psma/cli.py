"""Command line entry point (``psma``).

Exit codes: 0 success, 1 invalid input, 2 file-system trouble.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .experiment import (ExperimentSpec, SweepAxis, alternate_solve, compare_schemes,
                         emit_results, run_experiment, scheme_config)
from .phy import ComplexityParams, LinkModel, receiver_complexity
from .scenario import (ScenarioError, Scheme, build_topology, load_scenario,
                       sample_channels, structure_for)

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(ValueError):
    pass


def parse_seeds(text: str) -> list:
    """``"1,2,5"`` or an inclusive range ``"1..50"``; both forms may be mixed."""
    seeds = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise UsageError(f"empty seed range {part!r}")
            seeds.extend(range(lo, hi + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise UsageError("no seeds given")
    return seeds


def parse_values(text: str) -> list:
    vals = []
    for part in text.split(","):
        part = part.strip()
        if part:
            v = float(part)
            vals.append(int(v) if v.is_integer() else v)
    if not vals:
        raise UsageError("no sweep values given")
    return vals


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_simulate(args) -> int:
    config = load_scenario(args.scenario)
    config = scheme_config(config.replace(seed=args.seed), args.scheme)
    topo = build_topology(config)
    channel = sample_channels(topo, config)
    alloc, trace = alternate_solve(config, channel)
    link = LinkModel(channel, structure_for(config), channel.user_cell)
    rate = float(link.sum_rate(alloc.p))
    print(f"scheme={config.scheme.value} seed={config.seed} sum_rate_nats={rate:.6f} "
          f"outer_iters={trace.outer_iters} converged={str(trace.converged).lower()}")
    if trace.unassigned:
        print(f"unassigned users: {' '.join(map(str, trace.unassigned))}")
    if args.out:
        out = Path(args.out)
        gamma = link.gamma(alloc.p)
        rows = [[int(m), int(c), int(alloc.user_cell[m]), repr(float(alloc.p[m, c])),
                 repr(float(np.log1p(gamma[m, c])))]
                for m, c in zip(*np.nonzero(alloc.q))]
        _write_csv(out / "allocation.csv", ("user", "codebook", "cell", "power_w", "rate_nats"),
                   rows)
        _write_csv(out / "trace.csv", ("step", "sum_rate_nats"),
                   [[i, repr(float(r))] for i, r in enumerate(trace.sum_rate)])
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = load_scenario(args.scenario)
    schemes = [Scheme.parse(s) for s in args.schemes.split(",") if s.strip()]
    spec = ExperimentSpec(config, SweepAxis.parse(args.axis), tuple(parse_values(args.values)),
                          trials=args.trials, schemes=tuple(schemes), output=Path(args.out),
                          base_seed=args.seed)
    table = run_experiment(spec)
    failed = sum(1 for r in table.rows if r.error)
    print(f"{len(table)} rows ({failed} failed) written to {args.out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    config = load_scenario(args.scenario)
    comp = compare_schemes(config, parse_seeds(args.seeds))
    out = Path(args.out)
    emit_results(comp.table, out)
    _write_csv(out / "ratios.csv", ("ratio", "mean", "std_error", "seeds"),
               [[k, repr(m), repr(se), n] for k, m, se, n in comp.as_rows()])
    for k, m, se, n in comp.as_rows():
        print(f"{k}: {m:.4f} +/- {se:.4f} over {n} seeds")
    return EXIT_OK


def cmd_complexity(args) -> int:
    params = ComplexityParams(args.it, args.pi, args.d, args.g, args.lt,
                              args.g_prime if args.g_prime is not None else args.g,
                              args.lt_prime if args.lt_prime is not None else args.lt)
    for scheme in (Scheme.SCMA, Scheme.PSMA, Scheme.PDNOMA):
        print(f"{scheme.value}: {receiver_complexity(params, scheme)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="psma", description="PSMA/SCMA/PD-NOMA "
                                     "HetNet resource allocation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="solve one scenario draw")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="psma")
    p.add_argument("--out", help="directory for allocation.csv and trace.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="Monte Carlo sweep over one axis")
    p.add_argument("--scenario", required=True)
    p.add_argument("--axis", choices=[a.value for a in SweepAxis], required=True)
    p.add_argument("--values", required=True, help="comma-separated, increasing")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--schemes", default="psma,scma,pdnoma")
    p.add_argument("--seed", type=int, default=None, help="base seed (default: scenario seed)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="paired comparison of the three schemes")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seeds", required=True, help='e.g. "1,2,3" or "1..50"')
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("complexity", help="receiver operation counts")
    p.add_argument("--it", type=int, required=True, help="MPA iterations I_T")
    p.add_argument("--pi", type=int, required=True, help="constellation size |pi|")
    p.add_argument("--d", type=int, required=True, help="users per subcarrier in MPA")
    p.add_argument("--g", type=int, default=1, help="codebooks per user")
    p.add_argument("--lt", type=int, default=1, help="users per codebook")
    p.add_argument("--g-prime", type=int, default=None, help="PD-NOMA subcarriers per user")
    p.add_argument("--lt-prime", type=int, default=None, help="PD-NOMA users per subcarrier")
    p.set_defaults(func=cmd_complexity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on bad usage; that code is reserved for I/O here
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ScenarioError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
