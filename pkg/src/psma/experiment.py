"""Alternating power/codebook optimization and Monte Carlo sweeps."""
from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import assign_codebooks, check_feasible
from .phy import Allocation, LinkModel
from .power import PowerProblem, equal_split, solve_power_scale
from .scenario import (ChannelRealization, ScenarioConfig, Scheme, build_topology,
                       sample_channels, structure_for)

__all__ = [
    "SweepAxis",
    "ExperimentSpec",
    "AlternationTrace",
    "ResultRow",
    "ResultTable",
    "HygieneError",
    "scheme_config",
    "greedy_assignment",
    "repair_sic",
    "alternate_solve",
    "run_trial",
    "run_experiment",
    "emit_results",
    "compare_schemes",
    "CSV_HEADER",
]

log = logging.getLogger(__name__)

CSV_HEADER = ("scheme", "sweep_axis", "sweep_value", "seed", "sum_rate_nats",
              "outer_iters", "converged", "budget_residual", "sic_violations")
SUMMARY_HEADER = ("scheme", "sweep_axis", "sweep_value", "trials", "failed",
                  "mean_sum_rate_nats", "std_sum_rate_nats", "mean_outer_iters")
MONOTONE_TOL = 1e-6
BUDGET_TOL = 1e-6


class HygieneError(RuntimeError):
    """An emitted allocation failed its constraint re-check."""


class SweepAxis(str, enum.Enum):
    USERS = "users"
    TOTAL_POWER = "power"
    L_T = "lt"

    @classmethod
    def parse(cls, value) -> "SweepAxis":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"users": cls.USERS, "power": cls.TOTAL_POWER,
                   "total_power": cls.TOTAL_POWER, "lt": cls.L_T, "l_t": cls.L_T}
        if key not in aliases:
            raise ValueError(f"unknown sweep axis {value!r}; expected users, power or lt")
        return aliases[key]

    def apply(self, config: ScenarioConfig, value) -> ScenarioConfig:
        if self is SweepAxis.USERS:
            return config.replace(num_users=int(value))
        if self is SweepAxis.L_T:
            return config.replace(max_users_per_codebook=int(value))
        total = sum(config.p_max)
        if total <= 0:
            raise ValueError("cannot rescale an all-zero power budget")
        return config.replace(p_max=tuple(p * float(value) / total for p in config.p_max))


@dataclass(frozen=True)
class ExperimentSpec:
    base: ScenarioConfig
    axis: SweepAxis
    values: tuple
    trials: int = 1
    schemes: tuple = (Scheme.PSMA,)
    output: Path | None = None
    base_seed: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "axis", SweepAxis.parse(self.axis))
        object.__setattr__(self, "values", tuple(self.values))
        object.__setattr__(self, "schemes", tuple(Scheme.parse(s) for s in self.schemes))
        if not self.values:
            raise ValueError("at least one sweep value is required")
        if any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("sweep values must be strictly increasing")
        if int(self.trials) < 1:
            raise ValueError("trials must be >= 1")
        if not self.schemes:
            raise ValueError("at least one scheme is required")

    @property
    def seed0(self) -> int:
        return self.base.seed if self.base_seed is None else int(self.base_seed)


@dataclass
class AlternationTrace:
    """History of one alternation run.

    ``sum_rate[0]`` is the initial point; afterwards each outer iteration
    appends the rate after the power step and after the codebook step.
    """

    sum_rate: list = field(default_factory=list)
    power_change: list = field(default_factory=list)
    scale_iters: list = field(default_factory=list)
    polls: list = field(default_factory=list)
    outer_iters: int = 0
    converged: bool = False
    unassigned: tuple = ()
    dropped_pairs: int = 0
    min_multiplier: float = 0.0

    def is_monotone(self, tol: float = MONOTONE_TOL) -> bool:
        r = np.asarray(self.sum_rate)
        return bool(np.all(np.diff(r) >= -tol * np.maximum(1.0, np.abs(r[:-1]))))


@dataclass
class ResultRow:
    scheme: str
    sweep_axis: str
    sweep_value: float
    seed: int
    sum_rate_nats: float
    outer_iters: int
    converged: bool
    budget_residual: float
    sic_violations: int
    error: str = ""
    digest: str = ""

    def key(self):
        return (self.scheme, self.sweep_axis, self.sweep_value, self.seed)

    def csv_fields(self) -> list:
        return [self.scheme, self.sweep_axis, _fmt(self.sweep_value), str(self.seed),
                _fmt(self.sum_rate_nats), str(self.outer_iters),
                "true" if self.converged else "false", _fmt(self.budget_residual),
                str(self.sic_violations)]


@dataclass
class ResultTable:
    rows: list = field(default_factory=list)

    def sorted(self) -> "ResultTable":
        return ResultTable(sorted(self.rows, key=ResultRow.key))

    def select(self, scheme=None, value=None) -> list:
        out = self.rows
        if scheme is not None:
            s = Scheme.parse(scheme).value
            out = [r for r in out if r.scheme == s]
        if value is not None:
            out = [r for r in out if r.sweep_value == value]
        return out

    def mean_rate(self, scheme, value=None) -> float:
        rates = [r.sum_rate_nats for r in self.select(scheme, value) if not r.error]
        return float(np.mean(rates)) if rates else math.nan

    def __len__(self):
        return len(self.rows)


def _fmt(x) -> str:
    """Shortest round-trip float text, with integers printed bare."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def scheme_config(config: ScenarioConfig, scheme=None) -> ScenarioConfig:
    """Scenario actually solved for ``scheme``: SCMA caps every codebook at one user."""
    scheme = config.scheme if scheme is None else Scheme.parse(scheme)
    if scheme is Scheme.SCMA:
        return config.replace(scheme=scheme, max_users_per_codebook=1)
    return config.replace(scheme=scheme)


def greedy_assignment(link: LinkModel, config: ScenarioConfig) -> np.ndarray:
    """Round-robin initial assignment.

    In every round each user (in index order) takes its strongest remaining
    codebook by average gain whose L_T and K budgets still have room. Rounds
    repeat until nobody can be served further.
    """
    M, C = link.num_users, link.num_codebooks
    F = link.num_bs
    rho = link.structure.rho.astype(int)
    q = np.zeros((M, C), dtype=np.int8)
    cb_load = np.zeros((F, C), dtype=int)
    sc_load = np.zeros((F, rho.shape[0]), dtype=int)
    live = np.asarray(config.p_max)[link.user_cell] > 0
    order = np.argsort(-link.own_hhat, axis=1, kind="stable")
    progress = True
    while progress:
        progress = False
        for m in np.flatnonzero(live):
            f = link.user_cell[m]
            for c in order[m]:
                if q[m, c]:
                    continue
                if cb_load[f, c] >= config.max_users_per_codebook:
                    continue
                if np.any(sc_load[f] + rho[:, c] > config.max_subcarrier_reuse):
                    continue
                q[m, c] = 1
                cb_load[f, c] += 1
                sc_load[f] += rho[:, c]
                progress = True
                break
    return q


def repair_sic(q: np.ndarray, link: LinkModel, p_max):
    """Drop the worse user of violated SIC pairs until equal split is SIC-feasible."""
    q = q.copy()
    dropped = 0
    while True:
        P = equal_split(q, link.user_cell, p_max)
        slack, own = link.sic_slack(q, P)
        tol = 1e-9 * np.maximum(own, 1e-300)[:, None, :]
        viol = ~np.isnan(slack) & (q[None, :, :] != 0) & (slack < -tol)
        if not viol.any():
            return q, P, dropped
        m, _, c = np.argwhere(viol)[0]
        q[m, c] = 0
        dropped += 1


def alternate_solve(config: ScenarioConfig, channel: ChannelRealization,
                    structure=None):
    """Alternate power allocation and codebook assignment.

    Parameters
    ----------
    config : ScenarioConfig
        Scenario; ``config.scheme`` selects the structure (PD-NOMA works on
        single-subcarrier codebooks). SCMA callers should pass
        :func:`scheme_config` output so that L_T is 1.
    channel : ChannelRealization
        Must carry ``user_cell``.

    Returns
    -------
    (Allocation, AlternationTrace)
    """
    config.validate()
    if channel.user_cell is None:
        raise ValueError("channel realization does not record the serving cells")
    F, M, N = np.shape(channel.gain)
    if (F, M, N) != (config.num_bs, config.num_users, config.num_subcarriers):
        raise ValueError(f"channel shape {(F, M, N)} does not match the scenario")
    structure = structure_for(config) if structure is None else structure
    link = LinkModel(channel, structure, channel.user_cell)
    p_max = np.asarray(config.p_max, dtype=float)
    trace = AlternationTrace()

    q = greedy_assignment(link, config)
    q, P, trace.dropped_pairs = repair_sic(q, link, p_max)
    trace.sum_rate.append(float(link.sum_rate(P)))
    scale = float(p_max.max())
    mins = []
    if scale <= 0:
        trace.converged = True
    for t in range(config.max_outer_iter if scale > 0 else 0):
        problem = PowerProblem(link, q, p_max)
        P_pow, ptrace = solve_power_scale(problem, P, config)
        trace.scale_iters.append(len(ptrace))
        if ptrace.dual is not None:
            mins.append(min(float(np.min(ptrace.dual.delta, initial=0.0)),
                            float(np.min(ptrace.dual.beta, initial=0.0))))
        trace.sum_rate.append(float(link.sum_rate(P_pow)))
        cand = assign_codebooks(P_pow, q, link, config)
        trace.polls.append(cand.polls)
        trace.sum_rate.append(cand.objective)
        change = float(np.linalg.norm(cand.p - P) / scale)
        trace.power_change.append(change)
        q, P = cand.q, cand.p
        trace.outer_iters = t + 1
        if change <= config.upsilon:
            trace.converged = True
            break
    trace.min_multiplier = min(mins, default=0.0)
    served = q.sum(axis=1) > 0
    trace.unassigned = tuple(int(m) for m in np.flatnonzero(~served))
    if trace.unassigned:
        log.info("users left unassigned: %s", list(trace.unassigned))
    return Allocation(q, P, channel.user_cell, config.scheme), trace


def _hygiene(alloc: Allocation, trace: AlternationTrace, link: LinkModel,
             config: ScenarioConfig):
    p_max = np.asarray(config.p_max, dtype=float)
    report = check_feasible(alloc.q, alloc.p, link, config)
    over = link.cell_power(alloc.p).sum(axis=-1) - p_max
    residual = float(np.max(over / np.maximum(p_max, 1e-300), initial=-np.inf))
    problems = []
    if np.any(over > BUDGET_TOL * p_max):
        problems.append("budget")
    if np.any(report.codebook_load < 0):
        problems.append("L_T")
    if np.any(report.subcarrier_load < 0):
        problems.append("K")
    if trace.min_multiplier < 0:
        problems.append("negative multiplier")
    if not trace.is_monotone():
        problems.append("non-monotone trace")
    return max(residual, 0.0) if np.isfinite(residual) else 0.0, report.sic_violations, problems


def run_trial(config: ScenarioConfig, scheme, seed: int, axis: str = "",
              value: float = 0.0) -> ResultRow:
    """One (scheme, seed) run with its emission-time constraint re-check."""
    scheme = Scheme.parse(scheme)
    cfg = scheme_config(config.replace(seed=int(seed)), scheme)
    row = ResultRow(scheme.value, axis, float(value), int(seed), math.nan, 0, False,
                    math.nan, 0)
    try:
        topo = build_topology(cfg)
        channel = sample_channels(topo, cfg)
        row.digest = channel.digest()
        alloc, trace = alternate_solve(cfg, channel)
        link = LinkModel(channel, structure_for(cfg), channel.user_cell)
        residual, viol, problems = _hygiene(alloc, trace, link, cfg)
        if problems:
            raise HygieneError(", ".join(problems))
        row.sum_rate_nats = float(link.sum_rate(alloc.p))
        row.outer_iters = trace.outer_iters
        row.converged = trace.converged
        row.budget_residual = residual
        row.sic_violations = int(viol)
    except Exception as exc:  # recorded in-row; a sweep never aborts
        log.warning("trial %s/%s seed %d failed: %s", scheme.value, value, seed, exc)
        row.error = f"{type(exc).__name__}: {exc}"
    return row


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    """Sweep ``spec.axis`` over its values; trial ``i`` uses seed ``seed0 + i``."""
    rows = []
    for value in spec.values:
        cfg = spec.axis.apply(spec.base, value)
        for scheme in spec.schemes:
            for i in range(int(spec.trials)):
                rows.append(run_trial(cfg, scheme, spec.seed0 + i, spec.axis.value, value))
    table = ResultTable(rows).sorted()
    if spec.output is not None:
        emit_results(table, spec.output)
    return table


def summarize(table: ResultTable) -> list:
    groups: dict = {}
    for r in table.rows:
        groups.setdefault((r.scheme, r.sweep_axis, r.sweep_value), []).append(r)
    out = []
    for key in sorted(groups):
        rows = groups[key]
        ok = [r for r in rows if not r.error]
        rates = np.array([r.sum_rate_nats for r in ok])
        iters = np.array([r.outer_iters for r in ok], dtype=float)
        out.append({
            "scheme": key[0], "sweep_axis": key[1], "sweep_value": key[2],
            "trials": len(rows), "failed": len(rows) - len(ok),
            "mean_sum_rate_nats": float(rates.mean()) if ok else math.nan,
            "std_sum_rate_nats": float(rates.std(ddof=1)) if len(ok) > 1 else 0.0,
            "mean_outer_iters": float(iters.mean()) if ok else math.nan,
        })
    return out


def emit_results(table: ResultTable, path) -> tuple:
    """Write ``results.csv`` and ``summary.csv`` under directory ``path``.

    A path ending in ``.csv`` is used as the results file itself, with the
    summary written next to it as ``<stem>_summary.csv``.
    """
    if not table.rows:
        raise ValueError("cannot emit an empty result table")
    path = Path(path)
    if path.suffix == ".csv":
        results, summary = path, path.with_name(path.stem + "_summary.csv")
    else:
        path.mkdir(parents=True, exist_ok=True)
        results, summary = path / "results.csv", path / "summary.csv"
    table = table.sorted()
    with open(results, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in table.rows:
            w.writerow(r.csv_fields())
    with open(summary, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        for s in summarize(table):
            w.writerow([s["scheme"], s["sweep_axis"], _fmt(s["sweep_value"]),
                        s["trials"], s["failed"], _fmt(s["mean_sum_rate_nats"]),
                        _fmt(s["std_sum_rate_nats"]), _fmt(s["mean_outer_iters"])])
    return results, summary


@dataclass
class Comparison:
    seeds: tuple
    table: ResultTable
    ratios: dict          # "psma/scma" -> per-seed ratios
    mean_ratio: dict
    std_error: dict
    means: dict

    def as_rows(self) -> list:
        return [(k, self.mean_ratio[k], self.std_error[k], len(self.ratios[k]))
                for k in sorted(self.ratios)]


def compare_schemes(config: ScenarioConfig, seeds, schemes=(Scheme.PSMA, Scheme.SCMA,
                                                            Scheme.PDNOMA),
                    reference=Scheme.PSMA) -> Comparison:
    """Run every scheme on the same channel draws and pair the sum rates by seed."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ValueError("at least one seed is required")
    schemes = tuple(Scheme.parse(s) for s in schemes)
    reference = Scheme.parse(reference)
    rows = []
    for seed in seeds:
        batch = [run_trial(config, s, seed, "seed", seed) for s in schemes]
        digests = {r.digest for r in batch if r.digest}
        if len(digests) > 1:
            raise RuntimeError(f"seed {seed}: schemes saw different channel draws")
        rows.extend(batch)
    table = ResultTable(rows).sorted()
    by = {(r.scheme, r.seed): r for r in table.rows}
    ratios, mean_ratio, std_error, means = {}, {}, {}, {}
    for s in schemes:
        ok = [by[(s.value, k)].sum_rate_nats for k in seeds if not by[(s.value, k)].error]
        means[s.value] = float(np.mean(ok)) if ok else math.nan
    for s in schemes:
        if s is reference and len(schemes) > 1:
            continue
        name = f"{reference.value}/{s.value}"
        vals = []
        for k in seeds:
            a, b = by[(reference.value, k)], by[(s.value, k)]
            if a.error or b.error or b.sum_rate_nats <= 0:
                continue
            vals.append(a.sum_rate_nats / b.sum_rate_nats)
        vals = np.array(vals)
        ratios[name] = vals
        mean_ratio[name] = float(vals.mean()) if vals.size else math.nan
        std_error[name] = (float(vals.std(ddof=1) / math.sqrt(vals.size))
                           if vals.size > 1 else 0.0)
    return Comparison(seeds, table, ratios, mean_ratio, std_error, means)
