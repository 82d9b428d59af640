"""Codebook assignment for fixed powers: feasibility checks, a discrete
poll-based direct search, and an exhaustive oracle for tiny instances.

Both searches score an assignment ``q`` with the same deterministic power map
(:func:`map_powers`): entries kept from the fixed ``P`` retain their power,
newly switched-on entries receive their cell's mean power, and a cell that
overspends is scaled back onto its budget. The map is the identity on the
support of a budget-feasible ``P``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .phy import SIC_RTOL, LinkModel
from .scenario import ScenarioConfig

__all__ = [
    "ViolationReport",
    "AssignmentCandidate",
    "map_powers",
    "check_feasible",
    "assign_codebooks",
    "exhaustive_assign_oracle",
]

BUDGET_RTOL = 1e-6
# improvements smaller than this (relative) do not count
IMPROVE_RTOL = 1e-12


@dataclass
class ViolationReport:
    """Slack of each constraint family; negative slack means violated."""

    budget: np.ndarray       # (F,) watts left
    codebook_load: np.ndarray    # (F, C) L_T minus users on the codebook
    subcarrier_load: np.ndarray  # (F, N) K minus codebook uses of the subcarrier
    sic_violations: int
    sic_min_slack: float

    @property
    def feasible(self) -> bool:
        return (bool(np.all(self.codebook_load >= 0))
                and bool(np.all(self.subcarrier_load >= 0))
                and self.sic_violations == 0
                and bool(np.all(self.budget >= 0)))

    def summary(self) -> dict:
        return {
            "budget": float(self.budget.min(initial=np.inf)),
            "codebook_load": int(self.codebook_load.min(initial=0)),
            "subcarrier_load": int(self.subcarrier_load.min(initial=0)),
            "sic_violations": self.sic_violations,
        }


@dataclass
class AssignmentCandidate:
    q: np.ndarray
    p: np.ndarray
    objective: float
    feasible: bool
    report: ViolationReport
    evaluations: int = 0
    polls: int = 0


def map_powers(q: np.ndarray, P: np.ndarray, user_cell, p_max) -> np.ndarray:
    """Powers used to score assignment(s) ``q`` (``(..., M, C)``) under fixed ``P``."""
    q = (np.asarray(q) != 0)
    P = np.asarray(P, dtype=float)
    user_cell = np.asarray(user_cell)
    p_max = np.asarray(p_max, dtype=float)
    F = p_max.size
    cell_mask = (np.arange(F)[:, None] == user_cell[None, :]).astype(float)
    pos = P > 0
    npos = cell_mask @ pos.sum(axis=1)
    mean = np.divide(cell_mask @ (P * pos).sum(axis=1), npos,
                     out=np.zeros(F), where=npos > 0)
    counts = np.einsum("fm,...mc->...f", cell_mask, q.astype(float))
    share = np.divide(p_max, counts, out=np.zeros_like(counts), where=counts > 0)
    fill = np.where(npos > 0, mean, share)                  # (..., F)
    fill_user = np.take(fill, user_cell, axis=-1)[..., :, None]
    out = np.where(q, np.where(pos, P, fill_user), 0.0)
    totals = np.einsum("fm,...mc->...f", cell_mask, out)
    factor = np.where(totals > p_max * (1.0 + BUDGET_RTOL),
                      np.divide(p_max, totals, out=np.ones_like(totals), where=totals > 0),
                      1.0)
    return out * np.take(factor, user_cell, axis=-1)[..., :, None]


def _loads(q, link: LinkModel, config: ScenarioConfig):
    cb = np.einsum("fm,...mc->...fc", link.cell_mask, q.astype(float))
    sc = cb @ link.structure.rho.T
    return config.max_users_per_codebook - cb, config.max_subcarrier_reuse - sc


def check_feasible(q, P, link: LinkModel, config: ScenarioConfig) -> ViolationReport:
    """Budget, L_T, K and SIC-order slacks of ``(q, P)``."""
    q = (np.asarray(q) != 0).astype(np.int8)
    P = np.asarray(P, dtype=float) * q
    p_max = np.asarray(config.p_max, dtype=float)
    budget = p_max - link.cell_power(P).sum(axis=-1)
    lt, k = _loads(q, link, config)
    slack, own = link.sic_slack(q, P)
    both = ~np.isnan(slack) & (q[None, :, :] != 0)
    tol = SIC_RTOL * np.maximum(own, 1e-300)[:, None, :]
    viol = int(np.sum(both & (slack < -tol)))
    min_slack = float(np.min(slack[both])) if np.any(both) else np.inf
    return ViolationReport(budget + BUDGET_RTOL * p_max, lt, k, viol, min_slack)


def _structural_ok(qb, link, config):
    lt, k = _loads(qb, link, config)
    return np.all(lt >= 0, axis=(-2, -1)) & np.all(k >= 0, axis=(-2, -1))


def _score(qb, P, link, config, chunk=512):
    """Sum rate of each candidate under the power map, and the mapped powers."""
    rates = np.empty(qb.shape[0])
    for s in range(0, qb.shape[0], chunk):
        Pm = map_powers(qb[s:s + chunk], P, link.user_cell, config.p_max)
        rates[s:s + chunk] = link.sum_rate(Pm)
    return rates


def _neighbours(q: np.ndarray, live: np.ndarray, link: LinkModel, full: bool) -> np.ndarray:
    """Poll set around ``q``: single flips, then (if ``full``) moves of one
    user between codebooks and exchanges of codebooks between two users of
    the same cell. Generated in a fixed lexicographic order."""
    M, C = q.shape
    out = []
    for m in range(M):
        if not live[m]:
            continue
        for c in range(C):
            cand = q.copy()
            cand[m, c] ^= 1
            out.append(cand)
    if full:
        for m in range(M):
            if not live[m]:
                continue
            on = np.flatnonzero(q[m])
            off = np.flatnonzero(q[m] == 0)
            for c in on:
                for c2 in off:
                    cand = q.copy()
                    cand[m, c] = 0
                    cand[m, c2] = 1
                    out.append(cand)
        cell = link.user_cell
        # hand a codebook over to another user of the same cell
        for m1 in range(M):
            if not live[m1]:
                continue
            for c in np.flatnonzero(q[m1]):
                for m2 in np.flatnonzero((cell == cell[m1]) & (q[:, c] == 0)):
                    cand = q.copy()
                    cand[m1, c], cand[m2, c] = 0, 1
                    out.append(cand)
        for m1 in range(M):
            if not live[m1]:
                continue
            for m2 in range(m1 + 1, M):
                if cell[m2] != cell[m1]:
                    continue
                only1 = np.flatnonzero((q[m1] == 1) & (q[m2] == 0))
                only2 = np.flatnonzero((q[m2] == 1) & (q[m1] == 0))
                for c1 in only1:
                    for c2 in only2:
                        cand = q.copy()
                        cand[m1, c1], cand[m1, c2] = 0, 1
                        cand[m2, c2], cand[m2, c1] = 0, 1
                        out.append(cand)
    if not out:
        return np.zeros((0, M, C), dtype=np.int8)
    return np.stack(out).astype(np.int8)


def _first_sic_feasible(order, qb, P, link, config, chunk=64):
    for s in range(0, len(order), chunk):
        idx = order[s:s + chunk]
        Pm = map_powers(qb[idx], P, link.user_cell, config.p_max)
        viol = link.sic_violations(qb[idx], Pm)
        ok = np.flatnonzero(viol == 0)
        if ok.size:
            return int(idx[ok[0]])
    return None


def assign_codebooks(P, q0, link: LinkModel, config: ScenarioConfig,
                     max_polls: int = 10_000) -> AssignmentCandidate:
    """Discrete direct search over binary assignments for fixed powers ``P``.

    Each poll evaluates the full neighbourhood of the incumbent and moves to
    its best feasible improving point. When a full poll fails the search has
    stalled: the flip-only poll set is a subset of it, so shrinking cannot
    succeed either. The incumbent is never replaced by a worse point.
    """
    q = (np.asarray(q0) != 0).astype(np.int8)
    P = np.asarray(P, dtype=float)
    p_max = np.asarray(config.p_max, dtype=float)
    P_inc = map_powers(q, P, link.user_cell, p_max)
    report = check_feasible(q, P_inc, link, config)
    if not report.feasible:
        raise ValueError(f"initial assignment is infeasible: {report.summary()}")
    obj = float(link.sum_rate(P_inc))
    live = p_max[link.user_cell] > 0
    evaluations = 0
    polls = 0
    while polls < max_polls:
        polls += 1
        qb = _neighbours(q, live, link, full=True)
        if qb.shape[0] == 0:
            break
        qb = qb[_structural_ok(qb, link, config)]
        rates = _score(qb, P, link, config)
        evaluations += qb.shape[0]
        better = np.flatnonzero(rates > obj + IMPROVE_RTOL * max(abs(obj), 1.0))
        if better.size == 0:
            break
        # stable sort keeps lexicographic order among ties
        order = better[np.argsort(-rates[better], kind="stable")]
        pick = _first_sic_feasible(order, qb, P, link, config)
        if pick is None:
            break
        q = qb[pick].copy()
        obj = float(rates[pick])
    P_out = map_powers(q, P, link.user_cell, p_max)
    report = check_feasible(q, P_out, link, config)
    return AssignmentCandidate(q, P_out, float(link.sum_rate(P_out)), report.feasible,
                               report, evaluations, polls)


def exhaustive_assign_oracle(P, link: LinkModel, config: ScenarioConfig,
                             max_points: int = 1_000_000) -> AssignmentCandidate:
    """Enumerate every assignment of the live ``(user, codebook)`` entries."""
    P = np.asarray(P, dtype=float)
    p_max = np.asarray(config.p_max, dtype=float)
    M, C = link.num_users, link.num_codebooks
    live = np.repeat((p_max[link.user_cell] > 0)[:, None], C, axis=1)
    bits = np.flatnonzero(live.ravel())
    if 2 ** bits.size > max_points:
        raise ValueError(f"search space 2^{bits.size} exceeds {max_points} points")
    best = None
    chunk = 4096
    total = 2 ** bits.size
    for s in range(0, total, chunk):
        codes = np.arange(s, min(total, s + chunk))
        qb = np.zeros((codes.size, M * C), dtype=np.int8)
        qb[:, bits] = (codes[:, None] >> np.arange(bits.size)[None, :]) & 1
        qb = qb.reshape(-1, M, C)
        qb = qb[_structural_ok(qb, link, config)]
        if qb.shape[0] == 0:
            continue
        Pm = map_powers(qb, P, link.user_cell, p_max)
        rates = link.sum_rate(Pm)
        rates = np.where(link.sic_violations(qb, Pm) == 0, rates, -np.inf)
        k = int(np.argmax(rates))
        if best is None or rates[k] > best[0]:
            best = (float(rates[k]), qb[k].copy())
    q = best[1]
    P_out = map_powers(q, P, link.user_cell, p_max)
    report = check_feasible(q, P_out, link, config)
    return AssignmentCandidate(q, P_out, float(link.sum_rate(P_out)), report.feasible,
                               report, total)
