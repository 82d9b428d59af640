"""Closed-form physical layer: codebook gains, SINRs, rates, SIC checks and
receiver complexity for PSMA, SCMA and PD-NOMA downlinks.

Allocations are stored compactly as ``(M, C)`` arrays because every user is
served by exactly one BS: ``q[f][m][c]`` of the full model equals
``q[m, c]`` when ``f == user_cell[m]`` and 0 otherwise.
Rates are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import ChannelRealization, CodebookStructure, Scheme, subcarrier_structure

__all__ = [
    "Allocation",
    "ComplexityParams",
    "SinrReport",
    "SicPair",
    "LinkModel",
    "avg_codebook_gain",
    "sinr_psma",
    "sinr_cross",
    "sinr_scma",
    "sinr_pdnoma",
    "sum_rate",
    "sic_feasible",
    "detection_order",
    "receiver_complexity",
]

# relative slack below which an SIC pair counts as violated
SIC_RTOL = 1e-9


@dataclass
class Allocation:
    """Binary assignment ``q`` and powers ``p`` (W), both ``(M, C)``.

    For PD-NOMA the second axis is the subcarrier axis and ``q`` is the
    subcarrier indicator.
    """

    q: np.ndarray
    p: np.ndarray
    user_cell: np.ndarray
    scheme: Scheme = Scheme.PSMA

    def __post_init__(self):
        self.q = (np.asarray(self.q) != 0).astype(np.int8)
        self.p = np.asarray(self.p, dtype=float)
        self.user_cell = np.asarray(self.user_cell, dtype=int)
        self.scheme = Scheme.parse(self.scheme)
        if self.q.shape != self.p.shape or self.q.ndim != 2:
            raise ValueError("q and p must be (M, C) arrays of equal shape")
        if self.user_cell.shape != (self.q.shape[0],):
            raise ValueError("user_cell must have one entry per user")
        if np.any(self.p < 0) or not np.all(np.isfinite(self.p)):
            raise ValueError("powers must be finite and non-negative")
        if np.any((self.p > 0) & (self.q == 0)):
            raise ValueError("power on an unassigned entry")

    @property
    def num_users(self) -> int:
        return self.q.shape[0]

    @property
    def num_codebooks(self) -> int:
        return self.q.shape[1]

    def per_cell(self, num_bs: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Expand to the ``(F, M, C)`` layout of the full model."""
        F = int(self.user_cell.max()) + 1 if num_bs is None else num_bs
        mask = (np.arange(F)[:, None] == self.user_cell[None, :])[:, :, None]
        return mask * self.q[None], mask * self.p[None]

    def cell_power(self, num_bs: int) -> np.ndarray:
        return np.bincount(self.user_cell, weights=(self.q * self.p).sum(axis=1),
                           minlength=num_bs)

    def copy(self) -> "Allocation":
        return Allocation(self.q.copy(), self.p.copy(), self.user_cell.copy(), self.scheme)


@dataclass(frozen=True)
class ComplexityParams:
    I_T: int
    pi_size: int
    d: int
    G: int = 1
    L_T: int = 1
    G_prime: int = 1
    L_T_prime: int = 1

    def __post_init__(self):
        for name in ("I_T", "pi_size", "d", "G", "L_T", "G_prime", "L_T_prime"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass
class SinrReport:
    gamma: np.ndarray            # (M, C)
    rate: np.ndarray             # (M, C), nats
    cross_gamma: np.ndarray      # (M, M, C): [m', m, c] = SINR of m' measured at m
    sum_rate: float

    @property
    def user_rate(self) -> np.ndarray:
        return self.rate.sum(axis=1)


@dataclass(frozen=True)
class SicPair:
    cell: int
    codebook: int
    better: int
    worse: int
    satisfied: bool
    slack: float


class LinkModel:
    """Per-channel precomputation shared by every SINR evaluation.

    ``eff[f, m, c]`` is the effective codebook gain ``sum_n rho*eta*|h|^2`` from
    BS ``f`` at user ``m``; ``hhat`` the unweighted average used for ordering.
    ``better[m, k, c]`` is true when user ``k`` shares ``m``'s cell and is decoded
    after ``m`` on codebook ``c`` (so ``k`` interferes with ``m``).
    """

    def __init__(self, channel: ChannelRealization, structure: CodebookStructure,
                 user_cell):
        self.channel = channel
        self.structure = structure
        self.user_cell = np.asarray(user_cell, dtype=int)
        gain = np.asarray(channel.gain, dtype=float)
        F, M, N = gain.shape
        if structure.num_subcarriers != N:
            raise ValueError("structure and channel disagree on the subcarrier count")
        if self.user_cell.shape != (M,):
            raise ValueError("user_cell must have one entry per user")
        self.num_bs, self.num_users, self.num_codebooks = F, M, structure.num_codebooks
        w = structure.rho * structure.eta
        self.eff = gain @ w                                   # (F, M, C)
        self.hhat = gain @ structure.rho / structure.codebook_size
        self.noise = np.asarray(channel.noise, dtype=float) @ w   # (M, C)
        users = np.arange(M)
        self.own_eff = self.eff[self.user_cell, users]        # (M, C)
        self.own_hhat = self.hhat[self.user_cell, users]
        self.cell_mask = (np.arange(F)[:, None] == self.user_cell[None, :]).astype(float)
        self.eff_other = self.eff * (1.0 - self.cell_mask)[:, :, None]
        same = self.user_cell[:, None] == self.user_cell[None, :]
        h_m = self.own_hhat[:, None, :]
        h_k = self.own_hhat[None, :, :]
        later = (h_k > h_m) | ((h_k == h_m) & (users[None, :, None] > users[:, None, None]))
        self.better = later & same[:, :, None]                 # (M, M, C)
        self.better_f = self.better.astype(float)

    # -- vectorized SINR machinery; ``P`` is q*p with shape (..., M, C) --
    def cell_power(self, P: np.ndarray) -> np.ndarray:
        return np.einsum("fm,...mc->...fc", self.cell_mask, P)

    def intercell(self, P: np.ndarray) -> np.ndarray:
        return np.einsum("fmc,...fc->...mc", self.eff_other, self.cell_power(P))

    def stronger_power(self, P: np.ndarray) -> np.ndarray:
        """Sum of same-cell powers on each codebook from users decoded later."""
        return np.einsum("mkc,...kc->...mc", self.better_f, P)

    def gamma(self, P: np.ndarray) -> np.ndarray:
        # grouped as in cross_gamma so the diagonal of that matches exactly
        denom = self.own_eff * self.stronger_power(P) + (self.intercell(P) + self.noise)
        return P * self.own_eff / denom

    def cross_gamma(self, P: np.ndarray) -> np.ndarray:
        """``out[..., m', m, c]``: SINR of user m' measured at user m."""
        S = self.stronger_power(P)                            # (..., M', C)
        inter = self.intercell(P)                             # (..., M, C)
        num = P[..., :, None, :] * self.own_eff
        den = self.own_eff * S[..., :, None, :] + (inter + self.noise)[..., None, :, :]
        return num / den

    def sum_rate(self, P: np.ndarray) -> np.ndarray:
        return np.log1p(self.gamma(P)).sum(axis=(-2, -1))

    def sic_slack(self, q: np.ndarray, P: np.ndarray):
        """Slack ``gamma_m(j) - q_j*gamma_m(m)`` at ``[..., m, j, c]`` for pairs
        where ``j`` is better than an assigned ``m``; NaN elsewhere.

        Also returns the own SINRs ``gamma_m(m)``.
        """
        cross = self.cross_gamma(P)
        own = np.einsum("...mmc->...mc", cross)
        slack = cross - q[..., None, :, :] * own[..., :, None, :]
        valid = self.better & (q[..., :, None, :] != 0)
        return np.where(valid, slack, np.nan), own

    def sic_violations(self, q: np.ndarray, P: np.ndarray):
        """Number of violated pairs with both users assigned (per batch item)."""
        slack, own = self.sic_slack(q, P)
        tol = SIC_RTOL * np.maximum(own, 1e-300)[..., :, None, :]
        both = ~np.isnan(slack) & (q[..., None, :, :] != 0)
        return np.sum(both & (slack < -tol), axis=(-3, -2, -1))


def _link(alloc: Allocation, channel, structure) -> LinkModel:
    if alloc.scheme is Scheme.PDNOMA and structure is None:
        structure = subcarrier_structure(channel.gain.shape[2])
    return LinkModel(channel, structure, alloc.user_cell)


def avg_codebook_gain(channel: ChannelRealization, structure: CodebookStructure,
                      f: int, m: int, c: int) -> float:
    """Mean of ``|h^f_{m,n}|^2`` over the subcarriers of codebook ``c``."""
    rho = structure.rho[:, c]
    return float(rho @ channel.gain[f, m] / rho.sum())


def _check_cell(alloc: Allocation, f: int, m: int) -> None:
    if alloc.user_cell[m] != f:
        raise ValueError(f"user {m} is served by BS {alloc.user_cell[m]}, not {f}")


def sinr_psma(alloc: Allocation, channel: ChannelRealization,
              structure: CodebookStructure, f: int, m: int, c: int) -> float:
    _check_cell(alloc, f, m)
    link = LinkModel(channel, structure, alloc.user_cell)
    return float(link.gamma(alloc.q * alloc.p)[m, c])


def sinr_cross(alloc: Allocation, channel: ChannelRealization,
               structure: CodebookStructure, f: int, m_prime: int, m: int,
               c: int) -> float:
    """SINR of user ``m_prime``'s signal as observed by user ``m`` on codebook ``c``."""
    _check_cell(alloc, f, m)
    _check_cell(alloc, f, m_prime)
    if m != m_prime and not (alloc.q[m, c] and alloc.q[m_prime, c]):
        raise ValueError(f"users {m_prime} and {m} do not share codebook {c}")
    link = LinkModel(channel, structure, alloc.user_cell)
    return float(link.cross_gamma(alloc.q * alloc.p)[m_prime, m, c])


def sinr_scma(alloc: Allocation, channel: ChannelRealization,
              structure: CodebookStructure, f: int, m: int, c: int) -> float:
    """SCMA SINR: only inter-cell reuse of codebook ``c`` interferes."""
    _check_cell(alloc, f, m)
    reuse = np.bincount(alloc.user_cell[alloc.q[:, c] != 0], minlength=f + 1)
    if reuse.size and reuse.max() > 1:
        raise ValueError(f"codebook {c} is reused inside a cell; not an SCMA allocation")
    link = LinkModel(channel, structure, alloc.user_cell)
    P = alloc.q * alloc.p
    return float(P[m, c] * link.own_eff[m, c] / (link.intercell(P)[m, c] + link.noise[m, c]))


def sinr_pdnoma(alloc: Allocation, channel: ChannelRealization, f: int, m: int,
                n: int) -> float:
    """PD-NOMA SINR of user ``m`` on subcarrier ``n`` after SIC.

    Residual interference comes from same-cell users with a larger gain on
    ``n`` (ties go to the higher index) plus every other cell's power on ``n``.
    """
    _check_cell(alloc, f, m)
    g = channel.gain
    P = alloc.q * alloc.p
    own = g[f, m, n]
    intra = 0.0
    inter = 0.0
    for j in range(alloc.num_users):
        fj = alloc.user_cell[j]
        if fj == f:
            if j != m and (g[f, j, n] > own or (g[f, j, n] == own and j > m)):
                intra += own * P[j, n]
        else:
            inter += g[fj, m, n] * P[j, n]
    return float(own * P[m, n] / (intra + inter + channel.noise[m, n]))


def sum_rate(alloc: Allocation, channel: ChannelRealization,
             structure: CodebookStructure | None = None) -> SinrReport:
    link = _link(alloc, channel, structure)
    P = alloc.q * alloc.p
    gamma = link.gamma(P)
    rate = np.log1p(gamma)
    return SinrReport(gamma, rate, link.cross_gamma(P), float(rate.sum()))


def sic_feasible(alloc: Allocation, channel: ChannelRealization,
                 structure: CodebookStructure | None = None) -> list[SicPair]:
    """Check ``gamma_m(j) >= q_j * gamma_m(m)`` for every same-cell pair where
    ``j`` is better than the assigned user ``m`` on a codebook."""
    link = _link(alloc, channel, structure)
    slack, own = link.sic_slack(alloc.q, alloc.q * alloc.p)
    out = []
    for m, j, c in zip(*np.nonzero(~np.isnan(slack))):
        s = float(slack[m, j, c])
        ok = s >= -SIC_RTOL * max(float(own[m, c]), 1e-300)
        out.append(SicPair(int(alloc.user_cell[m]), int(c), int(j), int(m), bool(ok), s))
    return out


def detection_order(alloc: Allocation, structure: CodebookStructure,
                    channel: ChannelRealization, f: int, c: int) -> list[int]:
    """Users of cell ``f`` on codebook ``c``, worst average gain first."""
    users = np.flatnonzero((alloc.user_cell == f) & (alloc.q[:, c] != 0))
    hhat = [avg_codebook_gain(channel, structure, f, int(m), c) for m in users]
    return [int(m) for _, m in sorted(zip(hhat, users))]


def receiver_complexity(params: ComplexityParams, scheme) -> int:
    """Receiver operation count from the complexity-order expressions.

    SCMA runs one MPA (``I_T * |pi|**d``); PSMA repeats it ``L_T`` times for
    each of ``G`` codebooks; PD-NOMA uses ``(2L'^3 + 2L'^2 G')(L'-1)``.
    """
    scheme = Scheme.parse(scheme)
    scma = params.I_T * params.pi_size ** params.d
    if scheme is Scheme.SCMA:
        return scma
    if scheme is Scheme.PSMA:
        return scma * params.G * params.L_T
    L, G = params.L_T_prime, params.G_prime
    return (2 * L ** 3 + 2 * L ** 2 * G) * (L - 1)
