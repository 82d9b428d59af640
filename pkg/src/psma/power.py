"""Power allocation for a fixed codebook assignment.

The sum rate is replaced by its SCALE lower bound ``xi*ln(gamma) + psi``,
powers are moved to the log domain (``p = exp(pt)``), the SIC ordering
constraints are convexified by linearising their concave part, and the
resulting convex problem is solved through its Lagrangian: closed-form power
updates for fixed multipliers alternate with projected subgradient steps on
the multipliers.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .phy import LinkModel
from .scenario import ScenarioConfig

__all__ = [
    "ScaleCoeffs",
    "DualState",
    "SicConstraints",
    "PowerProblem",
    "PowerIterTrace",
    "scale_coeffs",
    "linearize_sic_constraint",
    "power_closed_form",
    "subgradient_step",
    "lagrangian",
    "solve_power_inner",
    "solve_power_scale",
    "brute_force_power_oracle",
    "equal_split",
    "project_budget",
]

BUDGET_RTOL = 1e-6
# halvings tried before an outer step is declared non-improving
LINE_SEARCH_STEPS = 30
# SINRs are floored here before taking logs
_TINY = 1e-300


@dataclass
class ScaleCoeffs:
    """SCALE slope ``xi`` and intercept ``psi`` (nats), one per active entry."""

    xi: np.ndarray
    psi: np.ndarray

    @classmethod
    def initial(cls, n: int) -> "ScaleCoeffs":
        return cls(np.ones(n), np.zeros(n))

    def bound(self, x):
        return self.xi * np.log(x) + self.psi


def scale_coeffs(anchor_sinr) -> ScaleCoeffs:
    """Coefficients of the tangent lower bound of ``ln(1+x)`` in ``ln x`` at ``x = gamma0``."""
    g0 = np.asarray(anchor_sinr, dtype=float)
    if np.any(~(g0 > 0)) or not np.all(np.isfinite(g0)):
        raise ValueError("SCALE anchor SINRs must be finite and > 0")
    xi = g0 / (1.0 + g0)
    psi = np.log1p(g0) - xi * np.log(g0)
    return ScaleCoeffs(xi, psi)


class PowerProblem:
    """Active power variables of one fixed assignment and their couplings.

    Entry ``k`` is an assigned ``(user, codebook)`` pair whose cell has a
    positive budget. ``W[k, l]`` is the gain through which entry ``k``'s power
    reaches entry ``l``'s receiver as interference (zero if it does not).
    """

    def __init__(self, link: LinkModel, q: np.ndarray, p_max):
        self.link = link
        self.q = (np.asarray(q) != 0).astype(np.int8)
        self.p_max = np.asarray(p_max, dtype=float)
        cell_of = link.user_cell
        live = self.q.astype(bool) & (self.p_max[cell_of] > 0)[:, None]
        self.users, self.codebooks = np.nonzero(live)
        self.cells = cell_of[self.users]
        self.size = self.users.size
        u, c, f = self.users, self.codebooks, self.cells
        self.signal = link.own_eff[u, c]
        self.noise = link.noise[u, c]
        same_cb = c[:, None] == c[None, :]
        same_cell = f[:, None] == f[None, :]
        # k better than l's user on the shared codebook
        better = link.better[u[None, :], u[:, None], c[None, :]]
        self.same_cell = same_cell
        self.W = np.where(same_cb & ((same_cell & better) | ~same_cell),
                          link.eff[f[:, None], u[None, :], c[None, :]], 0.0)
        np.fill_diagonal(self.W, 0.0)
        self.cell_index = [np.flatnonzero(f == k) for k in range(link.num_bs)]

    def to_vector(self, P: np.ndarray) -> np.ndarray:
        return np.asarray(P, dtype=float)[self.users, self.codebooks]

    def to_matrix(self, p: np.ndarray) -> np.ndarray:
        out = np.zeros(self.q.shape)
        out[self.users, self.codebooks] = p
        return out

    def interference(self, p: np.ndarray) -> np.ndarray:
        return p @ self.W + self.noise

    def gamma(self, p: np.ndarray) -> np.ndarray:
        return self.signal * p / self.interference(p)

    def cell_sums(self, p: np.ndarray) -> np.ndarray:
        return np.bincount(self.cells, weights=p, minlength=self.link.num_bs)

    def surrogate(self, p: np.ndarray, scale: ScaleCoeffs) -> float:
        return float(np.sum(scale.bound(np.maximum(self.gamma(p), _TINY))))

    def true_rate(self, p: np.ndarray) -> float:
        return float(np.sum(np.log1p(self.gamma(p))))


@dataclass
class SicConstraints:
    """Convexified SIC ordering constraints, one row per ordered pair.

    Pair ``s`` says that the better user ``j`` can decode the worse user ``m``:
    ``gamma_m(j) >= gamma_m(m)``. Cross-multiplied it is linear in the powers,
    ``r(p) = (a @ p + b) / norm <= 0``. Writing ``a = a_pos - a_neg`` and
    ``p = exp(pt)``, the concave part ``-a_neg @ exp(pt)`` is replaced by its
    tangent at the anchor, giving a convex upper bound of ``r`` that is exact
    (value and gradient) at the anchor.
    """

    pairs: np.ndarray         # (S, 2) entry indices (better j, worse m)
    a_pos: np.ndarray         # (S, E)
    a_neg: np.ndarray         # (S, E)
    b: np.ndarray             # (S,)
    norm: np.ndarray          # (S,)
    anchor: np.ndarray        # (E,) powers

    @property
    def size(self) -> int:
        return self.b.size

    def exact(self, p: np.ndarray) -> np.ndarray:
        return ((self.a_pos - self.a_neg) @ p + self.b) / self.norm

    def value(self, pt: np.ndarray) -> np.ndarray:
        p0 = self.anchor
        lin = p0 * (1.0 + pt - np.log(p0))
        return (self.a_pos @ np.exp(pt) - self.a_neg @ lin + self.b) / self.norm

    def grad(self, pt: np.ndarray) -> np.ndarray:
        """Jacobian with respect to the log powers, (S, E)."""
        return (self.a_pos * np.exp(pt) - self.a_neg * self.anchor) / self.norm[:, None]


def linearize_sic_constraint(problem: PowerProblem, P_anchor) -> SicConstraints:
    """Build the convexified SIC constraints around ``P_anchor``.

    ``P_anchor`` is either an ``(M, C)`` matrix or an entry vector; anchor
    powers of active entries must be positive.
    """
    P_anchor = np.asarray(P_anchor, dtype=float)
    p0 = problem.to_vector(P_anchor) if P_anchor.ndim == 2 else P_anchor
    if np.any(~(p0 > 0)):
        raise ValueError("DC anchor needs strictly positive powers on active entries")
    link = problem.link
    E = problem.size
    u, c, f = problem.users, problem.codebooks, problem.cells
    pairs = []
    for k in range(E):
        for l in range(E):
            # k is the better user j, l the worse user m
            if k != l and c[k] == c[l] and f[k] == f[l] and link.better[u[l], u[k], c[k]]:
                pairs.append((k, l))
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    S = len(pairs)
    a = np.zeros((S, E))
    b = np.zeros(S)
    norm = np.ones(S)
    for s, (j, m) in enumerate(pairs):
        cb, cell = c[m], f[m]
        # receivers j and m see the same interferer set: users on cb better than m
        # in their own cell, and every entry of another cell on cb
        sources = (c == cb) & ((f != cell) | link.better[u[m], u, cb])
        g_m, g_j = problem.signal[m], problem.signal[j]
        w_j = np.where(sources, link.eff[f, u[j], cb], 0.0)
        w_m = np.where(sources, link.eff[f, u[m], cb], 0.0)
        a[s] = g_m * w_j - g_j * w_m
        b[s] = g_m * problem.noise[j] - g_j * problem.noise[m]
        norm[s] = g_j * (w_m @ p0 + problem.noise[m])
    return SicConstraints(pairs, np.maximum(a, 0.0), np.maximum(-a, 0.0), b, norm, p0)


@dataclass
class DualState:
    """Budget multipliers ``delta`` (per BS) and SIC multipliers ``beta`` (per pair)."""

    delta: np.ndarray
    beta: np.ndarray
    nu1: np.ndarray | float = 0.1
    nu2: float = 0.1
    u: int = 0

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        if np.any(self.delta < 0) or np.any(self.beta < 0):
            raise ValueError("Lagrange multipliers must be non-negative")


def _couplings(problem: PowerProblem, scale: ScaleCoeffs, dual: DualState,
               sic: SicConstraints | None, p: np.ndarray):
    """Terms of the stationarity condition ``xi + G = p (delta + A + B + C)``."""
    D = problem.interference(p)
    weighted = problem.W * (scale.xi / D)[None, :]
    A = np.sum(np.where(problem.same_cell, weighted, 0.0), axis=1)
    B = np.sum(np.where(problem.same_cell, 0.0, weighted), axis=1)
    if sic is None or sic.size == 0:
        C = G = np.zeros(problem.size)
    else:
        wb = dual.beta / sic.norm
        C = wb @ sic.a_pos
        G = (wb @ sic.a_neg) * sic.anchor
    return A, B, C, G


def power_closed_form(scale: ScaleCoeffs, dual: DualState, problem: PowerProblem,
                      sic: SicConstraints | None = None,
                      p_current: np.ndarray | None = None) -> np.ndarray:
    """One closed-form update ``p = [(xi + G) / (delta + A + B + C)]^+``.

    ``A`` (same-cell) and ``B`` (other-cell) are the SCALE interference
    couplings evaluated at ``p_current`` (default: the SIC anchor); ``C`` and
    ``G`` come from the SIC multipliers.
    """
    if p_current is None:
        if sic is None:
            raise ValueError("need p_current or an anchored constraint set")
        p_current = sic.anchor
    A, B, C, G = _couplings(problem, scale, dual, sic, p_current)
    den = dual.delta[problem.cells] + A + B + C
    num = scale.xi + G
    if np.any((den <= 0) & (num > 0)):
        raise ZeroDivisionError("closed-form update is unbounded: zero denominator "
                                "(check budget multipliers and step sizes)")
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(den > 0, num / den, 0.0)
    return np.maximum(p, 0.0)


def lagrangian(pt: np.ndarray, problem: PowerProblem, scale: ScaleCoeffs,
               dual: DualState, sic: SicConstraints | None = None) -> float:
    """Lagrangian of the convexified problem in log powers."""
    p = np.exp(pt)
    val = problem.surrogate(p, scale)
    slack = problem.p_max - problem.cell_sums(p)
    val += float(np.sum(dual.delta * slack))
    if sic is not None and sic.size:
        val -= float(dual.beta @ sic.value(pt))
    return val


def subgradient_step(dual: DualState, problem: PowerProblem, p: np.ndarray,
                     sic: SicConstraints | None = None) -> DualState:
    """Projected subgradient step on ``delta`` (budget) and ``beta`` (SIC)."""
    slack = problem.p_max - problem.cell_sums(p)
    delta = np.maximum(dual.delta - np.asarray(dual.nu1) * slack, 0.0)
    beta = dual.beta
    if sic is not None and sic.size:
        with np.errstate(divide="ignore"):
            r = sic.value(np.log(np.maximum(p, _TINY)))
        beta = np.maximum(dual.beta + dual.nu2 * r, 0.0)
    return DualState(delta, beta, dual.nu1, dual.nu2, dual.u + 1)


@dataclass
class PowerIterTrace:
    surrogate: list = field(default_factory=list)
    sum_rate: list = field(default_factory=list)
    best_rate: list = field(default_factory=list)
    budget_residual: list = field(default_factory=list)
    sic_residual: list = field(default_factory=list)
    step_norm: list = field(default_factory=list)
    inner_iters: list = field(default_factory=list)
    converged: bool = False
    dual: DualState | None = None

    def __len__(self):
        return len(self.sum_rate)

    def record(self, **values):
        for k, v in values.items():
            getattr(self, k).append(v)


def equal_split(q: np.ndarray, user_cell, p_max) -> np.ndarray:
    """Each cell's budget shared equally across its assigned entries."""
    q = np.asarray(q) != 0
    user_cell = np.asarray(user_cell)
    p_max = np.asarray(p_max, dtype=float)
    counts = np.bincount(user_cell, weights=q.sum(axis=1), minlength=p_max.size)
    share = np.divide(p_max, counts, out=np.zeros_like(p_max), where=counts > 0)
    return q * share[user_cell][:, None]


def project_budget(P: np.ndarray, user_cell, p_max, rtol: float = BUDGET_RTOL) -> np.ndarray:
    """Scale down any cell whose total power exceeds its budget."""
    P = np.array(P, dtype=float)
    user_cell = np.asarray(user_cell)
    p_max = np.asarray(p_max, dtype=float)
    totals = np.bincount(user_cell, weights=P.sum(axis=1), minlength=p_max.size)
    for f in np.flatnonzero(totals > p_max * (1.0 + rtol)):
        P[user_cell == f] *= p_max[f] / totals[f]
    return P


def _norm_change(p_new, p_old, scale):
    return float(np.max(np.abs(p_new - p_old)) / scale) if p_new.size else 0.0


def solve_power_inner(problem: PowerProblem, P0, scale: ScaleCoeffs, config: ScenarioConfig,
                      dual: DualState | None = None,
                      sic: SicConstraints | None = None):
    """Dual loop for fixed SCALE coefficients.

    Alternates the closed-form power update with one subgradient step on the
    multipliers until the powers settle and the budgets are met, or
    ``config.max_dual_iter`` is reached. The multiplier steps are normalised
    per cell and shrink like ``1/sqrt(u)``. Returns ``(p, dual, info)`` with
    ``p`` the entry vector after the final budget projection.
    """
    p0 = np.asarray(P0, dtype=float)
    p0 = problem.to_vector(p0) if p0.ndim == 2 else p0
    E = problem.size
    if E == 0:
        return p0, dual, {"iters": 0, "converged": True}
    if sic is None:
        sic = linearize_sic_constraint(problem, p0)
    pmax = problem.p_max
    live = pmax > 0
    xi_cell = np.bincount(problem.cells, weights=scale.xi, minlength=pmax.size)
    delta_ref = np.divide(np.maximum(xi_cell, 1e-12), pmax, out=np.zeros_like(pmax),
                          where=live)
    # delta restarts at the value that spends each budget exactly when entries
    # do not interfere; beta is warm-started across SCALE iterations
    beta = np.zeros(sic.size)
    if dual is not None and dual.beta.shape == (sic.size,):
        beta = dual.beta.copy()
    dual = DualState(delta_ref.copy(), beta)
    p_scale = float(pmax.max())
    p = p0.copy()
    converged = False
    u = 0
    for u in range(1, config.max_dual_iter + 1):
        # diminishing, per-cell normalised steps
        dual.nu1 = np.divide(config.nu1 * delta_ref, pmax * np.sqrt(u),
                             out=np.zeros_like(pmax), where=live)
        dual.nu2 = config.nu2 / np.sqrt(u)
        p_new = power_closed_form(scale, dual, problem, sic, p_current=p)
        p_new = np.maximum(p_new, _TINY)
        dual = subgradient_step(dual, problem, p_new, sic)
        step = _norm_change(p_new, p, p_scale)
        p = p_new
        budget = np.max((problem.cell_sums(p) - pmax)[live] / pmax[live])
        if step <= config.eps and abs(budget) <= config.eps:
            converged = True
            break
    p = problem.to_vector(project_budget(problem.to_matrix(p), problem.link.user_cell, pmax))
    return p, dual, {"iters": u, "converged": converged}


def _sic_violations(problem: PowerProblem, p: np.ndarray) -> int:
    P = problem.to_matrix(p)
    return int(problem.link.sic_violations(problem.q, P))


def _key(problem: PowerProblem, p: np.ndarray):
    return (-_sic_violations(problem, p), problem.true_rate(p))


def solve_power_scale(problem: PowerProblem, P0, config: ScenarioConfig):
    """SCALE outer loop around :func:`solve_power_inner`.

    Starts from ``xi = 1, psi = 0`` and re-anchors the bound at the SINRs of
    each accepted iterate. Because the inner dual solve is inexact, a new
    iterate is accepted only if it has no more SIC violations and no lower
    true sum rate than the current one; otherwise the step towards it is
    halved along the straight segment in log powers. On that segment the
    bound is concave and no budget can be exceeded (a weighted geometric mean
    never exceeds the arithmetic one), so whenever the inner solve improved
    the bound every point of the segment improves the true rate. The loop
    stops once an accepted step moves the powers by at most ``config.eps``
    relative to the largest budget.

    Returns ``(P, trace)`` with ``P`` an ``(M, C)`` matrix; ``trace.sum_rate[0]``
    is the rate of the (positive-filled) starting point.
    """
    P0 = np.asarray(P0, dtype=float)
    q = problem.q
    trace = PowerIterTrace()
    P_start = project_budget(P0 * q, problem.link.user_cell, problem.p_max)
    # entries of switched-off cells carry no power
    P_start[problem.p_max[problem.link.user_cell] <= 0] = 0.0
    if problem.size == 0:
        trace.converged = True
        rate = float(problem.link.sum_rate(P_start))
        trace.record(surrogate=rate, sum_rate=rate, best_rate=rate, budget_residual=0.0,
                     sic_residual=0, step_norm=0.0, inner_iters=0)
        return P_start, trace
    p_acc = problem.to_vector(P_start)
    if np.any(p_acc <= 0):
        # log-domain transform needs positive powers
        fill = problem.to_vector(equal_split(q * (problem.p_max[problem.link.user_cell] > 0)[:, None],
                                             problem.link.user_cell, problem.p_max))
        p_acc = np.where(p_acc > 0, p_acc, fill)
        p_acc = problem.to_vector(project_budget(problem.to_matrix(p_acc),
                                                 problem.link.user_cell, problem.p_max))
    key_acc = _key(problem, p_acc)
    scale = ScaleCoeffs.initial(problem.size)
    trace.record(surrogate=problem.surrogate(p_acc, scale), sum_rate=key_acc[1],
                 best_rate=key_acc[1], budget_residual=float(np.max(
                     problem.cell_sums(p_acc) - problem.p_max)),
                 sic_residual=float(-key_acc[0]), step_norm=0.0, inner_iters=0)
    dual = None
    p_scale = float(problem.p_max.max())
    for z in range(config.max_scale_iter):
        sic = linearize_sic_constraint(problem, p_acc)
        p_new, dual, info = solve_power_inner(problem, p_acc, scale, config, dual, sic)
        p_new = np.maximum(p_new, _TINY)
        t = 1.0
        p_try, key = p_new, _key(problem, p_new)
        log_acc, log_new = np.log(p_acc), np.log(p_new)
        for _ in range(LINE_SEARCH_STEPS):
            if key >= key_acc:
                break
            t *= 0.5
            p_try = np.exp(log_acc + t * (log_new - log_acc))
            key = _key(problem, p_try)
        else:
            if key < key_acc:
                p_try, key = p_acc, key_acc
        step = _norm_change(p_try, p_acc, p_scale)
        p_acc, key_acc = p_try, key
        trace.record(surrogate=problem.surrogate(p_acc, scale), sum_rate=key[1],
                     best_rate=key[1],
                     budget_residual=float(np.max(problem.cell_sums(p_acc) - problem.p_max)),
                     sic_residual=float(np.max(sic.exact(p_acc), initial=0.0)),
                     step_norm=step, inner_iters=info["iters"])
        scale = scale_coeffs(np.maximum(problem.gamma(p_acc), _TINY))
        # the first solve uses the untight initial bound, so never stop on it
        if z >= 1 and step <= config.eps:
            trace.converged = True
            break
    trace.dual = dual
    return problem.to_matrix(p_acc), trace


def brute_force_power_oracle(problem: PowerProblem, grid_points: int = 200,
                             max_variables: int = 3) -> np.ndarray:
    """Exhaustive grid search of the power simplex of each cell.

    Each active power takes values ``k * p_max / (grid_points - 1)``; points
    breaking a budget or an SIC ordering constraint are discarded. Only for
    at most ``max_variables`` active entries.
    """
    E = problem.size
    if E > max_variables:
        raise ValueError(f"oracle refuses {E} power variables (limit {max_variables})")
    link = problem.link
    if E == 0:
        return problem.to_matrix(np.zeros(0))
    levels = np.linspace(0.0, 1.0, grid_points)
    per_cell = []
    for f, idx in enumerate(problem.cell_index):
        if idx.size == 0:
            continue
        mesh = np.stack(np.meshgrid(*([levels] * idx.size), indexing="ij"), -1)
        mesh = mesh.reshape(-1, idx.size)
        mesh = mesh[mesh.sum(axis=1) <= 1.0 + 1e-12] * problem.p_max[f]
        per_cell.append((idx, mesh))
    best_val, best_p = -np.inf, None
    grids = np.meshgrid(*[np.arange(m.shape[0]) for _, m in per_cell], indexing="ij")
    candidates = np.zeros((grids[0].size, E))
    for (idx, mesh), g in zip(per_cell, grids):
        candidates[:, idx] = mesh[g.ravel()]
    for start in range(0, candidates.shape[0], 20000):
        chunk = candidates[start:start + 20000]
        Pb = np.zeros((chunk.shape[0],) + problem.q.shape)
        Pb[:, problem.users, problem.codebooks] = chunk
        rates = link.sum_rate(Pb)
        viol = link.sic_violations(problem.q, Pb)
        rates = np.where(viol == 0, rates, -np.inf)
        k = int(np.argmax(rates))
        if rates[k] > best_val:
            best_val, best_p = rates[k], chunk[k]
    if best_p is None:
        best_p = np.zeros(E)
    return problem.to_matrix(best_p)
