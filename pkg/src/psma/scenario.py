"""Scenario description, topology, channel draws and codebook structures.

Every random quantity in the package is generated here, as a pure function of
``(config, seed)``.
"""
from __future__ import annotations

import dataclasses
import enum
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "Scheme",
    "EtaPolicy",
    "ScenarioError",
    "InfeasibleError",
    "ScenarioConfig",
    "Topology",
    "ChannelRealization",
    "CodebookStructure",
    "build_topology",
    "sample_channels",
    "build_codebook_structure",
    "subcarrier_structure",
    "structure_for",
    "load_scenario",
    "dump_scenario",
]

# users are never generated closer than this to their own BS (meters)
MIN_DISTANCE = 1.0


class Scheme(str, enum.Enum):
    PSMA = "psma"
    SCMA = "scma"
    PDNOMA = "pdnoma"

    @classmethod
    def parse(cls, value) -> "Scheme":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower().replace("-", "").replace("_", ""))
        except ValueError:
            raise ScenarioError("scheme", f"unknown scheme {value!r}") from None


class EtaPolicy(str, enum.Enum):
    UNIFORM_ETA = "uniform_eta"
    CUSTOM = "custom"


class ScenarioError(ValueError):
    """Invalid scenario field. ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class InfeasibleError(ValueError):
    """Requested structure cannot exist (e.g. more codebooks than subsets)."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Network-level parameters of one HetNet scenario.

    BS 0 is the macro cell; BSs ``1..num_bs-1`` are small cells. ``p_max`` holds
    one budget (W) per BS.
    """

    num_bs: int
    num_users: int
    num_subcarriers: int
    num_codebooks: int
    codebook_size: int
    p_max: tuple
    macro_radius: float = 1000.0
    small_radius: float = 20.0
    path_loss_exponent: float = -2.0
    noise_power: float = 1e-8
    max_users_per_codebook: int = 3
    max_subcarrier_reuse: int = 6
    scheme: Scheme = Scheme.PSMA
    seed: int = 0
    eps: float = 1e-4
    upsilon: float = 1e-3
    nu1: float = 0.1
    nu2: float = 0.1
    max_dual_iter: int = 500
    max_scale_iter: int = 30
    max_outer_iter: int = 20

    def __post_init__(self):
        object.__setattr__(self, "p_max", tuple(float(p) for p in np.atleast_1d(self.p_max)))
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        self.validate()

    def validate(self) -> None:
        for name in ("num_bs", "num_users", "num_subcarriers", "num_codebooks",
                     "codebook_size", "max_users_per_codebook",
                     "max_subcarrier_reuse", "max_dual_iter", "max_scale_iter",
                     "max_outer_iter"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)):
                raise ScenarioError(name, f"expected an integer, got {type(v).__name__}")
            if v < 1:
                raise ScenarioError(name, f"must be >= 1, got {v}")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ScenarioError("seed", "expected an integer")
        if self.codebook_size > self.num_subcarriers:
            raise ScenarioError(
                "codebook_size",
                f"U={self.codebook_size} exceeds N={self.num_subcarriers}")
        if self.num_codebooks > math.comb(self.num_subcarriers, self.codebook_size):
            raise ScenarioError(
                "num_codebooks",
                f"C={self.num_codebooks} exceeds C(N,U)="
                f"{math.comb(self.num_subcarriers, self.codebook_size)}")
        if len(self.p_max) != self.num_bs:
            raise ScenarioError("p_max", f"expected {self.num_bs} budgets, got {len(self.p_max)}")
        if any(not math.isfinite(p) or p < 0 for p in self.p_max):
            raise ScenarioError("p_max", "budgets must be finite and >= 0")
        for name in ("macro_radius", "small_radius", "noise_power", "eps",
                     "upsilon", "nu1", "nu2"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float, np.floating)):
                raise ScenarioError(name, f"expected a number, got {type(v).__name__}")
            if not (math.isfinite(v) and v > 0):
                raise ScenarioError(name, f"must be finite and > 0, got {v}")
        for name in ("macro_radius", "small_radius"):
            if getattr(self, name) <= MIN_DISTANCE:
                raise ScenarioError(name, f"must exceed {MIN_DISTANCE} m")
        if not isinstance(self.path_loss_exponent, (int, float)) or not math.isfinite(
                self.path_loss_exponent):
            raise ScenarioError("path_loss_exponent", "expected a finite number")

    # spec-level short names
    @property
    def L_T(self) -> int:
        return self.max_users_per_codebook

    @property
    def K(self) -> int:
        return self.max_subcarrier_reuse

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["p_max"] = list(self.p_max)
        d["scheme"] = self.scheme.value
        return d


_MANDATORY = ("num_bs", "num_users", "num_subcarriers", "num_codebooks",
              "codebook_size", "p_max")
_FIELDS = {f.name: f for f in dataclasses.fields(ScenarioConfig)}


def load_scenario(path) -> ScenarioConfig:
    """Read a scenario JSON file. Keys must be ScenarioConfig field names."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError("<file>", f"not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ScenarioError("<file>", "top level must be a JSON object")
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ScenarioError(unknown[0], "unknown key")
    for name in _MANDATORY:
        if name not in raw:
            raise ScenarioError(name, "missing mandatory field")
    p_max = raw["p_max"]
    if isinstance(p_max, (int, float)) and not isinstance(p_max, bool):
        p_max = [p_max]
    if not isinstance(p_max, list) or not all(
            isinstance(p, (int, float)) and not isinstance(p, bool) for p in p_max):
        raise ScenarioError("p_max", "expected a list of numbers")
    raw["p_max"] = tuple(p_max)
    # JSON has no int/float distinction for whole numbers; coerce float fields
    for name, f in _FIELDS.items():
        if name in raw and f.type == "float" and isinstance(raw[name], int) \
                and not isinstance(raw[name], bool):
            raw[name] = float(raw[name])
    return ScenarioConfig(**raw)


def dump_scenario(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Topology:
    bs_positions: np.ndarray      # (F, 2) meters
    user_positions: np.ndarray    # (M, 2) meters
    user_cell: np.ndarray         # (M,) serving BS index
    distances: np.ndarray         # (F, M) meters

    @property
    def num_bs(self) -> int:
        return self.bs_positions.shape[0]

    @property
    def num_users(self) -> int:
        return self.user_positions.shape[0]

    def cell_users(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.user_cell == f)


@dataclass(frozen=True)
class ChannelRealization:
    gain: np.ndarray    # (F, M, N) power gains |h^f_{m,n}|^2
    noise: np.ndarray   # (M, N) noise powers, W
    user_cell: np.ndarray | None = None   # (M,) serving BS, when known

    def digest(self) -> str:
        import hashlib
        return hashlib.sha256(np.ascontiguousarray(self.gain).tobytes()).hexdigest()


@dataclass(frozen=True)
class CodebookStructure:
    """Subcarrier-to-codebook map ``rho`` (N, C) and power fractions ``eta`` (N, C)."""

    rho: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=float)
        eta = np.asarray(self.eta, dtype=float)
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "eta", eta)
        if rho.shape != eta.shape or rho.ndim != 2:
            raise ValueError("rho and eta must be (N, C) arrays of equal shape")
        if not np.all((rho == 0) | (rho == 1)):
            raise ValueError("rho must be binary")
        sizes = rho.sum(axis=0)
        if np.any(sizes != sizes[0]) or sizes[0] < 1:
            raise ValueError("every codebook must use the same number U >= 1 of subcarriers")
        if np.any(eta < 0) or np.any(eta > 1) or np.any((eta > 0) & (rho == 0)):
            raise ValueError("eta must lie in [0, 1] and vanish off the codebook support")
        if not np.allclose(eta.sum(axis=0), 1.0, atol=1e-12):
            raise ValueError("eta must sum to 1 over each codebook's subcarriers")

    @property
    def num_subcarriers(self) -> int:
        return self.rho.shape[0]

    @property
    def num_codebooks(self) -> int:
        return self.rho.shape[1]

    @property
    def codebook_size(self) -> int:
        return int(self.rho[:, 0].sum())

    @property
    def codebook_subcarriers(self) -> list:
        return [np.flatnonzero(self.rho[:, c]) for c in range(self.num_codebooks)]

    @property
    def uniform(self) -> bool:
        return bool(np.allclose(self.eta, self.rho / self.codebook_size))


def _users_per_cell(num_users: int, num_bs: int) -> list:
    base, extra = divmod(num_users, num_bs)
    return [base + (1 if f < extra else 0) for f in range(num_bs)]


def _uniform_in_annulus(rng, n, r_in, r_out):
    r = np.sqrt(rng.uniform(r_in ** 2, r_out ** 2, size=n))
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)])


def build_topology(config: ScenarioConfig, seed: int | None = None) -> Topology:
    """Place BSs and users. Users are split evenly across cells (macro first)."""
    config.validate()
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng([int(seed), 0])
    F = config.num_bs
    bs = np.zeros((F, 2))
    if F > 1:
        bs[1:] = _uniform_in_annulus(rng, F - 1, 0.0, config.macro_radius)
    counts = _users_per_cell(config.num_users, F)
    users, cells = [], []
    for f, n in enumerate(counts):
        radius = config.macro_radius if f == 0 else config.small_radius
        users.append(bs[f] + _uniform_in_annulus(rng, n, MIN_DISTANCE, radius))
        cells.extend([f] * n)
    users = np.concatenate(users, axis=0)
    dist = np.linalg.norm(bs[:, None, :] - users[None, :, :], axis=-1)
    return Topology(bs, users, np.asarray(cells, dtype=int), dist)


def sample_channels(topology: Topology, config: ScenarioConfig,
                    seed: int | None = None) -> ChannelRealization:
    """Rayleigh power gains times distance path loss, ``e * d**(2*mu)``."""
    seed = config.seed if seed is None else seed
    d = np.asarray(topology.distances, dtype=float)
    if d.shape != (config.num_bs, config.num_users):
        raise ValueError(f"topology has distances of shape {d.shape}, config expects "
                         f"{(config.num_bs, config.num_users)}")
    if np.any(d <= 0):
        raise ValueError("zero BS-user distance: path loss is singular")
    rng = np.random.default_rng([int(seed), 1])
    shape = (config.num_bs, config.num_users, config.num_subcarriers)
    fading = rng.exponential(1.0, size=shape)
    while np.any(fading == 0):
        zeros = fading == 0
        fading[zeros] = rng.exponential(1.0, size=int(zeros.sum()))
    gain = fading * d[:, :, None] ** (2.0 * config.path_loss_exponent)
    noise = np.full((config.num_users, config.num_subcarriers), config.noise_power)
    return ChannelRealization(gain, noise, np.asarray(topology.user_cell, dtype=int))


def _balanced_subsets(n: int, u: int, c: int, node_limit: int = 20_000) -> list:
    """Lexicographically first ``c`` distinct ``u``-subsets of ``range(n)``
    whose per-element load is as even as possible."""
    combos = list(itertools.combinations(range(n), u))
    if c >= len(combos):
        return combos[:c]
    lo, hi = (c * u) // n, -(-(c * u) // n)
    load = [0] * n
    chosen: list = []
    nodes = 0

    def dfs(start: int) -> bool:
        nonlocal nodes
        nodes += 1
        if nodes > node_limit:
            return False
        need = c - len(chosen)
        if need == 0:
            return all(x >= lo for x in load)
        if len(combos) - start < need:
            return False
        if sum(max(lo - x, 0) for x in load) > need * u:
            return False
        for i in range(start, len(combos)):
            s = combos[i]
            if any(load[x] >= hi for x in s):
                continue
            chosen.append(s)
            for x in s:
                load[x] += 1
            if dfs(i + 1):
                return True
            chosen.pop()
            for x in s:
                load[x] -= 1
        return False

    if dfs(0):
        return list(chosen)
    return _greedy_subsets(combos, n, c)


def _greedy_subsets(combos: list, n: int, c: int) -> list:
    """Least-loaded greedy pick, then element swaps until loads differ by <= 1."""
    load = np.zeros(n, dtype=int)
    used = np.zeros(len(combos), dtype=bool)
    members = np.array(combos)
    for _ in range(c):
        key = load[members].max(axis=1) * (n * len(combos)) + load[members].sum(axis=1)
        key = np.where(used, np.iinfo(np.int64).max, key)
        i = int(np.argmin(key))
        used[i] = True
        load[members[i]] += 1
    chosen = {combos[i] for i in np.flatnonzero(used)}
    for _ in range(10 * c * n):
        if load.max() - load.min() <= 1:
            break
        if not _swap_once(chosen, load):
            break
    return sorted(chosen)


def _swap_once(chosen: set, load: np.ndarray) -> bool:
    lo, hi = load.min(), load.max()
    for s in sorted(chosen):
        for x in s:
            if load[x] != hi:
                continue
            for y in np.flatnonzero(load == lo):
                if y in s:
                    continue
                t = tuple(sorted(set(s) - {x} | {int(y)}))
                if t not in chosen:
                    chosen.remove(s)
                    chosen.add(t)
                    load[x] -= 1
                    load[y] += 1
                    return True
    return False


def build_codebook_structure(config: ScenarioConfig,
                             policy: EtaPolicy | str = EtaPolicy.UNIFORM_ETA,
                             eta: np.ndarray | None = None) -> CodebookStructure:
    """Choose ``C`` of the ``C(N, U)`` subcarrier subsets and their power fractions.

    With ``CUSTOM`` the caller supplies ``eta`` (N, C); its support must match
    the selected subsets.
    """
    N, U, C = config.num_subcarriers, config.codebook_size, config.num_codebooks
    if C > math.comb(N, U):
        raise InfeasibleError(f"C={C} codebooks requested but only C({N},{U})="
                              f"{math.comb(N, U)} subsets exist")
    policy = EtaPolicy(policy)
    rho = np.zeros((N, C))
    for c, subset in enumerate(_balanced_subsets(N, U, C)):
        rho[list(subset), c] = 1.0
    if policy is EtaPolicy.UNIFORM_ETA:
        return CodebookStructure(rho, rho / U)
    if eta is None:
        raise ValueError("CUSTOM policy needs an eta array")
    return CodebookStructure(rho, np.asarray(eta, dtype=float))


def subcarrier_structure(num_subcarriers: int) -> CodebookStructure:
    """Degenerate structure with one single-subcarrier codebook per subcarrier.

    On it the codebook SINR is the per-subcarrier PD-NOMA SINR.
    """
    eye = np.eye(num_subcarriers)
    return CodebookStructure(eye, eye.copy())


def structure_for(config: ScenarioConfig) -> CodebookStructure:
    if config.scheme is Scheme.PDNOMA:
        return subcarrier_structure(config.num_subcarriers)
    return build_codebook_structure(config)
