"""Shared builders for small random instances."""
import numpy as np
import pytest

from psma.phy import LinkModel
from psma.scenario import (ChannelRealization, CodebookStructure, ScenarioConfig,
                           build_codebook_structure, build_topology, sample_channels,
                           structure_for)


def random_channel(rng, F, M, N, user_cell=None, noise=1e-2, spread=2.0):
    """Log-uniform gains over ``10**[-spread, spread]`` (easy to reason about)."""
    gain = 10.0 ** rng.uniform(-spread, spread, size=(F, M, N))
    if user_cell is None:
        user_cell = np.sort(np.arange(M) % F)
    return ChannelRealization(gain, np.full((M, N), noise), np.asarray(user_cell))


def random_structure(rng, N, U, C, uniform=True):
    cfg = ScenarioConfig(num_bs=1, num_users=1, num_subcarriers=N, num_codebooks=C,
                         codebook_size=U, p_max=(1.0,))
    s = build_codebook_structure(cfg)
    if uniform:
        return s
    eta = s.rho * rng.uniform(0.05, 1.0, size=s.rho.shape)
    return CodebookStructure(s.rho, eta / eta.sum(axis=0))


def random_assignment(rng, M, C, density=0.6):
    q = (rng.random((M, C)) < density).astype(np.int8)
    return q


def scenario_case(seed, **overrides):
    """Config, channel and link model from the regular generators."""
    params = dict(num_bs=1, num_users=3, num_subcarriers=4, num_codebooks=4,
                  codebook_size=2, p_max=(2.0,), seed=seed)
    params.update(overrides)
    cfg = ScenarioConfig(**params)
    topo = build_topology(cfg)
    ch = sample_channels(topo, cfg)
    return cfg, ch, LinkModel(ch, structure_for(cfg), ch.user_cell)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
