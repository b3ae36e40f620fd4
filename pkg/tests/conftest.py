import numpy as np
import pytest

from hyperstab import CascadeMatrix, Grid, HyperbolicSystem, Profile, StateVector


@pytest.fixture
def s3_system() -> HyperbolicSystem:
    return HyperbolicSystem(
        3,
        2,
        (Profile.constant(-2), Profile.constant(-1), Profile.constant(1)),
        np.array([[1.0, 1.0]]),
    )


@pytest.fixture
def s3_cascade() -> CascadeMatrix:
    return CascadeMatrix(
        3,
        2,
        {
            (2, 1): Profile.constant(1),
            (3, 1): Profile.constant(1),
            (3, 2): Profile.constant(1),
        },
    )


def random_state(grid: Grid, n: int, m: int, seed: int) -> StateVector:
    rng = np.random.default_rng(seed)
    return StateVector(grid, m, rng.uniform(-1.0, 1.0, (n, grid.n_nodes)))


def smooth_state(grid: Grid, n: int, m: int, seed: int) -> StateVector:
    """Seeded smooth data: per-component amplitudes on a sine-squared arch."""
    rng = np.random.default_rng(seed)
    amps = rng.uniform(-1.0, 1.0, n)
    arch = np.sin(np.pi * grid.nodes) ** 2
    return StateVector(grid, m, np.outer(amps, arch))
