import math

import numpy as np
import pytest
from hypothesis import settings

from cbflab import rng as rngmod
from cbflab.spectral import Grid, random_field

settings.register_profile("cbflab", max_examples=15, deadline=None)
settings.load_profile("cbflab")


@pytest.fixture(scope="session")
def grid16():
    return Grid(16)


@pytest.fixture(scope="session")
def grid8():
    return Grid(8)


def field(grid, seed, h_norm=1.0, kmax=None, tag="test-field"):
    """Seeded band-limited divergence-free field."""
    return random_field(grid, rngmod.generator(seed, tag, 0), kmax=kmax, h_norm=h_norm, slope=-1.0)


def sample_sin_mode(grid, k, amp, e):
    """amp * e * sin(2 pi k.x / L) sampled on the physical grid, computed directly."""
    x = grid.physical_coords()
    phase = 2 * math.pi / grid.L * np.einsum("i,i...->...", np.asarray(k, float), x)
    return amp * np.asarray(e, float)[:, None, None, None] * np.sin(phase)[None]
