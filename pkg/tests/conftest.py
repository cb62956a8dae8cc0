import numpy as np
import pytest
from hypothesis import strategies as st

from trajfisher import channels


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_density(rng, dim=2, rank=None):
    rank = dim if rank is None else rank
    a = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_hermitian_traceless(rng, dim=2):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (a + a.conj().T) / 2
    return h - np.trace(h) / dim * np.eye(dim)


@st.composite
def qubit_states(draw, pure=False):
    """(rho_uu, |rho_ud|, phase) for a valid qubit state."""
    uu = draw(st.floats(0.02, 0.98))
    frac = 1.0 if pure else draw(st.floats(0.0, 1.0))
    phase = draw(st.floats(-3.1, 3.1))
    return channels.initial_state(uu, frac * np.sqrt(uu * (1 - uu)), phase)
