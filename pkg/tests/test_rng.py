import numpy as np
import pytest
from hypothesis import given, strategies as st

from trajfisher import rng


@pytest.mark.parametrize(
    "ctr,key,expected",
    [
        ((0, 0, 0, 0), (0, 0), (0x6627E8D5, 0xE169C58D, 0xBC57AC4C, 0x9B00DBD8)),
        ((0xFFFFFFFF,) * 4, (0xFFFFFFFF,) * 2, (0x408F276D, 0x41C83B0E, 0xA20BC7C6, 0x6D5451FD)),
        (
            (0x243F6A88, 0x85A308D3, 0x13198A2E, 0x03707344),
            (0xA4093822, 0x299F31D0),
            (0xD16CFE09, 0x94FDCCEB, 0x5001E420, 0x24126EA1),
        ),
    ],
)
def test_philox_known_answers(ctr, key, expected):
    out = rng.philox4x32(ctr, key)
    assert tuple(int(x) for x in out) == expected


def test_uniforms_open_interval_and_mean():
    u = rng.uniforms(3, np.arange(200000), 0)
    assert np.all((u > 0) & (u < 1))
    assert abs(u.mean() - 0.5) < 5 * np.sqrt(1 / 12 / u.size)


@given(st.integers(0, 2**64 - 1), st.integers(0, 2**40), st.integers(0, 1000))
def test_uniform_is_pure_function_of_counter(seed, index, draw):
    a = rng.uniforms(seed, [index, index + 1], draw)
    b = rng.uniforms(seed, index, draw)
    assert a[0] == b


def test_purposes_and_seeds_are_distinct_streams():
    idx = np.arange(1000)
    a = rng.uniforms(1, idx, 0, rng.JUMP)
    b = rng.uniforms(1, idx, 0, rng.MEASURE)
    c = rng.uniforms(2, idx, 0, rng.JUMP)
    assert not np.any(a == b) and not np.any(a == c)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.15


def test_seed_range():
    with pytest.raises(ValueError):
        rng.seed_key(-1)
    with pytest.raises(ValueError):
        rng.seed_key(2**64)
