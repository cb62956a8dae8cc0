"""Counter-based random numbers (Philox-4x32-10) for reproducible parallel sampling.

Every uniform variate is a pure function of ``(seed, index, draw, purpose)``,
so a trajectory's randomness does not depend on how the work is split
between processes or batches.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# purpose tags keep independent draw families of one trajectory apart
JUMP = 0
MEASURE = 1
SYNDROME = 2


def philox4x32(counter, key, rounds: int = 10):
    """Philox-4x32 block function.

    ``counter`` is a sequence of four uint32 arrays (broadcastable), ``key``
    a pair of uint32 scalars. Returns four uint32 arrays.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0 = np.uint64(int(key[0]) & 0xFFFFFFFF)
    k1 = np.uint64(int(key[1]) & 0xFFFFFFFF)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return tuple(x.astype(np.uint32) for x in (c0, c1, c2, c3))


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed: int, index, draw, purpose: int = JUMP) -> np.ndarray:
    """Uniform variates on the open interval (0, 1).

    ``index`` (trajectory / record number, < 2**64) and ``draw`` (position in
    that trajectory's draw sequence) broadcast against each other.
    """
    index = np.asarray(index, dtype=np.uint64)
    draw = np.asarray(draw, dtype=np.uint64)
    index, draw = np.broadcast_arrays(index, draw)
    a, b, _, _ = philox4x32(
        (index & _MASK, index >> _SHIFT, draw, np.full(index.shape, purpose, np.uint64)),
        seed_key(seed),
    )
    k = (a.astype(np.uint64) >> np.uint64(5)) * np.uint64(67108864) + (b.astype(np.uint64) >> np.uint64(6))
    return (k.astype(np.float64) + 0.5) / 9007199254740992.0
