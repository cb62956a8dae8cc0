"""Syndrome-based monitoring of the spin-flip channel and a phase-flip logical code.

Between syndrome measurements (spacing Delta) the probe evolves for a full
interval; the syndrome only reveals whether an even or odd number of flips
happened. The two branches are the maps M+ and M-, with M+ + M- = e^{L Delta}.
"""
from __future__ import annotations

import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import fisher, rng
from .channels import ChannelSpec, Kind, flip_fg, generator_derivatives, generators
from .errors import UndetectablePattern
from .qstate import Propagator, Superoperator, as_matrix, unvec, vec

REGIME_FACTOR = 100.0
ENUMERATION_MAX_N = 12


@dataclass(frozen=True)
class SyndromeRecord:
    outcomes: tuple
    delta: float

    def __post_init__(self):
        out = tuple(int(x) for x in self.outcomes)
        if any(x not in (1, -1) for x in out):
            raise ValueError("syndrome outcomes must be +1 or -1")
        object.__setattr__(self, "outcomes", out)

    @property
    def N(self) -> int:
        return len(self.outcomes)

    @property
    def switches(self) -> int:
        lam = (1,) + self.outcomes
        return sum(a != b for a, b in zip(lam, lam[1:]))


@dataclass(frozen=True)
class CodeSpec:
    m: int
    n_logical: int = 1

    def __post_init__(self):
        if self.m < 3 or self.m % 2 == 0:
            raise ValueError(f"m must be an odd integer >= 3, got {self.m}")
        if self.n_logical < 1:
            raise ValueError("n_logical must be >= 1")

    @property
    def n_qubits(self) -> int:
        return self.m * self.n_logical


# ------------------------------------------------------------ syndrome maps


def switch_probability(gamma: float, delta: float) -> float:
    """Probability 1 - p of an odd number of flips in one interval."""
    return -math.expm1(-gamma * delta / 2) / 2


def syndrome_step(rho, delta: float, omega: float, gamma: float):
    """(M+ rho, M- rho) for a (possibly unnormalized) qubit state."""
    if delta <= 0:
        raise ValueError("delta must be > 0")
    r = as_matrix(rho)
    z = gamma * delta / 4
    f, g, *_ = flip_fg(omega, gamma, delta)
    e = math.exp(-z)
    plus = e * np.array([[r[0, 0] * math.cosh(z), r[0, 1] * f], [r[1, 0] * np.conj(f), r[1, 1] * math.cosh(z)]])
    minus = e * np.array([[r[1, 1] * math.sinh(z), r[1, 0] * g], [r[0, 1] * g, r[0, 0] * math.sinh(z)]])
    return plus, minus


def syndrome_superoperators(delta: float, omega: float, gamma: float, parameter: str | None = None):
    """M+ and M- as 4x4 superoperators from (e^{(L0+J)D} +- e^{(L0-J)D}) / 2.

    Reversing the sign of J flips the sign of every odd-jump term of the
    Dyson series, so the half-sum and half-difference separate even and odd
    jump counts. With ``parameter`` also returns the two derivatives.
    """
    spec = ChannelSpec(Kind.SPIN_FLIP, omega, gamma)
    _, jump, jumpless = generators(spec)
    even_gen = (jumpless + jump).matrix
    odd_gen = (jumpless - jump).matrix
    if parameter is None:
        a = Propagator(even_gen).expm([delta])[0]
        b = Propagator(odd_gen).expm([delta])[0]
        return Superoperator((a + b) / 2), Superoperator((a - b) / 2)
    d_l0, d_j = generator_derivatives(spec, parameter)
    a, da = Propagator(even_gen, (d_l0 + d_j).matrix).expm_and_derivative([delta])
    b, db = Propagator(odd_gen, (d_l0 - d_j).matrix).expm_and_derivative([delta])
    return ((a[0] + b[0]) / 2, (a[0] - b[0]) / 2), ((da[0] + db[0]) / 2, (da[0] - db[0]) / 2)


# ----------------------------------------------------------- record sampler


def _simulate_block(rho0, delta, N, omega, gamma, seed, start, count):
    mp, mm = syndrome_superoperators(delta, omega, gamma)
    mp, mm = mp.matrix, mm.matrix
    idx = np.arange(start, start + count, dtype=np.uint64)
    v = np.broadcast_to(vec(as_matrix(rho0)), (count, 4)).copy()
    lam = np.ones(count, dtype=np.int8)
    out = np.empty((count, N), dtype=np.int8)
    for k in range(N):
        vp = v @ mp.T
        vm = v @ mm.T
        pp = (vp[:, 0] + vp[:, 3]).real
        pm = (vm[:, 0] + vm[:, 3]).real
        u = rng.uniforms(seed, idx, k, rng.SYNDROME)
        switch = u * (pp + pm) < pm
        v = np.where(switch[:, None], vm, vp)
        v /= (v[:, 0] + v[:, 3]).real[:, None]
        lam = np.where(switch, -lam, lam).astype(np.int8)
        out[:, k] = lam
    states = unvec(v, 2)
    return out, (states + np.swapaxes(states.conj(), -1, -2)) / 2


def _block_task(args):
    return _simulate_block(*args)


def simulate_syndrome_records(rho0, delta: float, N: int, omega: float, gamma: float, n_records: int,
                              seed: int, workers: int = 1, block: int = 8192):
    """Outcome array (n_records, N) of +-1 and the normalized final states."""
    tasks = [(as_matrix(rho0), delta, N, omega, gamma, seed, s, min(block, n_records - s))
             for s in range(0, n_records, block)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_block_task, tasks))
    else:
        parts = [_block_task(t) for t in tasks]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def simulate_syndrome_record(rho0, delta: float, N: int, omega: float, gamma: float, stream: tuple[int, int]):
    seed, index = stream
    out, states = _simulate_block(as_matrix(rho0), delta, N, omega, gamma, seed, index, 1)
    return SyndromeRecord(tuple(out[0]), delta), states[0]


def switch_counts(outcomes) -> np.ndarray:
    lam = np.concatenate([np.ones((len(outcomes), 1), dtype=np.int8), np.asarray(outcomes, dtype=np.int8)], axis=1)
    return np.sum(lam[:, 1:] != lam[:, :-1], axis=1)


def gamma_score(m, N: int, gamma: float, delta: float):
    """d/d gamma of log P for a record with m sign switches out of N."""
    q = switch_probability(gamma, delta)
    p = 1 - q
    dp = -delta / 4 * math.exp(-gamma * delta / 2)
    m = np.asarray(m)
    return (N - m) * dp / p - m * dp / q


# ------------------------------------------------------------ closed forms


def finite_delta_cfi_gamma(gamma: float, T: float, delta: float) -> float:
    _check_segments(T, delta)
    z = gamma * delta / 4
    factor = 1.0 if z == 0 else 4 * z / math.expm1(4 * z)
    return T / (4 * gamma) * factor


def _check_segments(T: float, delta: float) -> int:
    if delta <= 0 or T <= 0:
        raise ValueError("T and delta must be > 0")
    n = round(T / delta)
    if n < 1 or abs(T / delta - n) > 1e-9 * max(1.0, T / delta):
        raise ValueError(f"T/delta = {T / delta!r} must be a positive integer")
    return n


@dataclass(frozen=True)
class FiniteDeltaResult:
    value: float
    valid: bool
    flags: dict = field(default_factory=dict)


def finite_delta_qfi_omega(rho0, gamma: float, T: float, delta: float, omega: float | None = None) -> FiniteDeltaResult:
    """Monitored omega-information at syndrome spacing delta, small-rate regime.

    Regime flags: fast syndromes (1/delta >= 100 omega), weak noise
    (omega >= 100 gamma) and gamma^2 T delta <= 0.01. Flags depending on omega
    are reported as failed when omega is not supplied.
    """
    N = _check_segments(T, delta)
    r = as_matrix(rho0)
    r2 = abs(r[0, 1]) ** 2
    z = gamma * delta / 4
    x = z * math.exp(-z)
    if gamma == 0:
        value = 4 * T * T * r2
    else:
        lo = math.exp(N * math.log1p(-x))
        hi = math.exp(N * math.log1p(x))
        value = 32 * r2 / gamma**2 * math.exp(-gamma * T / 4 + 2 * z) * (lo + hi * (gamma * T / 2 * math.exp(-z) - 1))
    flags = {
        "fast_syndrome": omega is not None and 1 / delta >= REGIME_FACTOR * abs(omega),
        "weak_noise": omega is not None and abs(omega) >= REGIME_FACTOR * gamma,
        "short_run": gamma * gamma * T * delta <= 1 / REGIME_FACTOR,
    }
    return FiniteDeltaResult(value, all(flags.values()), flags)


# ------------------------------------------------------ enumeration oracle


@dataclass(frozen=True)
class EnumerationResult:
    total: float
    cfi: float
    avg_traj_qfi: float
    probability_sum: float
    n_sequences: int


def enumerate_syndrome_sequences(rho0, delta: float, N: int, omega: float, gamma: float, parameter: str) -> EnumerationResult:
    """Exact monitored information by summing over all 2^N syndrome records."""
    if N > ENUMERATION_MAX_N:
        raise ValueError(f"enumeration limited to N <= {ENUMERATION_MAX_N}")
    (mp, mm), (dmp, dmm) = syndrome_superoperators(delta, omega, gamma, parameter)
    v = vec(as_matrix(rho0))[None, :]
    dv = np.zeros_like(v)
    for _ in range(N):
        v, dv = (
            np.concatenate([v @ mp.T, v @ mm.T]),
            np.concatenate([dv @ mp.T + v @ dmp.T, dv @ mm.T + v @ dmm.T]),
        )
    rt, drt = unvec(v, 2), unvec(dv, 2)
    p = np.trace(rt, axis1=-2, axis2=-1).real
    dp = np.trace(drt, axis1=-2, axis2=-1).real
    live = p > 0
    rho = rt[live] / p[live, None, None]
    drho = (drt[live] - rho * dp[live, None, None]) / p[live, None, None]
    part = fisher.mqt_total(p[live], dp[live], rho, drho)
    return EnumerationResult(part.total, part.cfi_timings, part.avg_traj_qfi, float(p.sum()), len(p))


# -------------------------------------------------------- logical phase code


def _plus_minus_products(m: int):
    plus = np.array([1.0, 1.0]) / math.sqrt(2)
    minus = np.array([1.0, -1.0]) / math.sqrt(2)
    a, b = plus, minus
    for _ in range(m - 1):
        a, b = np.kron(a, plus), np.kron(b, minus)
    return a, b


def logical_basis(m: int):
    """(|Up>, |Down>) of the m-qubit phase-flip code."""
    a, b = _plus_minus_products(m)
    return (a + b) / math.sqrt(2), (a - b) / math.sqrt(2)


def _zz_parity(n_qubits: int, block: slice) -> np.ndarray:
    """Diagonal of sigma_z on every qubit in ``block``, as a +-1 vector on the computational basis."""
    idx = np.arange(2**n_qubits)
    bits = (idx[:, None] >> (n_qubits - 1 - np.arange(n_qubits))[None, :]) & 1
    return np.prod(1 - 2 * bits[:, block], axis=1)


def _flip_diag(n_qubits: int, qubit: int) -> np.ndarray:
    idx = np.arange(2**n_qubits)
    return 1 - 2 * ((idx >> (n_qubits - 1 - qubit)) & 1)


def check_detectable(code: CodeSpec, flips, delta: float | None = None):
    """Raise UndetectablePattern if some block sees more than (m-1)/2 net flips in one syndrome interval."""
    per = Counter()
    for q, t in flips:
        if not 0 <= q < code.n_qubits:
            raise ValueError(f"qubit index {q} outside 0..{code.n_qubits - 1}")
        slot = t if delta is None else math.floor(t / delta)
        per[(q // code.m, slot, q)] += 1
    flipped = Counter()
    for (blk, slot, _), c in per.items():
        flipped[(blk, slot)] += c % 2
    limit = (code.m - 1) // 2
    for (blk, slot), c in flipped.items():
        if c > limit:
            raise UndetectablePattern(
                f"block {blk} has {c} flipped qubits in one syndrome interval; at most {limit} are detectable"
            )


def logical_code_qfi(code: CodeSpec, T: float, omega: float, flips=(), delta: float | None = None) -> float:
    """QFI about omega of the monitored final state for a given phase-flip pattern.

    ``flips`` is an iterable of (physical qubit index, time). Flips in the same
    syndrome interval (same time when ``delta`` is None) are grouped.
    """
    flips = sorted(((int(q), float(t)) for q, t in flips), key=lambda f: f[1])
    if any(not 0 <= t <= T for _, t in flips):
        raise ValueError("flip times must lie in [0, T]")
    check_detectable(code, flips, delta)
    up, down = logical_basis(code.m)
    ups, downs = up, down
    for _ in range(code.n_logical - 1):
        ups, downs = np.kron(ups, up), np.kron(downs, down)
    psi = (ups + downs).astype(complex) / math.sqrt(2)
    n = code.n_qubits
    gen = sum(_zz_parity(n, slice(b * code.m, (b + 1) * code.m)) for b in range(code.n_logical)) / 2.0
    dpsi = np.zeros_like(psi)
    last = 0.0
    for q, t in [*flips, (None, T)]:
        phase = np.exp(-1j * omega * gen * (t - last))
        psi, dpsi = phase * psi, phase * (dpsi - 1j * gen * (t - last) * psi)
        if q is not None:
            z = _flip_diag(n, q)
            psi, dpsi = z * psi, z * dpsi
        last = t
    return fisher.qfi_pure(psi, dpsi)
