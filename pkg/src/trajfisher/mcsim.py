"""Monte Carlo unraveling of the monitored qubit into jump trajectories.

Waiting times are drawn by inverting the no-jump survival function
S(t) = tr(e^{L0 t} rho) of the current conditional state; every uniform comes
from a counter-based stream keyed by (seed, trajectory index, draw number), so
results do not depend on how trajectories are split across workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import channels, fisher, rng
from .channels import ChannelSpec, JumpTimes, Kind
from .qstate import S_Z, DensityMatrix, as_matrix, make_density_matrix

BLOCK = 8192
BISECT_TOL = 1e-12


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_samples: int
    seed: int

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.std_error >= 0:
            raise ValueError("std_error must be >= 0")

    @classmethod
    def from_samples(cls, x, seed: int) -> "McEstimate":
        x = np.asarray(x, dtype=float)
        n = x.size
        err = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(float(np.mean(x)), err, n, int(seed))

    def within(self, value: float, sigmas: float = 3.0, floor: float = 0.0) -> bool:
        return abs(self.mean - value) <= sigmas * self.std_error + floor


@dataclass(frozen=True)
class TrajectoryRecord:
    jumps: JumpTimes
    final_state: DensityMatrix
    log_weight: float


@dataclass(frozen=True)
class TrajectoryBatch:
    """Columnar storage of sampled trajectories; ``times`` is NaN-padded (K, max jumps)."""

    spec: ChannelSpec
    rho0: np.ndarray
    T: float
    seed: int
    start: int
    times: np.ndarray
    n_jumps: np.ndarray
    final_states: np.ndarray
    log_weight: np.ndarray

    def __len__(self):
        return len(self.n_jumps)

    @property
    def first_jump(self) -> np.ndarray:
        if self.times.shape[1] == 0:
            return np.full(len(self), np.nan)
        return self.times[:, 0]

    @property
    def net_time(self) -> np.ndarray:
        return channels.net_phase_time(self.times, self.T)

    def record(self, i: int) -> TrajectoryRecord:
        t = self.times[i, : self.n_jumps[i]]
        return TrajectoryRecord(JumpTimes(tuple(t), self.T), make_density_matrix(self.final_states[i]), float(self.log_weight[i]))


class _JumplessFlow:
    """Batched rho -> e^{-iH t} rho e^{iH^+ t} for a fixed effective Hamiltonian."""

    def __init__(self, h_eff):
        lam, v = np.linalg.eig(np.asarray(h_eff, dtype=complex))
        self.lam, self.v, self.vinv = lam, v, np.linalg.inv(v)

    def kraus(self, t):
        e = np.exp(-1j * np.multiply.outer(np.asarray(t, dtype=float), self.lam))
        return np.einsum("ij,kj,jl->kil", self.v, e, self.vinv)

    def evolve(self, rho, t):
        k = self.kraus(t)
        return k @ rho @ np.swapaxes(k.conj(), -1, -2)

    def survival(self, rho, t):
        return np.trace(self.evolve(rho, t), axis1=-2, axis2=-1).real


def _inverse_survival(spec: ChannelSpec, flow: _JumplessFlow, rho, u, horizon):
    """Waiting time with S(t) = u for each row; inf where S(horizon) >= u (no jump before the horizon)."""
    s_end = flow.survival(rho, horizon)
    jumps = u > s_end
    out = np.full(len(u), np.inf)
    if not np.any(jumps):
        return out
    c = spec.jump_operator
    cc = c.conj().T @ c
    g = spec.gamma
    if np.allclose(cc, cc[0, 0] * np.eye(len(cc)), atol=0):
        out[jumps] = -np.log(u[jumps]) / (g * cc[0, 0].real)
    elif spec.kind is Kind.RELAXATION:
        a = rho[jumps, 0, 0].real
        out[jumps] = -np.log((u[jumps] - (1 - a)) / a) / g
    else:
        out[jumps] = _bisect_survival(flow, rho[jumps], u[jumps], horizon[jumps])
    return out


def _bisect_survival(flow: _JumplessFlow, rho, u, horizon):
    lo = np.zeros(len(u))
    hi = np.array(horizon, dtype=float)
    while np.max(hi - lo, initial=0.0) > BISECT_TOL:
        mid = (lo + hi) / 2
        above = flow.survival(rho, mid) > u
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    return (lo + hi) / 2


def sample_block(spec: ChannelSpec, rho0, T: float, seed: int, start: int, count: int) -> TrajectoryBatch:
    """Trajectories with indices start .. start+count-1 (pure function of its arguments)."""
    rho0 = as_matrix(rho0)
    idx = np.arange(start, start + count, dtype=np.uint64)
    flow = _JumplessFlow(spec.h_eff)
    c = spec.jump_operator
    g = spec.gamma
    state = np.broadcast_to(rho0, (count,) + rho0.shape).copy()
    now = np.zeros(count)
    logw = np.zeros(count)
    n = np.zeros(count, dtype=np.int64)
    times = []
    active = np.arange(count) if g > 0 else np.arange(0)
    draw = 0
    while active.size:
        u = rng.uniforms(seed, idx[active], draw, rng.JUMP)
        rem = T - now[active]
        wait = _inverse_survival(spec, flow, state[active], u, rem)
        hit = np.isfinite(wait) & (wait <= rem)
        col = np.full(count, np.nan)
        j = active[hit]
        if j.size:
            pre = flow.evolve(state[j], wait[hit])
            post = c @ pre @ c.conj().T
            rate = np.trace(post, axis1=-2, axis2=-1).real
            # log density: survival to the jump times the jump rate of the normalized state
            logw[j] += np.log(g * rate)
            state[j] = post / rate[:, None, None]
            now[j] += wait[hit]
            n[j] += 1
            col[j] = now[j]
        times.append(col)
        active = j
        draw += 1
    # final jumpless stretch for everyone
    rem = T - now
    end = flow.evolve(state, rem)
    surv = np.trace(end, axis1=-2, axis2=-1).real
    with np.errstate(divide="ignore"):
        logw += np.log(surv)
    final = end / surv[:, None, None]
    final = (final + np.swapaxes(final.conj(), -1, -2)) / 2
    times = np.stack(times[:-1], axis=1) if len(times) > 1 else np.empty((count, 0))
    return TrajectoryBatch(spec, rho0, T, seed, start, times, n, final, logw)


def _concat(batches) -> TrajectoryBatch:
    first = batches[0]
    width = max(b.times.shape[1] for b in batches)
    times = np.concatenate(
        [np.pad(b.times, ((0, 0), (0, width - b.times.shape[1])), constant_values=np.nan) for b in batches]
    )
    return TrajectoryBatch(
        first.spec, first.rho0, first.T, first.seed, first.start, times,
        np.concatenate([b.n_jumps for b in batches]),
        np.concatenate([b.final_states for b in batches]),
        np.concatenate([b.log_weight for b in batches]),
    )


def _block_task(args):
    return sample_block(*args)


def sample_batch(spec: ChannelSpec, rho0, T: float, n_samples: int, seed: int, workers: int = 1,
                 start: int = 0) -> TrajectoryBatch:
    """Sample ``n_samples`` trajectories; output is bit-identical for any ``workers``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rho0 = as_matrix(rho0)
    tasks = [(spec, rho0, T, seed, s, min(BLOCK, start + n_samples - s)) for s in range(start, start + n_samples, BLOCK)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_block_task, tasks))
    else:
        blocks = [_block_task(t) for t in tasks]
    return _concat(blocks)


def sample_trajectory(spec: ChannelSpec, rho0, T: float, stream: tuple[int, int]) -> TrajectoryRecord:
    """One trajectory from stream ``(seed, index)``."""
    seed, index = stream
    return sample_block(spec, rho0, T, seed, index, 1).record(0)


# ------------------------------------------------------------- estimators


def per_trajectory_qfi(batch: TrajectoryBatch, parameter: str) -> np.ndarray:
    rho, drho = channels.conditional_states(
        batch.spec, batch.rho0, batch.T, batch.n_jumps, batch.net_time, parameter=parameter
    )
    return fisher.qfi_batch(rho, drho)


def per_trajectory_score(batch: TrajectoryBatch, parameter: str) -> np.ndarray:
    return channels.timing_score(batch.spec, batch.rho0, batch.T, parameter, batch.n_jumps, batch.first_jump)


def mc_traj_qfi(spec: ChannelSpec, parameter: str, rho0, T: float, n_samples: int, seed: int,
                workers: int = 1) -> McEstimate:
    batch = sample_batch(spec, rho0, T, n_samples, seed, workers)
    return McEstimate.from_samples(per_trajectory_qfi(batch, parameter), seed)


def mc_timing_cfi(spec: ChannelSpec, parameter: str, records: TrajectoryBatch) -> McEstimate:
    if records.spec != spec:
        raise ValueError("records were sampled from a different channel")
    return McEstimate.from_samples(per_trajectory_score(records, parameter) ** 2, records.seed)


@dataclass(frozen=True)
class McBreakdown:
    cfi_timings: McEstimate
    avg_traj_qfi: McEstimate
    total: McEstimate
    mean_state: np.ndarray
    mean_state_err: np.ndarray


def mc_breakdown(spec: ChannelSpec, parameter: str, rho0, T: float, n_samples: int, seed: int,
                 workers: int = 1) -> McBreakdown:
    batch = sample_batch(spec, rho0, T, n_samples, seed, workers)
    score2 = per_trajectory_score(batch, parameter) ** 2
    q = per_trajectory_qfi(batch, parameter)
    mean, err = mean_final_state(batch)
    return McBreakdown(
        McEstimate.from_samples(score2, seed),
        McEstimate.from_samples(q, seed),
        McEstimate.from_samples(score2 + q, seed),
        mean,
        err,
    )


def mean_final_state(batch: TrajectoryBatch):
    """Entrywise mean of the final conditional states and its standard error."""
    s = batch.final_states
    n = len(batch)
    err = (np.std(s.real, axis=0, ddof=1) + 1j * np.std(s.imag, axis=0, ddof=1)) / math.sqrt(n) if n > 1 else np.zeros_like(s[0])
    return s.mean(axis=0), err


def saturation_diagnostic(psis, dpsis, weights=None) -> float:
    """Spread max_l |<psi_l|d psi_l> - mean| over a pure-state trajectory ensemble.

    A vanishing spread means the phase overlaps are trajectory independent,
    in which case the monitored information equals the QFI of the joint
    probe-plus-record state.
    """
    psis = np.atleast_2d(np.asarray(psis, dtype=complex))
    dpsis = np.atleast_2d(np.asarray(dpsis, dtype=complex))
    overlaps = np.einsum("ki,ki->k", psis.conj(), dpsis)
    if weights is None:
        centre = overlaps.mean()
    else:
        w = np.asarray(weights, dtype=float)
        centre = np.sum(w * overlaps) / np.sum(w)
    return float(np.max(np.abs(overlaps - centre)))


def pure_trajectory(spec: ChannelSpec, psi0, jumps: JumpTimes, parameter: str):
    """Normalized pure trajectory state and its exact parameter derivative.

    The phase convention is the one fixed by the Kraus operators themselves
    (no per-trajectory gauge choice), which is what the overlap spread needs.
    """
    c = spec.jump_operator
    cc = c.conj().T @ c
    dh = S_Z if parameter == "omega" else -0.5j * cc
    psi = np.asarray(psi0, dtype=complex).ravel()
    dpsi = np.zeros_like(psi)
    last = 0.0
    stops = list(jumps.times) + [jumps.horizon]
    for k, t in enumerate(stops):
        gap = t - last
        u, du = scipy.linalg.expm_frechet(-1j * spec.h_eff * gap, -1j * dh * gap)
        psi, dpsi = u @ psi, du @ psi + u @ dpsi
        if k < len(jumps.times):
            psi, dpsi = c @ psi, c @ dpsi
        last = t
    norm = np.linalg.norm(psi)
    dnorm = np.vdot(psi, dpsi).real / norm
    return psi / norm, dpsi / norm - psi * dnorm / norm**2
