"""Quantum and classical Fisher information, the SLD, and the monitored-trajectory breakdown."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DerivativeInconsistent,
    DimensionMismatch,
    InconsistentPureDerivative,
    NonHermitian,
    NotNormalized,
    SingularOutcome,
    TraceNotOne,
)
from .qstate import as_matrix

ZERO_EIG = 1e-12
ZERO_EIG_DERIV = 1e-8
ZERO_PROB = 1e-15
ZERO_PROB_DERIV = 1e-9


@dataclass(frozen=True)
class ParametrizedState:
    """rho(theta) together with d rho / d theta at the same theta."""

    value: np.ndarray
    derivative: np.ndarray

    def __post_init__(self):
        rho = as_matrix(self.value)
        drho = as_matrix(self.derivative)
        if rho.shape != drho.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise DimensionMismatch(f"state {rho.shape} and derivative {drho.shape} disagree")
        if np.max(np.abs(drho - drho.conj().T)) > 1e-10:
            raise NonHermitian("state derivative is not Hermitian")
        if abs(np.trace(drho)) > 1e-10:
            raise TraceNotOne(f"state derivative has trace {np.trace(drho):.3g}, expected 0")
        if abs(np.trace(rho) - 1) > 1e-8:
            raise TraceNotOne(f"state trace {np.trace(rho).real!r} is not 1")
        object.__setattr__(self, "value", (rho + rho.conj().T) / 2)
        object.__setattr__(self, "derivative", (drho + drho.conj().T) / 2)


def qfi_pure(psi, dpsi) -> float:
    psi = np.asarray(psi, dtype=complex).ravel()
    dpsi = np.asarray(dpsi, dtype=complex).ravel()
    norm = np.vdot(psi, psi).real
    if abs(norm - 1) > 1e-10:
        raise NotNormalized(f"<psi|psi> = {norm!r}")
    val = 4 * (np.vdot(dpsi, dpsi).real - abs(np.vdot(psi, dpsi)) ** 2)
    return max(float(val), 0.0)


def _eig_frame(rho, drho):
    """Eigenvalues, eigenvectors, derivative in the eigenbasis, and the support mask (batched)."""
    p, v = np.linalg.eigh(rho)
    d = np.swapaxes(v.conj(), -1, -2) @ drho @ v
    support = p > ZERO_EIG
    null = ~support
    # derivative restricted to the null space must vanish, otherwise the rank changes at theta
    null_pair = null[..., :, None] & null[..., None, :]
    leak = np.max(np.where(null_pair, np.abs(d), 0.0), axis=(-1, -2))
    if np.any(leak > ZERO_EIG_DERIV):
        raise DerivativeInconsistent(
            f"zero-eigenvalue subspace carries derivative {np.max(leak):.3g} > {ZERO_EIG_DERIV}"
        )
    return p, v, d, support


def _pair_weights(p, support):
    s = p[..., :, None] + p[..., None, :]
    keep = (support[..., :, None] | support[..., None, :]) & (s > ZERO_EIG)
    return np.where(keep, 2.0 / np.where(keep, s, 1.0), 0.0)


def qfi_mixed(state: ParametrizedState) -> float:
    """Spectral-decomposition QFI, sum over eigenpairs not both in the kernel."""
    p, _, d, support = _eig_frame(state.value, state.derivative)
    val = np.sum(_pair_weights(p, support) * np.abs(d) ** 2)
    return max(float(val), 0.0)


def qfi_batch(rhos, drhos) -> np.ndarray:
    """Vectorized :func:`qfi_mixed` over a leading batch axis."""
    rhos = np.asarray(rhos, dtype=complex)
    drhos = np.asarray(drhos, dtype=complex)
    rhos = (rhos + np.swapaxes(rhos.conj(), -1, -2)) / 2
    drhos = (drhos + np.swapaxes(drhos.conj(), -1, -2)) / 2
    p, _, d, support = _eig_frame(rhos, drhos)
    val = np.sum(_pair_weights(p, support) * np.abs(d) ** 2, axis=(-1, -2))
    return np.maximum(val, 0.0)


def qfi_qubit_bloch(n, dn) -> float:
    n = np.asarray(n, dtype=float)
    dn = np.asarray(dn, dtype=float)
    purity_gap = 1 - n @ n
    if purity_gap < -1e-12:
        raise ValueError(f"|n| = {np.sqrt(n @ n)!r} exceeds 1")
    proj = n @ dn
    if purity_gap < ZERO_EIG:
        if abs(proj) > 1e-6:
            raise InconsistentPureDerivative(f"|n| = 1 but n.dn = {proj:.3g}")
        return float(dn @ dn)
    return float(dn @ dn + proj**2 / purity_gap)


def sld(state: ParametrizedState) -> np.ndarray:
    p, v, d, support = _eig_frame(state.value, state.derivative)
    lhat = _pair_weights(p, support) * d
    out = v @ lhat @ v.conj().T
    return (out + out.conj().T) / 2


def sld_batch(rhos, drhos) -> np.ndarray:
    """Vectorized :func:`sld` over a leading batch axis."""
    rhos = np.asarray(rhos, dtype=complex)
    drhos = np.asarray(drhos, dtype=complex)
    p, v, d, support = _eig_frame((rhos + np.swapaxes(rhos.conj(), -1, -2)) / 2, (drhos + np.swapaxes(drhos.conj(), -1, -2)) / 2)
    out = v @ (_pair_weights(p, support) * d) @ np.swapaxes(v.conj(), -1, -2)
    return (out + np.swapaxes(out.conj(), -1, -2)) / 2


def sld_projectors(state: ParametrizedState) -> np.ndarray:
    """Eigenprojectors of the SLD, an optimal projective measurement. Shape (d, d, d)."""
    _, vecs = np.linalg.eigh(sld(state))
    return np.einsum("ik,jk->kij", vecs, vecs.conj())


@dataclass(frozen=True)
class OutcomeDistribution:
    """Outcome probabilities (or densities times quadrature weights) and their theta-derivatives."""

    probabilities: np.ndarray
    derivatives: np.ndarray
    outcomes: tuple | None = None
    weights: np.ndarray | None = None
    density: bool = False

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float).ravel()
        dp = np.asarray(self.derivatives, dtype=float).ravel()
        if p.shape != dp.shape:
            raise DimensionMismatch(f"{p.size} probabilities vs {dp.size} derivatives")
        w = np.ones_like(p) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()
        if w.shape != p.shape:
            raise DimensionMismatch(f"{w.size} quadrature weights vs {p.size} outcomes")
        if np.any(p < -ZERO_PROB):
            raise ValueError("negative outcome probability")
        total = np.sum(w * p)
        if abs(total - 1) > 1e-10:
            raise NotNormalized(f"outcome probabilities sum to {total!r}")
        if abs(np.sum(w * dp)) > 1e-10 * max(1.0, np.sum(w * np.abs(dp))):
            raise ValueError(f"probability derivatives sum to {np.sum(w * dp):.3g}, expected 0")
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "derivatives", dp)
        object.__setattr__(self, "weights", w)


def cfi(dist: OutcomeDistribution) -> float:
    p, dp, w = dist.probabilities, dist.derivatives, dist.weights
    # densities are judged by the mass they carry, not their raw value
    live = (np.abs(w) * p > ZERO_PROB) & (p > 0)
    if np.any(np.abs(w * dp)[~live] > ZERO_PROB_DERIV):
        raise SingularOutcome("zero-probability outcome has a nonzero derivative")
    return float(np.sum(w[live] * dp[live] ** 2 / p[live]))


@dataclass(frozen=True)
class FisherBreakdown:
    cfi_timings: float
    avg_traj_qfi: float
    total: float
    conventional_qfi: float

    def __post_init__(self):
        if abs(self.total - self.cfi_timings - self.avg_traj_qfi) > 1e-10 * max(1.0, abs(self.total)):
            raise ValueError("total must equal cfi_timings + avg_traj_qfi")

    @property
    def gain(self) -> float:
        """Ratio of monitored to unmonitored information."""
        return self.total / self.conventional_qfi if self.conventional_qfi > 0 else np.inf


def mqt_total(weights, weight_derivatives, states, state_derivatives, quadrature=None) -> FisherBreakdown:
    """Information from monitoring an ensemble of trajectories.

    ``weights`` are occurrence probabilities (or densities, with ``quadrature``
    weights for the timing integrals); ``states`` the normalized conditional
    states, ``state_derivatives`` their theta-derivatives.
    """
    w = np.asarray(weights, dtype=float)
    dw = np.asarray(weight_derivatives, dtype=float)
    rhos = np.asarray(states, dtype=complex)
    drhos = np.asarray(state_derivatives, dtype=complex)
    if rhos.ndim == 2:
        rhos, drhos = rhos[None], drhos[None]
    q = np.ones_like(w) if quadrature is None else np.asarray(quadrature, dtype=float)
    traces = np.trace(rhos, axis1=-2, axis2=-1)
    if np.any(np.abs(traces - 1) > 1e-8):
        raise NotNormalized("trajectory states must be normalized")
    dist = OutcomeDistribution(w, dw, weights=q, density=quadrature is not None)
    timing = cfi(dist)
    per_traj = qfi_batch(rhos, drhos)
    averaged = float(np.sum(q * w * per_traj))
    rho_bar = np.einsum("k,kij->ij", q * w, rhos)
    drho_bar = np.einsum("k,kij->ij", q * dw, rhos) + np.einsum("k,kij->ij", q * w, drhos)
    conventional = float(qfi_batch(rho_bar[None], drho_bar[None])[0])
    return FisherBreakdown(timing, averaged, timing + averaged, conventional)


def ensemble_arrays(ensemble: Sequence[tuple[float, ParametrizedState]]):
    """Split a list of (weight, ParametrizedState) into the arrays :func:`mqt_total` takes."""
    w = np.array([e[0] for e in ensemble], dtype=float)
    rhos = np.array([e[1].value for e in ensemble])
    drhos = np.array([e[1].derivative for e in ensemble])
    return w, rhos, drhos


def finite_difference_derivative(f: Callable, theta: float, h: float | None = None):
    if h is None:
        h = np.finfo(float).eps ** (1 / 3) * max(1.0, abs(theta))
    return (np.asarray(f(theta + h)) - np.asarray(f(theta - h))) / (2 * h)
