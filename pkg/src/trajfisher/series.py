"""Numerical trajectory expansion: sum over jump counts of time-ordered superoperator products.

Used as an independent oracle for the closed forms in :mod:`channels`. Each
n-jump term e^{L0 g_n} J ... J e^{L0 g_0} rho0 (gaps g_k between jumps) is
integrated over the ordered-time simplex; parameter derivatives are propagated
through every factor with exact Frechet derivatives of the exponentials.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import poisson

from . import fisher
from .channels import ChannelSpec, generator_derivatives, generators
from .qstate import Propagator, as_matrix, unvec, vec

GL_NODES = 32


@lru_cache(maxsize=None)
def _gauss_legendre01(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return (x + 1) / 2, w / 2


def _compositions(total: int, parts: int):
    for c in itertools.combinations(range(total + parts - 1), parts - 1):
        cuts = (-1,) + c + (total + parts - 1,)
        yield tuple(cuts[i + 1] - cuts[i] - 1 for i in range(parts))


@lru_cache(maxsize=None)
def grundmann_moeller(dim: int, s: int = 2):
    """Degree 2s+1 rule on the unit simplex in barycentric form: (points (K, dim+1), weights (K,)).

    Weights sum to the simplex volume 1/dim!.
    """
    d = 2 * s + 1
    pts, wts = [], []
    for i in range(s + 1):
        denom = d + dim - 2 * i
        w = (-1) ** i * 2.0 ** (-2 * s) * denom**d / (math.factorial(i) * math.factorial(d + dim - i))
        for beta in _compositions(s - i, dim + 1):
            pts.append([(2 * b + 1) / denom for b in beta])
            wts.append(w)
    return np.array(pts), np.array(wts)


def simplex_gaps(n: int, T: float, nodes: int = GL_NODES, gm_order: int = 2):
    """Quadrature over 0 < t_1 < ... < t_n < T returned as gap arrays (K, n+1) and weights (K,)."""
    if n == 0:
        return np.array([[T]]), np.array([1.0])
    if n <= 3:
        x, w = _gauss_legendre01(nodes)
        grids = np.meshgrid(*([x] * n), indexing="ij")
        wgrid = np.meshgrid(*([w] * n), indexing="ij")
        v = np.stack([g.ravel() for g in grids], axis=1)  # v[:, k] for k = 0..n-1
        wt = np.prod(np.stack([g.ravel() for g in wgrid], axis=1), axis=1)
        # t_n = T v_n, t_k = t_{k+1} v_k ; Jacobian T^n prod_k v_k^(k-1) (1-based k)
        times = np.empty_like(v)
        times[:, n - 1] = T * v[:, n - 1]
        for k in range(n - 2, -1, -1):
            times[:, k] = times[:, k + 1] * v[:, k]
        jac = T**n * np.prod(v ** np.arange(n), axis=1)
        edges = np.concatenate([np.zeros((len(v), 1)), times, np.full((len(v), 1), T)], axis=1)
        return np.diff(edges, axis=1), wt * jac
    bary, wt = grundmann_moeller(n, gm_order)
    return T * bary, wt * T**n


def jump_count_cutoff(spec: ChannelSpec, T: float, tail: float) -> int:
    """Largest jump count needed so that the neglected probability is below ``tail``."""
    _, jump, _ = generators(spec)
    if spec.gamma == 0 or np.max(np.abs(jump.matrix)) == 0:
        return 0
    if np.max(np.abs((jump @ jump).matrix)) < 1e-14 * max(1.0, spec.gamma) ** 2:
        return 1
    c = spec.jump_operator
    rate = spec.gamma * np.max(np.linalg.eigvalsh(c.conj().T @ c))
    n = 0
    while poisson.sf(n, rate * T) >= tail:
        n += 1
    return n


@dataclass(frozen=True)
class SeriesResult:
    breakdown: fisher.FisherBreakdown
    probability_by_count: np.ndarray
    total_probability: float
    rho_bar_sum: np.ndarray
    rho_bar_exact: np.ndarray
    n_max: int


def _propagate(e, de, jump, djump, gaps_idx, rho0):
    """Vectorized product along gap columns; e, de are lists of (K, 4, 4) per gap column."""
    v0 = vec(as_matrix(rho0))
    v = np.einsum("kij,j->ki", e[0], v0)
    dv = np.einsum("kij,j->ki", de[0], v0)
    for col in range(1, gaps_idx):
        dv = dv @ jump.T + v @ djump.T
        v = v @ jump.T
        dv = np.einsum("kij,kj->ki", e[col], dv) + np.einsum("kij,kj->ki", de[col], v)
        v = np.einsum("kij,kj->ki", e[col], v)
    return v, dv


def trajectory_series(spec: ChannelSpec, parameter: str, rho0, T: float, tail: float = 1e-14,
                      nodes: int = GL_NODES, gm_order: int = 2) -> SeriesResult:
    full, jump, jumpless = generators(spec)
    d_l0, d_j = generator_derivatives(spec, parameter)
    prop = Propagator(jumpless.matrix, d_l0.matrix)
    dim = full.dim
    n_max = jump_count_cutoff(spec, T, tail)

    weights, dweights, states, dstates, quad = [], [], [], [], []
    probs = np.zeros(n_max + 1)
    rho_sum = np.zeros((dim, dim), dtype=complex)
    for n in range(n_max + 1):
        gaps, q = simplex_gaps(n, T, nodes, gm_order)
        e, de = zip(*(prop.expm_and_derivative(gaps[:, k]) for k in range(n + 1)))
        v, dv = _propagate(e, de, jump.matrix, d_j.matrix, n + 1, rho0)
        rt = unvec(v, dim)
        drt = unvec(dv, dim)
        p = np.trace(rt, axis1=-2, axis2=-1).real
        dp = np.trace(drt, axis1=-2, axis2=-1).real
        probs[n] = float(q @ p)
        rho_sum += np.einsum("k,kij->ij", q, rt)
        live = p > 1e-300
        p, dp, rt, drt, q = p[live], dp[live], rt[live], drt[live], q[live]
        rho = rt / p[:, None, None]
        drho = (drt - rho * dp[:, None, None]) / p[:, None, None]
        weights.append(p), dweights.append(dp), states.append(rho), dstates.append(drho), quad.append(q)

    w = np.concatenate(weights)
    dw = np.concatenate(dweights)
    rhos = np.concatenate(states)
    drhos = np.concatenate(dstates)
    qq = np.concatenate(quad)
    part = fisher.mqt_total(w, dw, rhos, drhos, quadrature=qq)

    full_prop = Propagator(full.matrix, (d_l0 + d_j).matrix)
    u, du = full_prop.expm_and_derivative(np.array([T]))
    v0 = vec(as_matrix(rho0))
    rho_bar = unvec(u[0] @ v0, dim)
    drho_bar = unvec(du[0] @ v0, dim)
    conventional = float(fisher.qfi_batch(rho_bar[None], drho_bar[None])[0])
    breakdown = fisher.FisherBreakdown(part.cfi_timings, part.avg_traj_qfi, part.total, conventional)
    return SeriesResult(breakdown, probs, float(probs.sum()), rho_sum, rho_bar, n_max)
