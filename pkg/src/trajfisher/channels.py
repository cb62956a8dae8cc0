"""Closed-form trajectories and information content for a monitored spin-1/2.

The probe evolves under ``L rho = -i[omega S_z, rho] + gamma D[c] rho`` with one of
three jump operators: relaxation ``c = S_-``, spin flip ``c = S_x`` and dephasing
``c = S_z``. Basis order is (up, down) throughout.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import fisher
from .errors import OutsideValidity, TooManyJumps, UnsupportedCombination
from .qstate import S_MINUS, S_X, S_Z, SIGMA_X, DensityMatrix, Superoperator, as_matrix, make_density_matrix

PARAMETERS = ("omega", "gamma")


class Kind(str, Enum):
    RELAXATION = "relaxation"
    SPIN_FLIP = "flip"
    DEPHASING = "dephasing"


JUMP_OPERATORS = {Kind.RELAXATION: S_MINUS, Kind.SPIN_FLIP: S_X, Kind.DEPHASING: S_Z}


@dataclass(frozen=True)
class ChannelSpec:
    kind: Kind
    omega: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not (np.isfinite(self.omega) and np.isfinite(self.gamma)):
            raise ValueError("omega and gamma must be finite")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")

    @property
    def jump_operator(self) -> np.ndarray:
        return JUMP_OPERATORS[self.kind]

    @property
    def h_eff(self) -> np.ndarray:
        c = self.jump_operator
        return self.omega * S_Z - 0.5j * self.gamma * c.conj().T @ c

    def with_param(self, parameter: str, value: float) -> "ChannelSpec":
        _check_parameter(parameter)
        return ChannelSpec(self.kind, value if parameter == "omega" else self.omega,
                           value if parameter == "gamma" else self.gamma)

    def value_of(self, parameter: str) -> float:
        _check_parameter(parameter)
        return self.omega if parameter == "omega" else self.gamma


def _check_parameter(parameter: str):
    if parameter not in PARAMETERS:
        raise ValueError(f"parameter must be one of {PARAMETERS}, got {parameter!r}")


@dataclass(frozen=True)
class JumpTimes:
    times: tuple
    horizon: float

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"jump times must be strictly increasing: {t}")
        if t and (t[0] < 0 or t[-1] > self.horizon):
            raise ValueError(f"jump times must lie in [0, {self.horizon}]")
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.times)


def initial_state(rho_uu: float, rho_ud_abs: float | None = None, phase: float = 0.0) -> DensityMatrix:
    """Qubit state from its upper population and coherence; default coherence is the pure-state maximum."""
    if rho_ud_abs is None:
        rho_ud_abs = math.sqrt(max(rho_uu * (1 - rho_uu), 0.0))
    c = rho_ud_abs * np.exp(1j * phase)
    return make_density_matrix([[rho_uu, c], [np.conj(c), 1 - rho_uu]])


def _elements(rho0):
    m = as_matrix(rho0)
    return m[0, 0].real, m[1, 1].real, m[0, 1]


def _qubit(a, b, c):
    """Stack 2x2 Hermitian matrices [[a, c], [c*, b]] (broadcast over arrays)."""
    a, b, c = np.broadcast_arrays(np.asarray(a, complex), np.asarray(b, complex), np.asarray(c, complex))
    out = np.empty(a.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = a
    out[..., 1, 1] = b
    out[..., 0, 1] = c
    out[..., 1, 0] = np.conj(c)
    return out


# ---------------------------------------------------------------- generators


def generators(spec: ChannelSpec) -> tuple[Superoperator, Superoperator, Superoperator]:
    """(L, J, L0) with L = L0 + J and J rho = gamma c rho c^+."""
    jump = Superoperator.jump(spec.jump_operator, spec.gamma)
    jumpless = Superoperator.nonhermitian(spec.h_eff)
    return jumpless + jump, jump, jumpless


def generator_derivatives(spec: ChannelSpec, parameter: str) -> tuple[Superoperator, Superoperator]:
    """(dL0, dJ) with respect to omega or gamma."""
    _check_parameter(parameter)
    c = spec.jump_operator
    if parameter == "omega":
        return Superoperator.hamiltonian(S_Z), Superoperator(np.zeros((4, 4)))
    return Superoperator.nonhermitian(-0.5j * c.conj().T @ c), Superoperator.jump(c, 1.0)


# ------------------------------------------------------- trajectory states


def net_phase_time(times, horizon):
    """Integral of s(t) over [0, T], s starting at +1 and switching sign at every jump.

    ``times`` may be a 1-D sequence or a 2-D NaN-padded array (one row per trajectory).
    """
    t = np.asarray(times, dtype=float)
    single = t.ndim == 1
    t = np.atleast_2d(t)
    horizon = np.broadcast_to(np.asarray(horizon, dtype=float), t.shape[:1])
    valid = ~np.isnan(t)
    signs = np.where(np.arange(t.shape[1]) % 2 == 0, 1.0, -1.0)
    # int_0^T s dt = T * (-1)^n + 2 * sum_k (-1)^(k) t_k  (k = 0-based jump index)
    n = valid.sum(axis=1)
    out = horizon * np.where(n % 2 == 0, 1.0, -1.0) + 2 * np.sum(np.where(valid, signs * t, 0.0), axis=1)
    return float(out[0]) if single else out


def jumpless_state(spec: ChannelSpec, rho0, T: float) -> np.ndarray:
    uu, dd, ud = _elements(rho0)
    g, w = spec.gamma, spec.omega
    phase = np.exp(-1j * w * T)
    if spec.kind is Kind.RELAXATION:
        return _qubit(math.exp(-g * T) * uu, dd, math.exp(-g * T / 2) * phase * ud)
    return math.exp(-g * T / 4) * _qubit(uu, dd, phase * ud)


def jump_trajectory_state(spec: ChannelSpec, rho0, jumps: JumpTimes) -> np.ndarray:
    """Unnormalized trajectory with jumps at ``jumps.times``; its trace is the occurrence density."""
    n = len(jumps)
    T = jumps.horizon
    if n == 0:
        return jumpless_state(spec, rho0, T)
    uu, dd, ud = _elements(rho0)
    g, w = spec.gamma, spec.omega
    if spec.kind is Kind.RELAXATION:
        if n > 1:
            raise TooManyJumps("relaxation trajectories carry at most one jump")
        return _qubit(0.0, g * math.exp(-g * jumps.times[0]) * uu, 0.0)
    weight = (g / 4) ** n * math.exp(-g * T / 4)
    if spec.kind is Kind.DEPHASING:
        return weight * _qubit(uu, dd, (-1) ** n * ud * np.exp(-1j * w * T))
    tau = net_phase_time(jumps.times, T)
    even = _qubit(uu, dd, ud * np.exp(-1j * w * tau))
    return weight * (even if n % 2 == 0 else SIGMA_X @ even @ SIGMA_X)


def _csq(x2: float, T: float):
    """cos(wT), sin(wT)/w and (T cos(wT) - sin(wT)/w)/w^2 as functions of x2 = (wT)^2, any sign."""
    if abs(x2) < 1.0:
        C = S = Q = 0.0
        for k in range(18):
            C += (-x2) ** k / math.factorial(2 * k)
            S += (-x2) ** k / math.factorial(2 * k + 1)
            if k:
                Q += (-1) ** k * x2 ** (k - 1) * 2 * k / math.factorial(2 * k + 1)
        return C, T * S, T**3 * Q
    r = math.sqrt(abs(x2))
    if x2 > 0:
        C, S = math.cos(r), math.sin(r) / r
    else:
        C, S = math.cosh(r), math.sinh(r) / r
    return C, T * S, T**3 * (C - S) / x2


def flip_fg(omega: float, gamma: float, t: float):
    """f = cos(wt) - i(omega/w) sin(wt), g = gamma sin(wt)/(4w), w = sqrt(omega^2 - (gamma/4)^2).

    Returns (f, g, df/domega, dg/domega, df/dgamma, dg/dgamma); analytic across w = 0.
    """
    C, S, Q = _csq((omega**2 - gamma**2 / 16) * t * t, t)
    f = C - 1j * omega * S
    g = gamma * S / 4
    df_dw = -t * omega * S - 1j * (S + omega**2 * Q)
    dg_dw = gamma * omega * Q / 4
    df_dg = t * gamma * S / 16 + 1j * omega * gamma * Q / 16
    dg_dg = S / 4 - gamma**2 * Q / 64
    return f, g, df_dw, dg_dw, df_dg, dg_dg


def nonselective_state(spec: ChannelSpec, rho0, T: float) -> np.ndarray:
    uu, dd, ud = _elements(rho0)
    g, w = spec.gamma, spec.omega
    if spec.kind is Kind.RELAXATION:
        e = math.exp(-g * T)
        return _qubit(e * uu, 1 - e * uu, math.exp(-g * T / 2) * np.exp(-1j * w * T) * ud)
    if spec.kind is Kind.DEPHASING:
        return _qubit(uu, dd, math.exp(-g * T / 2) * np.exp(-1j * w * T) * ud)
    f, gg, *_ = flip_fg(w, g, T)
    half = math.exp(-g * T / 2) * (uu - dd) / 2
    return _qubit(0.5 + half, 0.5 - half, (f * ud + gg * np.conj(ud)) * math.exp(-g * T / 4))


def nonselective_derivative(spec: ChannelSpec, rho0, T: float, parameter: str) -> np.ndarray:
    _check_parameter(parameter)
    uu, dd, ud = _elements(rho0)
    g, w = spec.gamma, spec.omega
    phase = np.exp(-1j * w * T)
    if spec.kind in (Kind.RELAXATION, Kind.DEPHASING):
        c = math.exp(-g * T / 2) * phase * ud
        if parameter == "omega":
            return _qubit(0.0, 0.0, -1j * T * c)
        dpop = -T * math.exp(-g * T) * uu if spec.kind is Kind.RELAXATION else 0.0
        return _qubit(dpop, -dpop, -T / 2 * c)
    f, gg, df_dw, dg_dw, df_dg, dg_dg = flip_fg(w, g, T)
    decay = math.exp(-g * T / 4)
    if parameter == "omega":
        return _qubit(0.0, 0.0, (df_dw * ud + dg_dw * np.conj(ud)) * decay)
    dhalf = -T / 4 * math.exp(-g * T / 2) * (uu - dd)
    doff = (df_dg * ud + dg_dg * np.conj(ud) - T / 4 * (f * ud + gg * np.conj(ud))) * decay
    return _qubit(dhalf, -dhalf, doff)


# ------------------------------------------- batched conditional quantities


def conditional_states(spec: ChannelSpec, rho0, T: float, n_jumps, net_time=None, parameter: str | None = None):
    """Normalized conditional states for a batch of trajectories, optionally with their derivatives.

    Trajectories are summarized by their jump count and (spin flip only) the
    net phase time; relaxation trajectories with a jump end in |down>.
    """
    n = np.asarray(n_jumps)
    uu, dd, ud = _elements(rho0)
    g, w, k = spec.gamma, spec.omega, spec.kind
    zeros = np.zeros(n.shape)
    if k is Kind.RELAXATION:
        e = math.exp(-g * T)
        p0 = e * uu + dd
        c0 = math.exp(-g * T / 2) * np.exp(-1j * w * T) * ud / p0
        jumped = n > 0
        rho = np.where(jumped[..., None, None], _qubit(zeros, zeros + 1, zeros), _qubit(zeros + e * uu / p0, zeros + dd / p0, zeros + c0))
        if parameter is None:
            return rho
        if parameter == "omega":
            d0 = _qubit(0.0, 0.0, -1j * T * c0)
        else:
            da = -T * uu * e * dd / p0**2
            d0 = _qubit(da, -da, c0 * (-T / 2 + T * uu * e / p0))
        return rho, np.where(jumped[..., None, None], 0.0, np.broadcast_to(d0, rho.shape))
    odd = ((n % 2 == 1) & (k is Kind.SPIN_FLIP))[..., None, None]
    if k is Kind.DEPHASING:
        phase_t = np.full(n.shape, float(T))
        sign = np.where(n % 2 == 0, 1.0, -1.0)
    else:
        phase_t = np.asarray(net_time, dtype=float)
        sign = np.ones(n.shape)
    off = sign * ud * np.exp(-1j * w * phase_t)
    even = _qubit(zeros + uu, zeros + dd, off)
    rho = np.where(odd, SIGMA_X @ even @ SIGMA_X, even)
    if parameter is None:
        return rho
    if parameter == "gamma":
        return rho, np.zeros_like(rho)
    deven = _qubit(zeros, zeros, -1j * phase_t * off)
    return rho, np.where(odd, SIGMA_X @ deven @ SIGMA_X, deven)


def log_density(spec: ChannelSpec, rho0, T: float, n_jumps, first_jump=None) -> np.ndarray:
    """Log occurrence density of trajectories (jump-count / first-jump summary)."""
    n = np.asarray(n_jumps)
    uu, dd, _ = _elements(rho0)
    g = spec.gamma
    with np.errstate(divide="ignore", invalid="ignore"):
        if spec.kind is Kind.RELAXATION:
            t1 = np.asarray(first_jump, dtype=float)
            lp0 = np.log(uu * math.exp(-g * T) + dd)
            lp1 = np.log(g * uu) - g * np.where(n > 0, t1, 0.0)
            out = np.where(n == 0, lp0, np.where(n == 1, lp1, -np.inf))
            return out
        lograte = np.log(g / 4) if g > 0 else -np.inf
        return np.where(n == 0, 0.0, n * lograte) - g * T / 4


def timing_score(spec: ChannelSpec, rho0, T: float, parameter: str, n_jumps, first_jump=None) -> np.ndarray:
    """d/d(theta) of the log occurrence density (zero for omega)."""
    n = np.asarray(n_jumps)
    if parameter == "omega":
        return np.zeros(n.shape)
    uu, dd, _ = _elements(rho0)
    g = spec.gamma
    if spec.kind is Kind.RELAXATION:
        e = math.exp(-g * T)
        t1 = np.where(n > 0, np.asarray(first_jump, dtype=float), 0.0)
        return np.where(n == 0, -T * uu * e / (uu * e + dd), 1 / g - t1)
    return n / g - T / 4


def trajectory_qfi(spec: ChannelSpec, rho0, T: float, parameter: str, n_jumps, net_time=None) -> np.ndarray:
    """Closed-form QFI of each normalized trajectory."""
    n = np.asarray(n_jumps)
    uu, dd, ud = _elements(rho0)
    r2 = abs(ud) ** 2
    g = spec.gamma
    if spec.kind is Kind.RELAXATION:
        e = math.exp(-g * T)
        p0 = uu * e + dd
        if parameter == "omega":
            jl = 4 * T * T * r2 * e / p0**2
        else:
            jl = T * T * uu * dd * e / p0**2
        return np.where(n == 0, jl, 0.0)
    if parameter == "gamma":
        return np.zeros(n.shape)
    if spec.kind is Kind.DEPHASING:
        return np.full(n.shape, 4 * T * T * r2)
    return 4 * r2 * np.asarray(net_time, dtype=float) ** 2


# ------------------------------------------------------------------ Table I


def _x_minus_1_plus_expneg(x: float) -> float:
    """x - 1 + e^{-x} without cancellation."""
    if abs(x) < 1e-2:
        return sum((-x) ** k / math.factorial(k) for k in range(2, 12))
    return x + math.expm1(-x)


def _ratio(num: float, den: float) -> float:
    if abs(den) <= 1e-15:
        if abs(num) <= 1e-15:
            return 0.0
        return math.inf
    return num / den


def _bloch_qfi(rho, drho) -> float:
    return float(fisher.qfi_batch(np.asarray(rho)[None], np.asarray(drho)[None])[0])


@dataclass(frozen=True)
class InfoTableRow:
    """One channel/parameter column of the information table.

    ``jump_qfi`` is NaN where the jump-trajectory QFI depends on the jump
    timings (spin flip, omega). ``conventional_qfi`` is the tabulated expression;
    ``conventional_qfi_exact`` is the exact QFI of the non-selective state and
    differs only for the spin-flip omega row, whose tabulated form is leading
    order in gamma/omega.
    """

    kind: Kind
    parameter: str
    jumpless_qfi: float
    jump_qfi: float
    cfi: float
    avg_traj_qfi: float
    total: float
    conventional_qfi: float
    conventional_qfi_exact: float
    valid: bool = True
    notes: tuple = field(default_factory=tuple)


def table1_row(spec: ChannelSpec, parameter: str, rho0, T: float, strict: bool = False) -> InfoTableRow:
    _check_parameter(parameter)
    uu, dd, ud = _elements(rho0)
    r2 = abs(ud) ** 2
    g, w, k = spec.gamma, spec.omega, spec.kind
    notes = []
    e = math.exp(-g * T)
    if parameter == "omega":
        if k is Kind.RELAXATION:
            p0 = uu * e + dd
            jl, jq, cf = 4 * T * T * r2 * e / p0**2, 0.0, 0.0
            total = 4 * T * T * r2 * e / p0
            conv = 4 * T * T * r2 * e
        elif k is Kind.SPIN_FLIP:
            jl, jq, cf = 4 * T * T * r2, math.nan, 0.0
            x = g * T / 2
            total = 4 * T * T * r2 if g == 0 else 32 * r2 / g**2 * _x_minus_1_plus_expneg(x)
            conv = 4 * T * T * r2 * math.exp(-g * T / 2)
            if not (w > 0 and g / w <= 0.01):
                notes.append("flip-channel conventional QFI is leading order in gamma/omega; needs gamma/omega <= 0.01")
        else:
            jl = jq = total = 4 * T * T * r2
            cf = 0.0
            conv = 4 * T * T * r2 * e
    else:
        if g <= 0:
            raise ValueError("information about gamma needs gamma > 0")
        if w != 0:
            notes.append("gamma-row expressions hold at omega = 0")
        if k is Kind.RELAXATION:
            p0 = uu * e + dd
            jl, jq = T * T * uu * dd * e / p0**2, 0.0
            total = uu * (-math.expm1(-g * T)) / g**2
            cf = total - T * T * uu * dd * e / p0
            conv = _ratio(T * T * uu * (uu - r2 * (uu * e + 1)) * e, uu * (1 - uu * e) - r2)
        else:
            if k is Kind.SPIN_FLIP:
                # rotate to the |+>, |-> basis, where the flip channel dephases
                pp = 0.5 + ud.real
                mm = 0.5 - ud.real
                pm2 = ((uu - dd) / 2) ** 2 + ud.imag**2
            else:
                pp, mm, pm2 = uu, dd, r2
            jl = jq = 0.0
            cf = total = T / (4 * g)
            conv = _ratio(T * T * pm2 * e * pp * mm, pp * mm - pm2 * e)
    rho_bar = nonselective_state(spec, rho0, T)
    conv_exact = conv
    if k is Kind.SPIN_FLIP and parameter == "omega":
        conv_exact = _bloch_qfi(rho_bar, nonselective_derivative(spec, rho0, T, "omega"))
    valid = not notes
    if strict and not valid:
        raise OutsideValidity("; ".join(notes))
    avg = total - cf
    return InfoTableRow(k, parameter, jl, jq, cf, avg, total, conv, conv_exact, valid, tuple(notes))


# --------------------------------------------------------- rates and costs


def average_cycle_time(rho0, gamma: float, T: float) -> float:
    """Mean duration of a relaxation-channel cycle that stops at the first detected jump."""
    uu, dd, _ = _elements(rho0)
    if gamma == 0:
        return T
    return uu / gamma * (-math.expm1(-gamma * T)) + dd * T


_ANY = None  # marks "any initial state is optimal"


def extraction_rate(spec: ChannelSpec, parameter: str, method: str, T: float):
    """Optimal information extraction rate and the initial state that attains it.

    Returns ``(rate, rho0)``; ``rho0`` is None when every initial state is optimal.
    Relaxation-channel MQT rates are per average cycle time (cycles stop at the
    first jump); all others are per T.
    """
    _check_parameter(parameter)
    method = method.lower()
    if method not in ("mqt", "conventional"):
        raise UnsupportedCombination(f"method must be 'mqt' or 'conventional', got {method!r}")
    g, k = spec.gamma, spec.kind
    gt = g * T
    mqt = method == "mqt"
    if parameter == "gamma" and g <= 0:
        raise UnsupportedCombination("rates about gamma need gamma > 0")
    if parameter == "omega":
        if k is Kind.RELAXATION:
            if mqt:
                if gt == 0:
                    return T, initial_state(0.5)
                rate = 4 * g * T * T / (math.sqrt(math.expm1(gt)) + math.sqrt(gt)) ** 2
                ratio = math.sqrt(-math.expm1(-gt) / (gt * math.exp(gt)))
                return rate, initial_state(1 / (1 + ratio))
            return T * math.exp(-gt), initial_state(0.5)
        if k is Kind.SPIN_FLIP:
            if mqt:
                rate = T if g == 0 else 8 / (g * g * T) * _x_minus_1_plus_expneg(gt / 2)
                return rate, initial_state(0.5)
            return T * math.exp(-gt / 2), initial_state(0.5)
        return (T if mqt else T * math.exp(-gt)), initial_state(0.5)
    if k is Kind.RELAXATION:
        if mqt:
            return 1 / g, initial_state(1.0)
        return T / math.expm1(gt), initial_state(1.0)
    if mqt:
        return 1 / (4 * g), _ANY
    # populations 1/2 and maximal coherence in the dephasing eigenbasis
    best = initial_state(1.0) if k is Kind.SPIN_FLIP else initial_state(0.5)
    return T / (4 * math.expm1(gt)), best


def long_time_rate(spec: ChannelSpec, parameter: str, method: str, T: float) -> float:
    """gamma*T >> 1 asymptote of :func:`extraction_rate`."""
    _check_parameter(parameter)
    g, k = spec.gamma, spec.kind
    mqt = method.lower() == "mqt"
    decay = T * math.exp(-g * T)
    if parameter == "omega":
        if k is Kind.RELAXATION:
            return 4 * g * T * decay if mqt else decay
        if k is Kind.SPIN_FLIP:
            return 4 / g if mqt else T * math.exp(-g * T / 2)
        return T if mqt else decay
    if k is Kind.RELAXATION:
        return 1 / g if mqt else decay
    return 1 / (4 * g) if mqt else decay / 4
