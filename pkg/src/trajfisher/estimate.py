"""Likelihood-based estimation from simulated monitoring records.

A record is the jump history of one measurement cycle (jump count, first
jump time and net phase time summarize it for the three qubit channels) plus,
optionally, the outcome of a projective measurement of the final conditional
state in the eigenbasis of its SLD at a reference parameter value.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from . import channels, fisher, mcsim, rng
from .channels import ChannelSpec, Kind
from .errors import AllZero, BoundaryMaximum, UnsupportedCombination, ZeroLikelihood
from .qstate import as_matrix

MIN_GRID = 64
DEFAULT_GRID = 257


# ------------------------------------------------------------------ priors


@dataclass(frozen=True)
class Flat:
    lo: float
    hi: float

    def logpdf(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.where((theta >= self.lo) & (theta <= self.hi), 0.0, -np.inf)


@dataclass(frozen=True)
class Gaussian:
    theta0: float
    sigma0: float

    def logpdf(self, theta):
        return -0.5 * ((np.asarray(theta, dtype=float) - self.theta0) / self.sigma0) ** 2


# ------------------------------------------------------------------- model


@dataclass(frozen=True)
class MonitoringModel:
    """Channel, estimated parameter and how each cycle is read out.

    ``scheme`` is "mqt" (jump record plus final measurement of the conditional
    state) or "conventional" (final measurement of the unmonitored state only).
    ``final_measurement`` None means: measure only when the conditional states
    carry information about the parameter.
    """

    kind: Kind
    parameter: str
    rho0: np.ndarray
    T: float
    omega: float = 0.0
    gamma: float = 1.0
    scheme: str = "mqt"
    final_measurement: bool | None = None
    theta_ref: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        object.__setattr__(self, "rho0", as_matrix(self.rho0))
        if self.parameter not in channels.PARAMETERS:
            raise ValueError(f"unknown parameter {self.parameter!r}")
        if self.scheme not in ("mqt", "conventional"):
            raise ValueError(f"scheme must be 'mqt' or 'conventional', got {self.scheme!r}")

    @property
    def base_spec(self) -> ChannelSpec:
        return ChannelSpec(self.kind, self.omega, self.gamma)

    @property
    def theta_true(self) -> float:
        return self.base_spec.value_of(self.parameter)

    @property
    def reference(self) -> float:
        return self.theta_true if self.theta_ref is None else self.theta_ref

    def spec(self, theta: float) -> ChannelSpec:
        return self.base_spec.with_param(self.parameter, theta)

    @property
    def measures_final(self) -> bool:
        if self.scheme == "conventional":
            return True
        if self.final_measurement is not None:
            return self.final_measurement
        return self.parameter == "omega" or self.kind is Kind.RELAXATION

    def fisher_information(self) -> float:
        """Per-cycle information the scheme can reach (analytic)."""
        row = channels.table1_row(self.base_spec, self.parameter, self.rho0, self.T)
        if self.scheme == "conventional":
            return row.conventional_qfi_exact
        return row.total if self.measures_final else row.cfi

    def conventional_information(self) -> float:
        return channels.table1_row(self.base_spec, self.parameter, self.rho0, self.T).conventional_qfi_exact


# ----------------------------------------------------------------- records


@dataclass(frozen=True)
class RecordBatch:
    """Columnar records; ``first_jump`` is NaN without jumps, ``outcome`` is -1 without a final measurement."""

    n_jumps: np.ndarray
    first_jump: np.ndarray
    net_time: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.n_jumps, dtype=np.int64)
        object.__setattr__(self, "n_jumps", n)
        for name in ("first_jump", "net_time"):
            object.__setattr__(self, name, np.broadcast_to(np.asarray(getattr(self, name), dtype=float), n.shape).copy())
        object.__setattr__(self, "outcome", np.broadcast_to(np.asarray(self.outcome, dtype=np.int64), n.shape).copy())

    def __len__(self):
        return len(self.n_jumps)

    def __getitem__(self, item) -> "RecordBatch":
        return RecordBatch(self.n_jumps[item], self.first_jump[item], self.net_time[item], self.outcome[item])

    @classmethod
    def concat(cls, batches) -> "RecordBatch":
        return cls(*(np.concatenate([getattr(b, f) for b in batches]) for f in ("n_jumps", "first_jump", "net_time", "outcome")))

    @classmethod
    def single(cls, n_jumps=0, first_jump=np.nan, net_time=np.nan, outcome=-1) -> "RecordBatch":
        return cls(np.array([n_jumps]), np.array([first_jump]), np.array([net_time]), np.array([outcome]))


def measurement_projectors(model: MonitoringModel, records: RecordBatch) -> np.ndarray:
    """SLD eigenprojectors at the reference value, shape (K, d, d, d) (outcome axis second)."""
    spec = model.spec(model.reference)
    if model.scheme == "conventional":
        rho = channels.nonselective_state(spec, model.rho0, model.T)[None]
        drho = channels.nonselective_derivative(spec, model.rho0, model.T, model.parameter)[None]
    else:
        rho, drho = channels.conditional_states(
            spec, model.rho0, model.T, records.n_jumps, records.net_time, parameter=model.parameter
        )
    _, vecs = np.linalg.eigh(fisher.sld_batch(rho, drho))
    proj = np.einsum("...ik,...jk->...kij", vecs, vecs.conj())
    return np.broadcast_to(proj, (len(records),) + proj.shape[-3:])


def _final_states(model: MonitoringModel, theta: float, records: RecordBatch) -> np.ndarray:
    spec = model.spec(theta)
    if model.scheme == "conventional":
        return np.broadcast_to(channels.nonselective_state(spec, model.rho0, model.T), (len(records), 2, 2))
    return channels.conditional_states(spec, model.rho0, model.T, records.n_jumps, records.net_time)


def log_likelihood_batch(records: RecordBatch, theta: float, model: MonitoringModel, projectors=None) -> np.ndarray:
    """Per-record exact log probability (density for jump times); -inf for impossible records."""
    if model.parameter == "gamma" and theta < 0:
        return np.full(len(records), -np.inf)
    spec = model.spec(theta)
    out = np.zeros(len(records))
    with np.errstate(divide="ignore", invalid="ignore"):
        if model.scheme == "mqt":
            out += channels.log_density(spec, model.rho0, model.T, records.n_jumps, records.first_jump)
        if model.measures_final:
            proj = measurement_projectors(model, records) if projectors is None else projectors
            rho = _final_states(model, theta, records)
            k = records.outcome
            chosen = proj[np.arange(len(records)), k]
            p = np.einsum("kij,kji->k", chosen, rho).real
            out += np.log(np.clip(p, 0.0, None))
    return np.where(np.isnan(out), -np.inf, out)


def log_likelihood(record: RecordBatch, theta: float, model: MonitoringModel) -> float:
    if len(record) != 1:
        raise ValueError("log_likelihood takes a single record; use log_likelihood_batch for many")
    val = float(log_likelihood_batch(record, theta, model)[0])
    if not np.isfinite(val):
        raise ZeroLikelihood(f"record has zero probability at {model.parameter} = {theta!r}")
    return val


def _record_key(model: MonitoringModel, records: RecordBatch) -> np.ndarray:
    cols = [records.n_jumps.astype(float), records.outcome.astype(float)]
    if model.scheme == "mqt" and model.kind is Kind.RELAXATION:
        cols.append(np.nan_to_num(records.first_jump, nan=-1.0))
    if model.scheme == "mqt" and model.kind is Kind.SPIN_FLIP and model.measures_final:
        cols.append(records.net_time)
    if model.scheme == "conventional":
        cols = [records.outcome.astype(float)]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class _CompressedRecords:
    records: RecordBatch
    counts: np.ndarray
    projectors: np.ndarray | None

    def loglik(self, theta: float, model: MonitoringModel) -> float:
        ll = log_likelihood_batch(self.records, theta, model, self.projectors)
        if np.any(np.isneginf(ll)):
            return -np.inf
        return float(np.dot(self.counts, ll))


def _compress(model: MonitoringModel, records: RecordBatch) -> _CompressedRecords:
    _, first, counts = np.unique(_record_key(model, records), axis=0, return_index=True, return_counts=True)
    uniq = records[first]
    proj = measurement_projectors(model, uniq) if model.measures_final else None
    return _CompressedRecords(uniq, counts, proj)


# --------------------------------------------------------------- posterior


@dataclass(frozen=True)
class PosteriorGrid:
    theta_values: np.ndarray
    log_density: np.ndarray
    prior: Flat | Gaussian
    updates: tuple = field(default=(), repr=False)

    def __post_init__(self):
        th = np.asarray(self.theta_values, dtype=float)
        if th.ndim != 1 or th.size < MIN_GRID:
            raise ValueError(f"posterior grid needs at least {MIN_GRID} points")
        if np.any(np.diff(th) <= 0):
            raise ValueError("grid values must be strictly ascending")
        object.__setattr__(self, "theta_values", th)
        object.__setattr__(self, "log_density", np.asarray(self.log_density, dtype=float))

    @classmethod
    def create(cls, theta_values, prior: Flat | Gaussian | None = None) -> "PosteriorGrid":
        th = np.asarray(theta_values, dtype=float)
        prior = Flat(th[0], th[-1]) if prior is None else prior
        return cls(th, prior.logpdf(th), prior)

    @classmethod
    def around(cls, centre: float, half_width: float, points: int = DEFAULT_GRID, prior=None,
               lower: float | None = None) -> "PosteriorGrid":
        lo = centre - half_width
        if lower is not None:
            lo = max(lo, lower)
        return cls.create(np.linspace(lo, centre + half_width, points), prior)

    @property
    def probabilities(self) -> np.ndarray:
        total = logsumexp(self.log_density)
        if not np.isfinite(total):
            raise AllZero("posterior vanishes on the whole grid")
        return np.exp(self.log_density - total)

    def log_posterior_at(self, theta: float) -> float:
        val = float(self.prior.logpdf(theta))
        for comp, model in self.updates:
            if val == -np.inf:
                break
            val += comp.loglik(theta, model)
        return val


def update_posterior(grid: PosteriorGrid, records: RecordBatch, model: MonitoringModel) -> PosteriorGrid:
    comp = _compress(model, records)
    ll = np.array([comp.loglik(th, model) for th in grid.theta_values])
    new = grid.log_density + ll
    if not np.any(np.isfinite(new)):
        raise AllZero("every grid point has zero posterior probability")
    return PosteriorGrid(grid.theta_values, new, grid.prior, grid.updates + ((comp, model),))


def mle(grid: PosteriorGrid) -> float:
    """Posterior peak (flat prior: maximum likelihood), refined inside the bracketing grid cell.

    Ties resolve to the lowest grid value.
    """
    ld = grid.log_density
    if not np.any(np.isfinite(ld)):
        raise AllZero("posterior vanishes on the whole grid")
    i = int(np.argmax(ld))
    th = grid.theta_values
    if i == 0 or i == len(th) - 1:
        raise BoundaryMaximum(f"maximum at grid edge {th[i]!r}; widen the grid")
    if not grid.updates:
        return float(th[i])
    span = th[-1] - th[0]
    a, b, c = th[i - 1], th[i], th[i + 1]
    f = lambda x: -grid.log_posterior_at(x)
    fb = f(b)
    if not (fb < f(a) and fb < f(c)):
        return float(b)
    scale = max(abs(a) + abs(c), span)
    res = minimize_scalar(f, bracket=(a, b, c), method="golden", options={"xtol": 1e-8 * span / scale})
    x = float(res.x)
    return x if a <= x <= c and res.fun <= fb else float(b)


def bayes(grid: PosteriorGrid) -> tuple[float, float]:
    p = grid.probabilities
    th = grid.theta_values
    mean = float(np.dot(p, th))
    return mean, float(math.sqrt(max(np.dot(p, (th - mean) ** 2), 0.0)))


# -------------------------------------------------------------- simulation


def simulate_records(model: MonitoringModel, nu: int, seed: int, start: int = 0, workers: int = 1) -> RecordBatch:
    """nu records at the model's true parameter, using trajectory indices start .. start+nu-1."""
    idx = np.arange(start, start + nu, dtype=np.uint64)
    if model.scheme == "conventional":
        rec = RecordBatch(np.zeros(nu, dtype=np.int64), np.nan, np.nan, 0)
        states = _final_states(model, model.theta_true, rec)
    else:
        batch = mcsim.sample_batch(model.base_spec, model.rho0, model.T, nu, seed, workers, start)
        rec = RecordBatch(batch.n_jumps, batch.first_jump, batch.net_time, -1)
        states = batch.final_states
    if not model.measures_final:
        return rec
    proj = measurement_projectors(model, rec)
    p0 = np.einsum("kij,kji->k", proj[:, 0], states).real
    u = rng.uniforms(seed, idx, 0, rng.MEASURE)
    return RecordBatch(rec.n_jumps, rec.first_jump, rec.net_time, np.where(u < p0, 0, 1))


def measurement_cfi(model: MonitoringModel, records: RecordBatch, theta: float | None = None) -> np.ndarray:
    """CFI of the final projective measurement for each record's conditional state."""
    theta = model.reference if theta is None else theta
    spec = model.spec(theta)
    if model.scheme == "conventional":
        rho = channels.nonselective_state(spec, model.rho0, model.T)[None]
        drho = channels.nonselective_derivative(spec, model.rho0, model.T, model.parameter)[None]
    else:
        rho, drho = channels.conditional_states(spec, model.rho0, model.T, records.n_jumps, records.net_time, parameter=model.parameter)
    proj = measurement_projectors(model, records)
    p = np.einsum("kaij,kji->ka", proj, np.broadcast_to(rho, (len(records), 2, 2))).real
    dp = np.einsum("kaij,kji->ka", proj, np.broadcast_to(drho, (len(records), 2, 2))).real
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > fisher.ZERO_PROB, dp**2 / p, 0.0)
    return terms.sum(axis=1)


# ---------------------------------------------------------------- harness


@dataclass(frozen=True)
class CrbReport:
    theta_star: float
    nu: int
    replicates: int
    seed: int
    fisher_info: float
    conventional_info: float
    bound: float
    conventional_bound: float
    mle_mean: float
    mle_std: float
    bayes_mean: float
    bayes_width: float
    estimates: np.ndarray = field(repr=False)

    @property
    def ratio(self) -> float:
        """Empirical spread of the MLE over the Cramer-Rao bound."""
        return self.mle_std / self.bound

    @property
    def mean_z(self) -> float:
        """Bias of the mean estimate in units of its standard error."""
        return (self.mle_mean - self.theta_star) / (self.mle_std / math.sqrt(self.replicates))


def _replicate(args):
    model, nu, seed, r, points, half_width, lower = args
    records = simulate_records(model, nu, seed, start=r * nu)
    grid = update_posterior(PosteriorGrid.around(model.theta_true, half_width, points, lower=lower), records, model)
    b = bayes(grid)
    return mle(grid), b[0], b[1]


def crb_harness(model: MonitoringModel, nu: int, replicates: int, seed: int, workers: int = 1,
                points: int = DEFAULT_GRID, half_width: float | None = None) -> CrbReport:
    """Run ``replicates`` synthetic experiments of ``nu`` cycles each and compare the MLE spread with the bound."""
    info = model.fisher_information()
    if not info > 0:
        raise UnsupportedCombination("the model carries no information about the parameter")
    bound = 1 / math.sqrt(nu * info)
    conv = model.conventional_information()
    half_width = 10 * bound if half_width is None else half_width
    lower = 0.0 if model.parameter == "gamma" else None
    tasks = [(model, nu, seed, r, points, half_width, lower) for r in range(replicates)]
    if workers > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            res = np.array(list(pool.map(_replicate, tasks)))
    else:
        res = np.array([_replicate(t) for t in tasks])
    est = res[:, 0]
    return CrbReport(
        model.theta_true, nu, replicates, seed, info, conv, bound,
        1 / math.sqrt(nu * conv) if conv > 0 else math.inf,
        float(est.mean()), float(est.std(ddof=1)) if replicates > 1 else 0.0,
        float(res[:, 1].mean()), float(res[:, 2].mean()), est,
    )
