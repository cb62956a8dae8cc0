"""Dense linear algebra for small open quantum systems.

Vectorization is column-stacking throughout: ``vec(A @ rho @ B) = kron(B.T, A) @ vec(rho)``,
so the dissipator D[c] maps to ``kron(c.conj(), c) - (kron(I, c^+ c) + kron((c^+ c).T, I)) / 2``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonHermitian, NotPositive, TraceNotOne, WrongDim

MAX_DIM = 64

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
S_X = SIGMA_X / 2
S_Y = SIGMA_Y / 2
S_Z = SIGMA_Z / 2
# lowering operator |dn><up| with basis order (up, dn)
S_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)
PAULIS = (SIGMA_X, SIGMA_Y, SIGMA_Z)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


def as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=complex)


@dataclass(frozen=True)
class DensityMatrix:
    """Validated probe state. Build with :func:`make_density_matrix`."""

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.matrix, dtype=dtype)


def make_density_matrix(entries) -> DensityMatrix:
    m = np.asarray(entries, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"density matrix must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("density matrix has non-finite entries")
    asym = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if asym > 1e-8:
        raise NonHermitian(f"asymmetry {asym:.3g} exceeds 1e-8")
    m = (m + m.conj().T) / 2
    tr = np.trace(m).real
    if abs(tr - 1) > 1e-8:
        raise TraceNotOne(f"trace {tr!r} differs from 1 by more than 1e-8")
    lam = np.linalg.eigvalsh(m)[0]
    if lam < -1e-8:
        raise NotPositive(f"smallest eigenvalue {lam:.3g} < -1e-8")
    return DensityMatrix(_frozen(m))


def bloch_vector(rho) -> np.ndarray:
    m = as_matrix(rho)
    if m.shape != (2, 2):
        raise WrongDim(f"Bloch vector needs a qubit state, got shape {m.shape}")
    return np.array([np.trace(s @ m).real for s in PAULIS])


def from_bloch(n) -> DensityMatrix:
    n = np.asarray(n, dtype=float)
    if n.shape != (3,):
        raise WrongDim(f"Bloch vector must have 3 components, got shape {n.shape}")
    if np.linalg.norm(n) > 1 + 1e-12:
        raise NotPositive(f"|n| = {np.linalg.norm(n)!r} exceeds 1")
    m = (np.eye(2) + sum(c * s for c, s in zip(n, PAULIS))) / 2
    return DensityMatrix(_frozen(m))


def vec(rho) -> np.ndarray:
    return as_matrix(rho).reshape(-1, order="F")


def unvec(v, dim: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    d = dim if dim is not None else int(round(np.sqrt(v.shape[-1])))
    if d * d != v.shape[-1]:
        raise DimensionMismatch(f"vector of length {v.shape[-1]} is not a vectorized square matrix")
    # works for a leading batch axis as well
    return np.swapaxes(v.reshape(v.shape[:-1] + (d, d)), -1, -2)


def sandwich(a, b) -> np.ndarray:
    """Superoperator matrix of rho -> a @ rho @ b."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    return np.kron(b.T, a)


@dataclass(frozen=True)
class Superoperator:
    """Linear map on d x d matrices, stored as a d^2 x d^2 column-stacking matrix."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        d = int(round(np.sqrt(m.shape[0])))
        if m.ndim != 2 or m.shape[0] != m.shape[1] or d * d != m.shape[0]:
            raise DimensionMismatch(f"superoperator matrix has shape {m.shape}")
        if d > MAX_DIM:
            raise DimensionMismatch(f"Hilbert dimension {d} exceeds {MAX_DIM}")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return int(round(np.sqrt(self.matrix.shape[0])))

    def apply(self, rho) -> np.ndarray:
        m = as_matrix(rho)
        if m.shape != (self.dim, self.dim):
            raise DimensionMismatch(f"state shape {m.shape} vs superoperator dim {self.dim}")
        return unvec(self.matrix @ vec(m), self.dim)

    def __call__(self, rho) -> np.ndarray:
        return self.apply(rho)

    def _check(self, other: "Superoperator"):
        if self.dim != other.dim:
            raise DimensionMismatch(f"superoperator dims {self.dim} and {other.dim}")

    def __add__(self, other: "Superoperator") -> "Superoperator":
        self._check(other)
        return Superoperator(self.matrix + other.matrix)

    def __sub__(self, other: "Superoperator") -> "Superoperator":
        self._check(other)
        return Superoperator(self.matrix - other.matrix)

    def __neg__(self) -> "Superoperator":
        return Superoperator(-self.matrix)

    def __mul__(self, scalar) -> "Superoperator":
        return Superoperator(scalar * self.matrix)

    __rmul__ = __mul__

    def __matmul__(self, other: "Superoperator") -> "Superoperator":
        self._check(other)
        return Superoperator(self.matrix @ other.matrix)

    @classmethod
    def identity(cls, dim: int) -> "Superoperator":
        return cls(np.eye(dim * dim))

    @classmethod
    def hamiltonian(cls, h) -> "Superoperator":
        """rho -> -i[h, rho]."""
        h = np.asarray(h, dtype=complex)
        eye = np.eye(h.shape[0])
        return cls(-1j * (sandwich(h, eye) - sandwich(eye, h)))

    @classmethod
    def jump(cls, c, rate: float = 1.0) -> "Superoperator":
        """rho -> rate * c rho c^+."""
        c = np.asarray(c, dtype=complex)
        return cls(rate * sandwich(c, c.conj().T))

    @classmethod
    def nonhermitian(cls, h_eff) -> "Superoperator":
        """rho -> -i(h_eff rho - rho h_eff^+)."""
        h_eff = np.asarray(h_eff, dtype=complex)
        eye = np.eye(h_eff.shape[0])
        return cls(-1j * (sandwich(h_eff, eye) - sandwich(eye, h_eff.conj().T)))

    @classmethod
    def dissipator(cls, c, rate: float = 1.0) -> "Superoperator":
        c = np.asarray(c, dtype=complex)
        eye = np.eye(c.shape[0])
        cdc = c.conj().T @ c
        return cls(rate * (np.kron(c.conj(), c) - 0.5 * (np.kron(eye, cdc) + np.kron(cdc.T, eye))))

    @classmethod
    def lindblad(cls, h, jumps: Sequence[tuple[float, np.ndarray]] = ()) -> "Superoperator":
        out = cls.hamiltonian(h)
        for rate, c in jumps:
            out = out + cls.dissipator(c, rate)
        return out


def matrix_exponential(m, t: float = 1.0) -> np.ndarray:
    """exp(m t). Unitary Schur diagonalization for normal m, scaling-and-squaring Pade otherwise."""
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"matrix exponential needs a square matrix, got {m.shape}")
    if m.shape[0] > MAX_DIM * MAX_DIM:
        raise DimensionMismatch(f"matrix of size {m.shape[0]} exceeds {MAX_DIM**2}")
    if t == 0:
        return np.eye(m.shape[0], dtype=complex)
    tri, z = scipy.linalg.schur(m, output="complex")
    # normal iff the Schur factor is diagonal; the commutator test is quadratic in the
    # non-normal part and would wave through small but real couplings
    if np.linalg.norm(np.triu(tri, 1)) <= 1e-14 * max(np.linalg.norm(m), 1.0):
        return (z * np.exp(np.diag(tri) * t)) @ z.conj().T
    return scipy.linalg.expm(m * t)


def evolve(generator: Superoperator, rho, t: float) -> np.ndarray:
    """e^{generator t} applied to rho (any Hermitian, possibly unnormalized, matrix)."""
    if not np.isfinite(t) or t < 0:
        raise ValueError(f"evolution time must be finite and >= 0, got {t}")
    m = as_matrix(rho)
    if m.shape != (generator.dim, generator.dim):
        raise DimensionMismatch(f"state shape {m.shape} vs generator dim {generator.dim}")
    out = unvec(matrix_exponential(generator.matrix, t) @ vec(m), generator.dim)
    return (out + out.conj().T) / 2


def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z, accurate near z = 0."""
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    big = np.abs(z) > 1e-5
    out[big] = np.expm1(z[big]) / z[big]
    small = ~big
    zs = z[small]
    out[small] = 1 + zs / 2 + zs * zs / 6 + zs**3 / 24
    return out


class Propagator:
    """Batched e^{A t} and its derivative along a direction B, d/ds e^{(A + sB) t} at s = 0.

    Uses the eigendecomposition of A (divided-difference formula for the
    derivative) when A is well-conditioned diagonalizable, and falls back to
    per-time Pade / Frechet evaluation otherwise.
    """

    def __init__(self, a, b=None):
        self.a = np.asarray(a, dtype=complex)
        self.b = None if b is None else np.asarray(b, dtype=complex)
        lam, v = np.linalg.eig(self.a)
        self._diag = np.linalg.cond(v) < 1e6
        if self._diag:
            self.lam = lam
            self.v = v
            self.vinv = np.linalg.inv(v)
            if self.b is not None:
                self.bhat = self.vinv @ self.b @ self.v

    def expm(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if not self._diag:
            return np.array([scipy.linalg.expm(self.a * t) for t in times.ravel()]).reshape(
                times.shape + self.a.shape
            )
        e = np.exp(np.multiply.outer(times, self.lam))
        return np.einsum("ij,...j,jk->...ik", self.v, e, self.vinv)

    def expm_and_derivative(self, times) -> tuple[np.ndarray, np.ndarray]:
        if self.b is None:
            raise ValueError("no derivative direction given")
        times = np.asarray(times, dtype=float)
        if not self._diag:
            pairs = [scipy.linalg.expm_frechet(self.a * t, self.b * t) for t in times.ravel()]
            shape = times.shape + self.a.shape
            return (
                np.array([p[0] for p in pairs]).reshape(shape),
                np.array([p[1] for p in pairs]).reshape(shape),
            )
        t = times[..., None, None]
        li = self.lam[:, None]
        lj = self.lam[None, :]
        # Phi_ij = (e^{li t} - e^{lj t}) / (li - lj) = t e^{lj t} phi1((li - lj) t)
        phi = t * np.exp(lj * t) * _phi1((li - lj) * t)
        e = np.exp(np.multiply.outer(times, self.lam))
        u = np.einsum("ij,...j,jk->...ik", self.v, e, self.vinv)
        du = self.v @ (self.bhat * phi) @ self.vinv
        return u, du


def partial_trace(rho_joint, dims: Sequence[int], keep) -> np.ndarray:
    m = as_matrix(rho_joint)
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    if m.shape != (total, total):
        raise DimensionMismatch(f"joint state shape {m.shape} vs subsystem dims {dims}")
    keep = sorted({int(k) for k in np.atleast_1d(keep)})
    if any(k < 0 or k >= len(dims) for k in keep):
        raise DimensionMismatch(f"keep indices {keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    t = m.reshape(dims + dims)
    traced = [i for i in range(n) if i not in keep]
    # contract traced subsystems pairwise, highest index first so axes stay valid
    for i in sorted(traced, reverse=True):
        cur = t.ndim // 2
        t = np.trace(t, axis1=i, axis2=i + cur)
    dk = int(np.prod([dims[k] for k in keep])) if keep else 1
    return t.reshape(dk, dk)


def eig_hermitian(m) -> tuple[np.ndarray, np.ndarray]:
    m = as_matrix(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {m.shape}")
    asym = np.max(np.abs(m - m.conj().T)) if m.size else 0.0
    if asym > 1e-10:
        raise NonHermitian(f"asymmetry {asym:.3g} exceeds 1e-10")
    return np.linalg.eigh((m + m.conj().T) / 2)
