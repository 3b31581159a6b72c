"""Lattice configuration space, quantum states and Hamiltonians.

Conventions
-----------
Units have hbar = 1.  A configuration of ``N`` particles on a periodic ring of
``M`` points with spacing ``a`` is flattened in C order (particle 0 is the
slowest index), giving ``d = M**N`` grid configurations.

Wave functions and density-matrix kernels are stored with their continuum
normalisation, i.e. ``sum |psi(q)|^2 a^N = 1`` and ``sum W(q, q) a^N = 1``.
The cell measure ``a^N`` is carried as ``space.measure``; ``.vector`` and
``.matrix`` give the unit-norm / unit-trace finite-dimensional versions on
which ordinary linear algebra applies.  Abstract (non-lattice) states use
``space=None`` and measure 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence, Union

import numpy as np

from .errors import PositivityError, ResourceError, ValidationError

HBAR = 1.0
MAX_DENSE_DIM = 4096

NORM_TOL = 1e-10
HERMITIAN_TOL = 1e-10
NEGATIVITY_TOL = 1e-8


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LatticeSpace:
    """Periodic 1D lattice per particle.

    ``couplings`` holds kinetic cross terms ``(i, j, g)`` adding ``g p_i p_j``
    to the Hamiltonian, i.e. off-diagonal entries of the inverse-mass matrix.
    ``p_i`` is the central difference and ``p_j`` the spectral derivative, so a
    momentum eigenstate of particle ``i`` translates particle ``j`` rigidly.
    They are used by the measurement pointer and default to none.
    """

    particles: int
    points: int
    spacing: float = 1.0
    masses: tuple = None
    couplings: tuple = ()
    periodic: bool = field(default=True, init=False)

    def __post_init__(self):
        if self.particles < 1:
            raise ValidationError("need at least one particle")
        if self.points < 2:
            raise ValidationError("need at least two points per particle")
        if not self.spacing > 0:
            raise ValidationError("spacing must be positive")
        masses = (1.0,) * self.particles if self.masses is None else tuple(float(m) for m in self.masses)
        if len(masses) != self.particles or min(masses) <= 0:
            raise ValidationError("need one positive mass per particle")
        object.__setattr__(self, "masses", masses)
        couplings = tuple((int(i), int(j), float(g)) for i, j, g in self.couplings)
        for i, j, _ in couplings:
            if i == j or not (0 <= i < self.particles and 0 <= j < self.particles):
                raise ValidationError(f"bad coupling pair ({i}, {j})")
        object.__setattr__(self, "couplings", couplings)

    @property
    def dim(self) -> int:
        return self.points ** self.particles

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.particles

    @property
    def length(self) -> float:
        return self.points * self.spacing

    @property
    def measure(self) -> float:
        return self.spacing ** self.particles

    @cached_property
    def grid(self) -> np.ndarray:
        """Single-particle coordinates ``q_j = j a``."""
        return _frozen(np.arange(self.points) * self.spacing)

    @cached_property
    def coordinates(self) -> np.ndarray:
        """``(d, N)`` array of configuration coordinates."""
        idx = np.indices(self.shape).reshape(self.particles, -1).T
        return _frozen(idx * self.spacing)

    @cached_property
    def inverse_mass(self) -> np.ndarray:
        g = np.diag([1.0 / m for m in self.masses])
        for i, j, c in self.couplings:
            g[i, j] += c
            g[j, i] += c
        return _frozen(g)

    def neighbor(self, particle: int, step: int) -> np.ndarray:
        """Flat index of the configuration shifted by ``step`` cells along one particle."""
        idx = np.indices(self.shape).reshape(self.particles, -1)
        idx[particle] = (idx[particle] + step) % self.points
        return np.ravel_multi_index(tuple(idx), self.shape)

    def cell_of(self, positions: np.ndarray) -> np.ndarray:
        """Nearest-grid-point cell indices ``(n, N)`` for continuous positions."""
        positions = np.atleast_2d(positions)
        return np.rint(positions / self.spacing).astype(np.int64) % self.points

    def flat_index(self, cells: np.ndarray) -> np.ndarray:
        cells = np.atleast_2d(cells)
        return np.ravel_multi_index(tuple(cells.T), self.shape)

    def wrap(self, positions: np.ndarray) -> np.ndarray:
        return np.mod(positions, self.length)

    def require_dense(self):
        if self.dim > MAX_DENSE_DIM:
            raise ResourceError(f"dimension {self.dim} exceeds dense guard {MAX_DENSE_DIM}")

    def sub(self, particles: Sequence[int]) -> "LatticeSpace":
        """Space of a subset of particles (kinetic couplings dropped)."""
        return LatticeSpace(len(particles), self.points, self.spacing,
                            tuple(self.masses[p] for p in particles))


def _measure(space) -> float:
    return 1.0 if space is None else space.measure


@dataclass(frozen=True, eq=False)
class PureState:
    """Wave function sampled on the configuration grid."""

    amplitudes: np.ndarray
    space: LatticeSpace = None

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).ravel()
        if self.space is not None and amp.size != self.space.dim:
            raise ValidationError(f"expected {self.space.dim} amplitudes, got {amp.size}")
        norm = np.sum(np.abs(amp) ** 2) * _measure(self.space)
        if abs(norm - 1) > NORM_TOL:
            raise ValidationError(f"state not normalised (norm^2 = {norm:.3e})")
        object.__setattr__(self, "amplitudes", _frozen(amp))

    @classmethod
    def from_values(cls, values, space: LatticeSpace = None) -> "PureState":
        """Normalise arbitrary grid values into a state."""
        values = np.asarray(values, dtype=complex).ravel()
        norm = np.sqrt(np.sum(np.abs(values) ** 2) * _measure(space))
        if norm == 0:
            raise ValidationError("cannot normalise the zero vector")
        return cls(values / norm, space)

    @classmethod
    def from_function(cls, space: LatticeSpace, fn: Callable[..., np.ndarray]) -> "PureState":
        """Sample ``fn(q_1, ..., q_N)`` on the grid and normalise."""
        coords = space.coordinates
        return cls.from_values(fn(*coords.T), space)

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    @property
    def measure(self) -> float:
        return _measure(self.space)

    @property
    def vector(self) -> np.ndarray:
        """Unit-norm coefficient vector."""
        return self.amplitudes * np.sqrt(self.measure)

    @property
    def probabilities(self) -> np.ndarray:
        """Probability of each grid cell."""
        return np.abs(self.amplitudes) ** 2 * self.measure

    def with_vector(self, vector: np.ndarray) -> "PureState":
        return PureState.from_values(np.asarray(vector) / np.sqrt(self.measure), self.space)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Density-matrix kernel ``W(q, q')`` on the configuration grid."""

    entries: np.ndarray
    space: LatticeSpace = None

    def __post_init__(self):
        w = np.asarray(self.entries, dtype=complex)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValidationError("density matrix must be square")
        if self.space is not None and w.shape[0] != self.space.dim:
            raise ValidationError(f"expected dimension {self.space.dim}, got {w.shape[0]}")
        mu = _measure(self.space)
        scale = max(np.max(np.abs(w)) * mu, 1.0)
        if np.max(np.abs(w - w.conj().T)) * mu > HERMITIAN_TOL * scale:
            raise ValidationError("density matrix not Hermitian")
        tr = np.trace(w).real * mu
        if abs(tr - 1) > NORM_TOL:
            raise ValidationError(f"density matrix trace {tr!r} != 1")
        object.__setattr__(self, "entries", _frozen(w))

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, space: LatticeSpace = None,
                    renormalize: bool = False) -> "DensityMatrix":
        """Build from a unit-trace matrix (the kernel times the cell measure)."""
        matrix = np.asarray(matrix, dtype=complex)
        matrix = 0.5 * (matrix + matrix.conj().T)
        if renormalize:
            matrix = matrix / np.trace(matrix).real
        return cls(matrix / _measure(space), space)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def measure(self) -> float:
        return _measure(self.space)

    @property
    def matrix(self) -> np.ndarray:
        """Unit-trace matrix (kernel times cell measure)."""
        return self.entries * self.measure

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def validate(self) -> "DensityMatrix":
        """Full invariant check including positivity (costs an eigendecomposition)."""
        if self.min_eigenvalue() < -NEGATIVITY_TOL:
            raise PositivityError("density matrix has negative eigenvalues")
        return self


State = Union[PureState, DensityMatrix]


@dataclass(frozen=True, eq=False)
class Hamiltonian:
    """Dense Hermitian Hamiltonian on a lattice space."""

    matrix: np.ndarray
    space: LatticeSpace
    potential: np.ndarray = None

    def __post_init__(self):
        h = np.asarray(self.matrix)
        if h.shape != (self.space.dim, self.space.dim):
            raise ValidationError("Hamiltonian shape does not match the space")
        if np.max(np.abs(h - h.conj().T), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(h))):
            raise ValidationError("Hamiltonian not Hermitian")
        object.__setattr__(self, "matrix", _frozen(h))
        if self.potential is not None:
            object.__setattr__(self, "potential", _frozen(np.asarray(self.potential, dtype=float)))


def _ring_operators(points: int, spacing: float):
    shift = np.roll(np.eye(points), 1, axis=1)  # (shift @ f)[j] = f[j+1]
    laplacian = (shift + shift.T - 2 * np.eye(points)) / spacing ** 2
    derivative = (shift - shift.T) / (2 * spacing)
    return laplacian, derivative


def spectral_derivative(points: int, spacing: float) -> np.ndarray:
    """Real antisymmetric Fourier derivative matrix (Nyquist mode dropped)."""
    q = 2 * np.pi * np.fft.fftfreq(points, d=spacing)
    if points % 2 == 0:
        q[points // 2] = 0.0
    return np.real(np.fft.ifft(1j * q[:, None] * np.fft.fft(np.eye(points), axis=0), axis=0))


def _embed(op: np.ndarray, particle: int, particles: int) -> np.ndarray:
    out = np.ones((1, 1))
    for p in range(particles):
        out = np.kron(out, op if p == particle else np.eye(op.shape[0]))
    return out


def build_hamiltonian(space: LatticeSpace, potential=None) -> Hamiltonian:
    """Kinetic energy (periodic 3-point Laplacian per particle) plus diagonal potential.

    ``potential`` is ``None``, an array over the ``d`` configurations, or a
    callable ``V(q_1, ..., q_N)`` evaluated on the grid.  Kinetic couplings
    from ``space.couplings`` contribute ``-g hbar^2 D_i D_j`` with ``D`` the
    central difference.
    """
    space.require_dense()
    lap, der = _ring_operators(space.points, space.spacing)
    spec = spectral_derivative(space.points, space.spacing)
    n = space.particles
    h = np.zeros((space.dim, space.dim))
    for i, m in enumerate(space.masses):
        h -= HBAR ** 2 / (2 * m) * _embed(lap, i, n)
    for i, j, g in space.couplings:
        h -= g * HBAR ** 2 * (_embed(der, i, n) @ _embed(spec, j, n))
    if potential is None:
        v = np.zeros(space.dim)
    elif callable(potential):
        v = np.asarray(potential(*space.coordinates.T), dtype=float)
        v = np.broadcast_to(v, (space.dim,)).copy()
    else:
        v = np.asarray(potential, dtype=float).ravel()
    if v.shape != (space.dim,) or not np.all(np.isfinite(v)):
        raise ValidationError("potential must be finite at every grid point")
    h[np.diag_indices(space.dim)] += v
    return Hamiltonian(h, space, v)


def pure_to_density(psi: PureState) -> DensityMatrix:
    """``|psi><psi|`` as a kernel."""
    a = psi.amplitudes
    return DensityMatrix(np.outer(a, a.conj()), psi.space)


def mix_density(pairs: Iterable) -> DensityMatrix:
    """``sum p_i |psi_i><psi_i|`` from ``(weight, PureState)`` pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValidationError("empty mixture")
    weights = np.array([float(p) for p, _ in pairs])
    if np.any(weights < 0):
        raise ValidationError("mixture weights must be non-negative")
    if abs(weights.sum() - 1) > NORM_TOL:
        raise ValidationError(f"mixture weights sum to {weights.sum()!r}")
    space = pairs[0][1].space
    amps = np.stack([psi.amplitudes for _, psi in pairs], axis=1)
    w = (amps * weights) @ amps.conj().T
    return DensityMatrix(w, space)


def as_density(state: State) -> DensityMatrix:
    return pure_to_density(state) if isinstance(state, PureState) else state


def diagonal_distribution(state: State) -> np.ndarray:
    """Probability of each grid cell, ``W(q, q) a^N`` (``|psi|^2 a^N`` for pure states)."""
    if isinstance(state, PureState):
        return state.probabilities
    p = np.real(np.diagonal(state.entries)) * state.measure
    if np.min(p) < -NEGATIVITY_TOL:
        raise PositivityError(f"negative diagonal entry {np.min(p):.3e}")
    return np.clip(p, 0.0, None)


def _check_same(w1: DensityMatrix, w2: DensityMatrix):
    if w1.dim != w2.dim:
        raise ValidationError(f"dimension mismatch: {w1.dim} vs {w2.dim}")


def trace_distance(w1: State, w2: State) -> float:
    """Half the trace norm of the difference."""
    w1, w2 = as_density(w1), as_density(w2)
    _check_same(w1, w2)
    diff = w1.matrix - w2.matrix
    ev = np.linalg.eigvalsh(0.5 * (diff + diff.conj().T))
    return float(min(1.0, 0.5 * np.sum(np.abs(ev))))


def purity(state: State) -> float:
    """``tr(W^2)``."""
    if isinstance(state, PureState):
        return 1.0
    m = state.matrix
    return float(np.sum(np.abs(m) ** 2))


def expectation(state: State, operator: np.ndarray) -> complex:
    """``tr(W A)`` for an operator matrix ``A`` acting on the unit-norm representation."""
    if isinstance(state, PureState):
        v = state.vector
        return complex(v.conj() @ (operator @ v))
    return complex(np.sum(state.matrix * np.asarray(operator).T))


def plane_wave(space: LatticeSpace, wavenumber: float) -> PureState:
    """Single-particle plane wave; ``wavenumber`` must be a multiple of ``2 pi / L``."""
    n = wavenumber * space.length / (2 * np.pi)
    if abs(n - round(n)) > 1e-9:
        raise ValidationError("wavenumber is not commensurate with the ring")
    return PureState.from_function(space, lambda x: np.exp(1j * wavenumber * x))


def gaussian_packet(space: LatticeSpace, center: float, width: float,
                    wavenumber: float = 0.0) -> PureState:
    """Single-particle Gaussian with position spread ``width`` (periodic images summed)."""
    def fn(x):
        out = np.zeros_like(x, dtype=complex)
        for image in (-1, 0, 1):
            dx = x - center + image * space.length
            out += np.exp(-dx ** 2 / (4 * width ** 2) + 1j * wavenumber * dx)
        return out
    return PureState.from_function(space, fn)


def product_state(space: LatticeSpace, factors: Sequence[PureState]) -> PureState:
    """Tensor product of single-particle states (particle 0 first)."""
    if len(factors) != space.particles:
        raise ValidationError("need one factor per particle")
    amp = np.ones(1, dtype=complex)
    for f in factors:
        amp = np.kron(amp, f.amplitudes)
    return PureState.from_values(amp, space)
