"""Schrödinger, von Neumann and GKLS (Lindblad) time evolution."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import PositivityError, StepSizeError, ValidationError
from .hilbert import (HBAR, NEGATIVITY_TOL, DensityMatrix, Hamiltonian,
                      PureState, _frozen)

STABILITY_LIMIT = 0.1


class Propagator:
    """Exact propagator built from a cached eigendecomposition of ``H``.

    Immutable once built; evolution methods are pure functions of their inputs.
    """

    def __init__(self, hamiltonian: Hamiltonian, dt: float = 1.0):
        hamiltonian.space.require_dense()
        self.hamiltonian = hamiltonian
        self.space = hamiltonian.space
        self.dt = float(dt)
        energies, vectors = np.linalg.eigh(hamiltonian.matrix)
        self.energies = _frozen(energies)
        self.vectors = _frozen(vectors)

    def phases(self, t: float) -> np.ndarray:
        return np.exp(-1j * self.energies * t / HBAR)

    def unitary(self, t: float) -> np.ndarray:
        v = self.vectors
        return (v * self.phases(t)) @ v.conj().T

    def evolve_vectors(self, vectors: np.ndarray, t: float) -> np.ndarray:
        """Apply ``exp(-iHt)`` to a vector or to the columns of a matrix."""
        v = self.vectors
        coeff = v.conj().T @ vectors
        ph = self.phases(t)
        coeff = coeff * (ph[:, None] if coeff.ndim == 2 else ph)
        return v @ coeff

    def to_eigenbasis(self, matrix: np.ndarray) -> np.ndarray:
        v = self.vectors
        return v.conj().T @ matrix @ v

    def from_eigenbasis(self, matrix: np.ndarray, t: float = 0.0) -> np.ndarray:
        """``V P(t) M P(t)^* V^dagger`` for ``M`` given in the energy basis."""
        v = self.vectors
        ph = self.phases(t)
        return v @ (ph[:, None] * matrix * ph.conj()[None, :]) @ v.conj().T

    def diagonal_from_eigenbasis(self, matrix: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Diagonal of ``from_eigenbasis`` without forming the full matrix."""
        v = self.vectors
        ph = self.phases(t)
        left = v @ (ph[:, None] * matrix * ph.conj()[None, :])
        return np.real(np.sum(left * v.conj(), axis=1))

    def evolve_matrix(self, matrix: np.ndarray, t: float) -> np.ndarray:
        return self.from_eigenbasis(self.to_eigenbasis(matrix), t)


def propagate_pure(psi: PureState, prop: Propagator, steps: int) -> PureState:
    """``U(dt)^steps psi``."""
    t = steps * prop.dt
    return PureState.from_values(prop.evolve_vectors(psi.amplitudes, t), psi.space)


def propagate_density(w: DensityMatrix, prop: Propagator, steps: int) -> DensityMatrix:
    """``U W U^dagger`` with ``U = U(dt)^steps``."""
    t = steps * prop.dt
    return DensityMatrix.from_matrix(prop.evolve_matrix(w.matrix, t), w.space, renormalize=True)


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Jump operators (matrices on the unit-norm representation) and their rates."""

    jumps: tuple
    rates: tuple

    def __post_init__(self):
        jumps = tuple(_frozen(np.asarray(j, dtype=complex)) for j in self.jumps)
        rates = tuple(float(r) for r in self.rates)
        if len(jumps) != len(rates):
            raise ValidationError("one rate per jump operator")
        if any(r < 0 for r in rates):
            raise ValidationError("rates must be non-negative")
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def dephasing(cls, values: np.ndarray, rate: float) -> "LindbladSpec":
        """Single diagonal jump operator ``diag(values)``."""
        return cls((np.diag(np.asarray(values, dtype=complex)),), (rate,))

    def is_diagonal(self) -> bool:
        return all(np.count_nonzero(j - np.diag(np.diagonal(j))) == 0 for j in self.jumps)

    def scale(self) -> float:
        return sum(r * np.linalg.norm(j, 2) ** 2 for r, j in zip(self.rates, self.jumps))


def lindblad_rhs(h: np.ndarray, rho: np.ndarray, spec: LindbladSpec) -> np.ndarray:
    """GKLS generator ``-i[H, rho] + sum g (L rho L^+ - 1/2 {L^+ L, rho})``."""
    out = -1j / HBAR * (h @ rho - rho @ h)
    for rate, jump in zip(spec.rates, spec.jumps):
        if rate == 0:
            continue
        jd = jump.conj().T
        jdj = jd @ jump
        out += rate * (jump @ rho @ jd - 0.5 * (jdj @ rho + rho @ jdj))
    return out


def _dephasing_kernel(spec: LindbladSpec) -> np.ndarray:
    # diagonal jumps act entrywise: L rho L^+ - {L^+L, rho}/2 -> c_ij rho_ij
    d = spec.jumps[0].shape[0]
    c = np.zeros((d, d), dtype=complex)
    for rate, jump in zip(spec.rates, spec.jumps):
        l = np.diagonal(jump)
        c += rate * (np.outer(l, l.conj()) - 0.5 * (np.abs(l)[:, None] ** 2 + np.abs(l)[None, :] ** 2))
    return c


def _rk4(h, rho, dt, rhs):
    k1 = rhs(h, rho)
    k2 = rhs(h, rho + 0.5 * dt * k1)
    k3 = rhs(h, rho + 0.5 * dt * k2)
    k4 = rhs(h, rho + dt * k3)
    return rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


ROUNDING_FLOOR = 1e-13


def _clip_spectrum(rho: np.ndarray) -> np.ndarray:
    if np.linalg.eigvalsh(rho)[0] >= -ROUNDING_FLOOR:
        return rho
    ev, vec = np.linalg.eigh(rho)
    if ev[0] < -NEGATIVITY_TOL:
        raise PositivityError(f"Lindblad step produced eigenvalue {ev[0]:.3e}")
    ev = np.clip(ev, 0.0, None)
    rho = (vec * ev) @ vec.conj().T
    return rho / np.trace(rho).real


def lindblad_path(w: DensityMatrix, hamiltonian: Hamiltonian, spec: LindbladSpec,
                  dt: float, steps: int, every: int = 1) -> Iterable[tuple]:
    """Yield ``(step, DensityMatrix)`` every ``every`` RK4 steps, starting with step 0."""
    h = np.asarray(hamiltonian.matrix, dtype=complex)
    bound = dt * (np.linalg.norm(h, 2) + spec.scale())
    if bound > STABILITY_LIMIT:
        raise StepSizeError(f"dt*(|H| + sum g|L|^2) = {bound:.3g} exceeds {STABILITY_LIMIT}")
    if spec.is_diagonal():
        kernel = _dephasing_kernel(spec)

        def rhs(hm, rho):
            return -1j / HBAR * (hm @ rho - rho @ hm) + kernel * rho
    else:
        def rhs(hm, rho):
            return lindblad_rhs(hm, rho, spec)

    rho = np.array(w.matrix, dtype=complex)
    yield 0, w
    for step in range(1, steps + 1):
        rho = _rk4(h, rho, dt, rhs)
        rho = 0.5 * (rho + rho.conj().T)
        rho /= np.trace(rho).real
        rho = _clip_spectrum(rho)
        if step % every == 0 or step == steps:
            yield step, DensityMatrix.from_matrix(rho, w.space)


def propagate_lindblad(w: DensityMatrix, hamiltonian: Hamiltonian, spec: LindbladSpec,
                       dt: float, steps: int) -> DensityMatrix:
    """Fixed-step RK4 integration of the GKLS equation with trace renormalisation."""
    state = w
    for _, state in lindblad_path(w, hamiltonian, spec, dt, steps, every=max(steps, 1)):
        pass
    return state
