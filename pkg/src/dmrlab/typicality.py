"""Canonical typicality on abstract bipartite spaces ``C^dS (x) C^dE``.

Haar-random states on a subspace ``H_R`` are reduced to the small factor and
compared with the reduction of the normalised projection ``W_R = P_R / r``.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import stats
from .errors import ValidationError
from .hilbert import DensityMatrix, PureState, State, _frozen

ORTHONORMAL_TOL = 1e-10
RULES = ("full", "random", "energy-shell")


@dataclass(frozen=True, eq=False)
class SubspaceConstraint:
    """Orthonormal basis (columns) of ``H_R`` inside ``C^(dS dE)``."""

    d_s: int
    d_e: int
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=complex)
        if b.ndim != 2 or b.shape[0] != self.d_s * self.d_e:
            raise ValidationError(f"basis must have {self.d_s * self.d_e} rows")
        if not 1 <= b.shape[1] <= b.shape[0]:
            raise ValidationError("subspace dimension out of range")
        if np.max(np.abs(b.conj().T @ b - np.eye(b.shape[1]))) > ORTHONORMAL_TOL:
            raise ValidationError("basis columns are not orthonormal")
        object.__setattr__(self, "basis", _frozen(b))

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return self.d_s * self.d_e

    @classmethod
    def full(cls, d_s: int, d_e: int) -> "SubspaceConstraint":
        return cls(d_s, d_e, np.eye(d_s * d_e))

    @classmethod
    def random(cls, d_s: int, d_e: int, r: int, rng: np.random.Generator) -> "SubspaceConstraint":
        d = d_s * d_e
        g = rng.standard_normal((d, r)) + 1j * rng.standard_normal((d, r))
        q, _ = np.linalg.qr(g)
        return cls(d_s, d_e, q)

    @classmethod
    def energy_shell(cls, d_s: int, d_e: int, window: tuple, rng: np.random.Generator) -> "SubspaceConstraint":
        """Eigenvectors of a random Hermitian (GUE) operator with eigenvalues in ``window``.

        The operator is scaled so its spectrum fills roughly ``[-2, 2]``.
        """
        d = d_s * d_e
        g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        h = (g + g.conj().T) / (2 * np.sqrt(2 * d))
        ev, vec = np.linalg.eigh(h)
        keep = (ev >= window[0]) & (ev <= window[1])
        if not keep.any():
            raise ValidationError("energy window contains no eigenvalues")
        return cls(d_s, d_e, vec[:, keep])

    def transformed(self, unitary: np.ndarray) -> "SubspaceConstraint":
        """Same subspace with the basis rotated by an ``r x r`` unitary."""
        return SubspaceConstraint(self.d_s, self.d_e, self.basis @ unitary)


def make_constraint(rule: str, d_s: int, d_e: int, rng: np.random.Generator, r: int = None,
                    window: tuple = (-0.5, 0.5)) -> SubspaceConstraint:
    if rule == "full":
        return SubspaceConstraint.full(d_s, d_e)
    if rule == "random":
        return SubspaceConstraint.random(d_s, d_e, r or (d_s * d_e) // 2, rng)
    if rule == "energy-shell":
        return SubspaceConstraint.energy_shell(d_s, d_e, window, rng)
    raise ValidationError(f"unknown subspace rule {rule!r}; choose from {RULES}")


def haar_unitary(r: int, rng: np.random.Generator) -> np.ndarray:
    """Haar unitary via QR of a complex Gaussian matrix with the phase fix."""
    g = (rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r))) / np.sqrt(2)
    q, rr = np.linalg.qr(g)
    d = np.diagonal(rr)
    return q * (d / np.abs(d))


def haar_coefficients(r: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal(r) + 1j * rng.standard_normal(r)
    return z / np.linalg.norm(z)


def sample_haar(constraint: SubspaceConstraint, rng: np.random.Generator) -> PureState:
    """Uniform unit vector on the sphere of ``H_R``, in ambient coordinates."""
    return PureState(constraint.basis @ haar_coefficients(constraint.rank, rng))


def normalized_projection(constraint: SubspaceConstraint) -> DensityMatrix:
    """``W_R = B B^dagger / r``."""
    b = constraint.basis
    return DensityMatrix((b @ b.conj().T) / constraint.rank)


def reduce_to_subsystem(state: State, d_s: int, d_e: int) -> DensityMatrix:
    """Partial trace over the second factor (``C^dS`` index slowest)."""
    if isinstance(state, PureState):
        v = np.asarray(state.vector)
        if v.size != d_s * d_e:
            raise ValidationError(f"dimension {v.size} is not {d_s} x {d_e}")
        m = v.reshape(d_s, d_e)
        return DensityMatrix(m @ m.conj().T)
    w = np.asarray(state.matrix)
    if w.shape[0] != d_s * d_e:
        raise ValidationError(f"dimension {w.shape[0]} is not {d_s} x {d_e}")
    return DensityMatrix(np.einsum("iaja->ij", w.reshape(d_s, d_e, d_s, d_e)))


def reduced_projection(constraint: SubspaceConstraint) -> DensityMatrix:
    """``tr_E W_R`` without forming the ambient matrix."""
    b = constraint.basis.reshape(constraint.d_s, constraint.d_e, constraint.rank)
    return DensityMatrix(np.einsum("iar,jar->ij", b, b.conj()) / constraint.rank)


def _reduced_sample(constraint: SubspaceConstraint, rng: np.random.Generator) -> np.ndarray:
    v = constraint.basis @ haar_coefficients(constraint.rank, rng)
    m = v.reshape(constraint.d_s, constraint.d_e)
    return m @ m.conj().T


def _distance(a: np.ndarray, b: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(0.5 * ((a - b) + (a - b).conj().T))
    return 0.5 * math.fsum(np.abs(ev))


def trace_distances(constraint: SubspaceConstraint, samples: int, seed: int, tag: int = 0,
                    threads: int = 1) -> np.ndarray:
    """``D_i = ||rho_S^psi_i - rho_S^W_R||_1 / 2`` with per-sample streams."""
    target = reduced_projection(constraint).matrix

    def one(i):
        return _distance(_reduced_sample(constraint, stats.stream(seed, stats.HAAR, tag, i)), target)
    if threads <= 1:
        return np.array([one(i) for i in range(samples)])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.array(list(pool.map(one, range(samples))))


@dataclass(frozen=True)
class TypicalityRow:
    d_s: int
    d_e: int
    r: int
    samples: int
    mean_d: float
    max_d: float
    std_d: float
    seed: int


COLUMNS = ("d_S", "d_E", "r", "samples", "mean_D", "max_D", "std_D", "seed")


def typicality_experiment(d_s: int, d_e_values: Sequence[int], rule: str = "full", samples: int = 200,
                          seed: int = 0, r: int = None, threads: int = 1) -> list:
    """Trace-distance statistics for each environment dimension."""
    rows = []
    for d_e in d_e_values:
        if d_s > d_e:
            raise ValidationError("typicality needs d_S <= d_E")
        constraint = make_constraint(rule, d_s, d_e, stats.stream(seed, stats.HAAR, 0, d_e), r)
        d = trace_distances(constraint, samples, seed, d_e, threads)
        mean, mx, std = stats.fsum_stats(d)
        rows.append(TypicalityRow(d_s, d_e, constraint.rank, samples, mean, mx, std, seed))
    return rows


def rows_to_csv(rows: Sequence[TypicalityRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in rows:
        w.writerow([row.d_s, row.d_e, row.r, row.samples, format(row.mean_d, ".17g"),
                    format(row.max_d, ".17g"), format(row.std_d, ".17g"), row.seed])
    return buf.getvalue()


def projector_convergence(constraint: SubspaceConstraint, sample_sizes: Sequence[int], seed: int,
                          repetitions: int = 8) -> tuple:
    """Mean trace distance between the empirical average of ``|psi><psi|`` and ``W_R``.

    Returns ``(sizes, mean distances, fitted log-log slope)``; each repetition
    uses its own streams and reuses them across sizes (nested averages).
    """
    target = normalized_projection(constraint).matrix
    sizes = sorted(int(s) for s in sample_sizes)
    dist = np.zeros((repetitions, len(sizes)))
    for rep in range(repetitions):
        acc = np.zeros_like(target)
        done = 0
        for k, n in enumerate(sizes):
            for i in range(done, n):
                v = constraint.basis @ haar_coefficients(constraint.rank, stats.stream(seed, stats.HAAR, 7, rep, i))
                acc += np.outer(v, v.conj())
            done = n
            dist[rep, k] = _distance(acc / n, target)
    means = dist.mean(axis=0)
    slope = float(np.polyfit(np.log(sizes), np.log(means), 1)[0])
    return sizes, means, slope
