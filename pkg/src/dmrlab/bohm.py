"""Bohmian guidance for wave functions and density matrices.

Velocities are computed on the grid with central differences,

    v_i(q) = hbar * sum_j G_ij Im[ D_j psi(q) / psi(q) ]                (pure)
    v_i(q) = hbar * sum_j G_ij Im[ D_j W(q, q') / W(q, q') ]_{q'=q}     (mixed)

where ``G`` is the inverse-mass matrix (diagonal ``1/m_i`` unless kinetic
couplings are present) and the density-matrix derivative acts on the first
argument only.  Numerator (current) and denominator (density) are tabulated on
the grid, interpolated multilinearly (periodic) to the continuous configuration,
and divided there.  Grid points where the density falls below
``NODE_THRESHOLD`` times its maximum are nodes; interpolation touching a node
yields NaN.
"""

from __future__ import annotations

import logging
import warnings
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import stats
from .dynamics import LindbladSpec, Propagator, lindblad_path
from .errors import EquivarianceError, NodeError, StepSizeError, ValidationError
from .hilbert import (HBAR, DensityMatrix, Hamiltonian, LatticeSpace, PureState,
                      State, _frozen, diagonal_distribution, mix_density)

log = logging.getLogger(__name__)

NODE_THRESHOLD = 1e-12
FLAG_LIMIT = 0.01
NODE_SUBSTEPS = 4


def _neighbors(space: LatticeSpace):
    return [(space.neighbor(i, 1), space.neighbor(i, -1)) for i in range(space.particles)]


def _combine(space: LatticeSpace, im_grad: np.ndarray, density: np.ndarray) -> np.ndarray:
    current = HBAR * im_grad @ space.inverse_mass.T
    out = np.concatenate([current, density[:, None]], axis=1)
    out[density < NODE_THRESHOLD * density.max()] = np.nan
    return out


def grid_flux_pure(amplitudes: np.ndarray, space: LatticeSpace) -> np.ndarray:
    """``(d, N+1)`` grid of probability current (first N columns) and density (last).

    The current is ``hbar G Im[psi^* D psi]``; rows at nodes are NaN.
    """
    psi = np.asarray(amplitudes)
    grad = np.stack([psi.conj() * (psi[up] - psi[down]) / (2 * space.spacing)
                     for up, down in _neighbors(space)], axis=1)
    return _combine(space, grad.imag, np.abs(psi) ** 2)


def grid_flux_density(entries: np.ndarray, space: LatticeSpace) -> np.ndarray:
    """Current and density grid from a full kernel; derivative in the first argument."""
    w = np.asarray(entries)
    k = np.arange(w.shape[0])
    grad = np.stack([(w[up, k] - w[down, k]) / (2 * space.spacing)
                     for up, down in _neighbors(space)], axis=1)
    return _combine(space, grad.imag, w[k, k].real)


def grid_flux_factor(factor: np.ndarray, space: LatticeSpace) -> np.ndarray:
    """Same as ``grid_flux_density`` for ``W = F F^dagger`` given the factor ``F``."""
    f = np.asarray(factor)
    conj = f.conj()
    grad = np.stack([np.sum((f[up] - f[down]) * conj, axis=1) / (2 * space.spacing)
                     for up, down in _neighbors(space)], axis=1)
    return _combine(space, grad.imag, np.sum(np.abs(f) ** 2, axis=1))


def interpolate(space: LatticeSpace, grid_field: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Periodic multilinear interpolation of a ``(d, k)`` grid field at ``(n, N)`` positions."""
    q = np.atleast_2d(positions) / space.spacing
    lost = ~np.isfinite(q).all(axis=1)
    q = np.where(lost[:, None], 0.0, q)
    base = np.floor(q)
    frac = q - base
    base = base.astype(np.int64)
    n, dims = q.shape
    out = np.zeros((n, grid_field.shape[1]))
    for corner in range(2 ** dims):
        bits = np.array([(corner >> p) & 1 for p in range(dims)])
        cells = (base + bits) % space.points
        weight = np.prod(np.where(bits.astype(bool), frac, 1 - frac), axis=1)
        out += weight[:, None] * grid_field[space.flat_index(cells)]
    out[lost] = np.nan
    return out


def velocity_from_flux(space: LatticeSpace, flux: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Interpolate current and density separately and return their ratio (NaN near nodes)."""
    vals = interpolate(space, flux, positions)
    return vals[:, :-1] / vals[:, -1:]


def _check_nodes(v: np.ndarray) -> np.ndarray:
    if np.isnan(v).any():
        raise NodeError("evaluation cell touches a node of the guiding state")
    return v


def velocity_field_pure(psi: PureState, positions: np.ndarray, space: LatticeSpace = None) -> np.ndarray:
    """Guidance velocity of a wave function at continuous configurations."""
    space = space or psi.space
    return _check_nodes(velocity_from_flux(space, grid_flux_pure(psi.amplitudes, space), positions))


def velocity_field_density(w: DensityMatrix, positions: np.ndarray, space: LatticeSpace = None) -> np.ndarray:
    """Guidance velocity of a density matrix at continuous configurations."""
    space = space or w.space
    return _check_nodes(velocity_from_flux(space, grid_flux_density(w.entries, space), positions))


class _Guide:
    """Time-dependent current/density grid with a small cache."""

    cache_size = 24

    def __init__(self, space: LatticeSpace):
        self.space = space
        self._cache = OrderedDict()

    def field(self, t: float) -> np.ndarray:
        key = round(float(t), 12)
        if key in self._cache:
            self._cache.move_to_end(key)
            return self._cache[key]
        v = self._compute(key)
        self._cache[key] = v
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return v

    def _compute(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def distribution(self, t: float) -> np.ndarray:
        raise NotImplementedError


class PureGuide(_Guide):
    """Wave function evolved exactly by the Schrödinger equation."""

    def __init__(self, psi: PureState, prop: Propagator):
        super().__init__(psi.space)
        self.psi = psi
        self.prop = prop
        self._coeff = prop.vectors.conj().T @ psi.amplitudes

    def amplitudes(self, t: float) -> np.ndarray:
        return self.prop.vectors @ (self._coeff * self.prop.phases(t))

    def state(self, t: float) -> PureState:
        return PureState.from_values(self.amplitudes(t), self.space)

    def _compute(self, t):
        return grid_flux_pure(self.amplitudes(t), self.space)

    def distribution(self, t):
        return np.abs(self.amplitudes(t)) ** 2 * self.space.measure


class DensityGuide(_Guide):
    """Density matrix evolved exactly by the von Neumann equation.

    ``W`` is carried as a factor ``F`` with ``W = F F^dagger`` obtained from
    its own spectral decomposition, so ``W_t = (U F)(U F)^dagger``.
    """

    def __init__(self, w: DensityMatrix, prop: Propagator, rank_tol: float = 1e-13):
        super().__init__(w.space)
        self.w = w
        self.prop = prop
        ev, vec = np.linalg.eigh(w.matrix)
        keep = ev > rank_tol * ev[-1]
        factor = vec[:, keep] * np.sqrt(ev[keep] / w.measure)
        self._coeff = prop.vectors.conj().T @ factor

    def factor(self, t: float) -> np.ndarray:
        return self.prop.vectors @ (self._coeff * self.prop.phases(t)[:, None])

    def _compute(self, t):
        return grid_flux_factor(self.factor(t), self.space)

    def distribution(self, t):
        return np.sum(np.abs(self.factor(t)) ** 2, axis=1) * self.space.measure


class LindbladGuide(_Guide):
    """Density matrix evolved by the GKLS equation; fields are linear in time between RK4 steps."""

    def __init__(self, w: DensityMatrix, hamiltonian: Hamiltonian, spec: LindbladSpec,
                 dt: float, t_max: float):
        super().__init__(w.space)
        self.dt = float(dt)
        steps = int(np.ceil(t_max / dt - 1e-9))
        self.fields = []
        self.diagonals = []
        for _, state in lindblad_path(w, hamiltonian, spec, dt, steps):
            self.fields.append(grid_flux_density(state.entries, self.space))
            self.diagonals.append(diagonal_distribution(state))
        self.t_max = steps * dt

    def _bracket(self, t):
        if t < -1e-12 or t > self.t_max + 1e-9:
            raise ValidationError(f"time {t} outside precomputed Lindblad path")
        s = min(max(t / self.dt, 0.0), len(self.fields) - 1)
        lo = min(int(np.floor(s)), len(self.fields) - 2)
        return lo, s - lo

    def _compute(self, t):
        lo, frac = self._bracket(t)
        return (1 - frac) * self.fields[lo] + frac * self.fields[lo + 1]

    def distribution(self, t):
        lo, frac = self._bracket(t)
        return (1 - frac) * self.diagonals[lo] + frac * self.diagonals[lo + 1]


def make_guide(state: State, prop: Propagator) -> _Guide:
    if isinstance(state, PureState):
        return PureGuide(state, prop)
    return DensityGuide(state, prop)


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Configurations of ``n`` trajectories at time ``t``.

    ``indices`` identify each trajectory's RNG stream; ``flagged`` marks
    trajectories stuck at a node, which are frozen and excluded from statistics.
    """

    space: LatticeSpace
    positions: np.ndarray
    indices: np.ndarray
    seed: int
    t: float = 0.0
    flagged: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, self.space.particles)
        if len(pos) == 0:
            raise ValidationError("empty ensemble")
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "indices", _frozen(np.asarray(self.indices, dtype=np.int64)))
        flagged = np.zeros(len(pos), bool) if self.flagged is None else np.asarray(self.flagged, bool)
        object.__setattr__(self, "flagged", _frozen(flagged))

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def active(self) -> np.ndarray:
        return self.positions[~self.flagged]

    @property
    def flagged_fraction(self) -> float:
        return float(self.flagged.mean())


def draw_positions(space: LatticeSpace, probabilities: np.ndarray, rngs: Sequence) -> np.ndarray:
    """One configuration per generator: inverse CDF over cells, then uniform jitter in the cell."""
    cdf = np.cumsum(probabilities)
    draws = np.array([rng.random(1 + space.particles) for rng in rngs]).reshape(len(rngs), -1)
    cells = np.searchsorted(cdf, draws[:, 0] * cdf[-1], side="right")
    cells = np.minimum(cells, space.dim - 1)
    base = space.coordinates[cells]
    return space.wrap(base + space.spacing * (draws[:, 1:] - 0.5))


def sample_initial(source: State, n: int, seed: int, space: LatticeSpace = None,
                   first_index: int = 0) -> TrajectoryEnsemble:
    """``n`` draws from the diagonal distribution, one RNG stream per trajectory."""
    if n < 1:
        raise ValidationError("need at least one trajectory")
    space = space or source.space
    idx = np.arange(first_index, first_index + n)
    pos = draw_positions(space, diagonal_distribution(source), stats.streams(seed, stats.INITIAL, idx))
    return TrajectoryEnsemble(space, pos, idx, seed)


def _rk4_rows(space, fields, positions, h):
    f0, fh, f1 = fields
    k1 = velocity_from_flux(space, f0, positions)
    k2 = velocity_from_flux(space, fh, positions + 0.5 * h * k1)
    k3 = velocity_from_flux(space, fh, positions + 0.5 * h * k2)
    k4 = velocity_from_flux(space, f1, positions + h * k3)
    return positions + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _chunked(fn, rows: np.ndarray, threads: int):
    if threads <= 1 or len(rows) < 2 * threads:
        return fn(rows)
    parts = np.array_split(rows, threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.concatenate(list(pool.map(fn, parts)))


def integrate_ensemble(ensemble: TrajectoryEnsemble, guide: _Guide, t_final: float, dt: float,
                       strict: bool = False, courant: float = 0.1, threads: int = 1) -> TrajectoryEnsemble:
    """Advance all trajectories to ``t_final`` with RK4 in the guide's velocity field.

    Steps touching a node are retried with ``NODE_SUBSTEPS`` substeps; a
    trajectory still failing is flagged and frozen.  Results do not depend
    on ``threads`` since each row is advanced independently.
    """
    space = ensemble.space
    span = t_final - ensemble.t
    if span < -1e-12:
        raise ValidationError("cannot integrate backwards")
    pos = np.array(ensemble.positions)
    flagged = np.array(ensemble.flagged)
    if span <= 1e-12:
        return ensemble
    steps = int(np.ceil(span / dt - 1e-9))
    h = span / steps
    t = ensemble.t

    if courant is not None:
        v0 = velocity_from_flux(space, guide.field(t), pos[~flagged])
        speeds = np.linalg.norm(v0, axis=1)
        speeds = speeds[np.isfinite(speeds)]
        v_typ = float(np.sqrt(np.mean(speeds ** 2))) if speeds.size else 0.0
        if v_typ > 0 and h > courant * space.spacing / v_typ:
            raise StepSizeError(f"dt={h:.3g} exceeds {courant} a / v_typ = {courant * space.spacing / v_typ:.3g}")

    for _ in range(steps):
        fields = (guide.field(t), guide.field(t + 0.5 * h), guide.field(t + h))
        rows = np.flatnonzero(~flagged)
        new = _chunked(lambda r: _rk4_rows(space, fields, pos[r], h), rows, threads)
        bad = np.isnan(new).any(axis=1)
        if bad.any():
            retry = rows[bad]
            sub = pos[retry]
            hs = h / NODE_SUBSTEPS
            for j in range(NODE_SUBSTEPS):
                ts = t + j * hs
                sub = _rk4_rows(space, (guide.field(ts), guide.field(ts + 0.5 * hs), guide.field(ts + hs)), sub, hs)
            stuck = np.isnan(sub).any(axis=1)
            new[bad] = np.where(stuck[:, None], pos[retry], sub)
            flagged[retry[stuck]] = True
        pos[rows] = space.wrap(new)
        t += h

    out = TrajectoryEnsemble(space, pos, ensemble.indices, ensemble.seed, t_final, flagged)
    if out.flagged_fraction > FLAG_LIMIT:
        msg = f"{out.flagged_fraction:.2%} of trajectories flagged at nodes; equivariance at risk"
        if strict:
            raise EquivarianceError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return out


def equivariance_check(ensemble: TrajectoryEnsemble, reference, bins: int = None) -> float:
    """Total-variation distance between the ensemble histogram and a reference distribution.

    ``reference`` is a state or a per-cell probability vector at the ensemble's time.
    """
    space = ensemble.space
    bins = bins or stats.default_bins(space)
    p = reference if isinstance(reference, np.ndarray) else diagonal_distribution(reference)
    hist = stats.position_histogram(space, ensemble.active, bins)
    return stats.total_variation(hist, stats.binned_distribution(space, p, bins))


def run_ensemble(ensemble: TrajectoryEnsemble, guide: _Guide, times: Sequence[float], dt: float,
                 **kwargs) -> list:
    """Integrate through increasing ``times`` and return the ensemble at each."""
    out = []
    for t in times:
        ensemble = integrate_ensemble(ensemble, guide, t, dt, **kwargs)
        out.append(ensemble)
    return out


@dataclass
class EquivalenceReport:
    """Per-time comparison of the W-BM and Psi-BM position statistics."""

    times: list
    tv: list
    ks_statistic: list
    ks_pvalue: list
    flagged_w: list
    flagged_psi: list
    bins: int
    n: int
    branch_counts: list = field(default_factory=list)

    def max_tv(self) -> float:
        return max(self.tv)


def sample_branches(decomposition: Sequence, n: int, seed: int, space: LatticeSpace) -> tuple:
    """For each trajectory draw a branch with probability ``p_i``, then a position from ``|psi_i|^2``."""
    weights = np.array([float(p) for p, _ in decomposition])
    cdf = np.cumsum(weights / weights.sum())
    idx = np.arange(n)
    rngs = stats.streams(seed, stats.BRANCH, idx)
    labels = np.array([min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)
                       for rng in rngs])
    pos = np.zeros((n, space.particles))
    for b, (_, psi) in enumerate(decomposition):
        sel = np.flatnonzero(labels == b)
        if sel.size:
            pos[sel] = draw_positions(space, psi.probabilities, [rngs[i] for i in sel])
    return labels, pos


def compare_w_and_psi(w0: DensityMatrix, decomposition: Sequence, prop: Propagator,
                      times: Sequence[float], n: int, seed: int, dt: float,
                      bins: int = None, threads: int = 1, strict: bool = False) -> EquivalenceReport:
    """Run W-BM guided by ``w0`` and Psi-BM with branches drawn from ``decomposition``.

    No consistency check between the two is made; see ``checked_equivalence``.
    """
    space = w0.space
    bins = bins or stats.default_bins(space)
    times = [float(t) for t in times]
    kw = dict(strict=strict, threads=threads)

    w_runs = run_ensemble(sample_initial(w0, n, seed), DensityGuide(w0, prop), times, dt, **kw)

    labels, pos0 = sample_branches(decomposition, n, seed, space)
    psi_pos = [np.zeros((n, space.particles)) for _ in times]
    psi_flag = [np.zeros(n, bool) for _ in times]
    for b, (_, psi) in enumerate(decomposition):
        sel = np.flatnonzero(labels == b)
        if not sel.size:
            continue
        ens = TrajectoryEnsemble(space, pos0[sel], sel, seed)
        for k, e in enumerate(run_ensemble(ens, PureGuide(psi, prop), times, dt, **kw)):
            psi_pos[k][sel] = e.positions
            psi_flag[k][sel] = e.flagged

    report = EquivalenceReport([], [], [], [], [], [], bins, n,
                               [int(np.sum(labels == b)) for b in range(len(decomposition))])
    for k, t in enumerate(times):
        a = w_runs[k].active
        b = psi_pos[k][~psi_flag[k]]
        report.times.append(t)
        report.tv.append(stats.total_variation(stats.position_histogram(space, a, bins),
                                               stats.position_histogram(space, b, bins)))
        ks, p = stats.two_sample_ks(a, b)
        report.ks_statistic.append(ks)
        report.ks_pvalue.append(p)
        report.flagged_w.append(int(w_runs[k].flagged.sum()))
        report.flagged_psi.append(int(psi_flag[k].sum()))
    return report


def checked_equivalence(w0: DensityMatrix, decomposition: Sequence, prop: Propagator,
                           times: Sequence[float], n: int, seed: int, dt: float,
                           **kwargs) -> EquivalenceReport:
    """W-BM versus Psi-BM with ``psi_0`` drawn from an ensemble representing ``w0``."""
    recomposed = mix_density(decomposition)
    if np.max(np.abs(recomposed.matrix - w0.matrix)) > 1e-10:
        raise ValidationError("decomposition does not reproduce the initial density matrix")
    return compare_w_and_psi(w0, decomposition, prop, times, n, seed, dt, **kwargs)
