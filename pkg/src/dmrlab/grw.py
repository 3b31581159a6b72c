"""GRW spontaneous collapse for wave functions and density matrices.

Collapse rate operators are multiplication by a periodic Gaussian of the
collapsed particle's coordinate, normalised on the grid so that integrating
over collapse centres gives exactly one.  Collapse events double as the flash
ontology; mass densities are tabulated on the single-particle grid.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import stats
from .dynamics import Propagator
from .errors import NullSupportError, ValidationError
from .hilbert import (DensityMatrix, LatticeSpace, PureState, State, _frozen,
                      diagonal_distribution)

MIN_COLLAPSE_NORM = 1e-14

# physical magnitudes; rescaled values are used in simulations
PHYSICAL_RATE_PER_SECOND = 1e-15
PHYSICAL_WIDTH_METRES = 1e-7


@dataclass(frozen=True)
class GrwParams:
    rate: float
    width: float

    def __post_init__(self):
        if not (self.rate > 0 and self.width > 0):
            raise ValidationError("GRW rate and width must be positive")

    def resolvable(self, space: LatticeSpace) -> bool:
        return self.width >= 2 * space.spacing


PHYSICAL = GrwParams(PHYSICAL_RATE_PER_SECOND, PHYSICAL_WIDTH_METRES)


@dataclass(frozen=True)
class CollapseEvent:
    time: float
    particle: int
    center: float


@dataclass(frozen=True, eq=False)
class MassDensityField:
    """Mass per unit length on the single-particle grid."""

    values: np.ndarray
    space: LatticeSpace
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def total(self) -> float:
        return float(np.sum(self.values) * self.space.spacing)


def _ring_distance(space: LatticeSpace, q: np.ndarray, x: float) -> np.ndarray:
    d = np.abs(np.mod(q - x, space.length))
    return np.minimum(d, space.length - d)


def gaussian_normalizer(space: LatticeSpace, width: float) -> float:
    """Grid sum ``a * sum_j exp(-d(q_j, 0)^2 / 2 width^2)``; close to ``sqrt(2 pi) width`` when resolvable."""
    d = _ring_distance(space, space.grid, 0.0)
    return float(space.spacing * np.sum(np.exp(-d ** 2 / (2 * width ** 2))))


def collapse_profile(space: LatticeSpace, center: float, width: float) -> np.ndarray:
    """Single-particle Gaussian ``g(q_j - center)`` on the grid, unit grid integral over centres."""
    d = _ring_distance(space, space.grid, center)
    return np.exp(-d ** 2 / (2 * width ** 2)) / gaussian_normalizer(space, width)


def collapse_operator(space: LatticeSpace, particle: int, center: float, width: float) -> np.ndarray:
    """Diagonal of the collapse rate operator for one particle, over all ``d`` configurations."""
    if not 0 <= particle < space.particles:
        raise ValidationError(f"no particle {particle}")
    prof = collapse_profile(space, center, width)
    cells = np.indices(space.shape).reshape(space.particles, -1)[particle]
    return prof[cells]


def marginal(space: LatticeSpace, probabilities: np.ndarray, particle: int) -> np.ndarray:
    """Cell probabilities of one particle."""
    p = np.asarray(probabilities).reshape(space.shape)
    axes = tuple(i for i in range(space.particles) if i != particle)
    return p.sum(axis=axes) if axes else p


def _kernel(space: LatticeSpace, width: float) -> np.ndarray:
    # kernel[i, j] = g(q_i - x_j) normalised
    diff = np.abs(np.subtract.outer(space.grid, space.grid))
    diff = np.minimum(diff, space.length - diff)
    return np.exp(-diff ** 2 / (2 * width ** 2)) / gaussian_normalizer(space, width)


def center_density(state: State, particle: int, width: float, space: LatticeSpace = None) -> np.ndarray:
    """Density of collapse centres at the grid points, ``rho(x_j) = tr(W Lambda_k(x_j))``."""
    space = space or state.space
    p = marginal(space, diagonal_distribution(state), particle)
    return p @ _kernel(space, width)


def _sample_center(space: LatticeSpace, density: np.ndarray, rng: np.random.Generator) -> float:
    cdf = np.cumsum(density * space.spacing)
    j = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), space.points - 1)
    return float(np.mod(space.grid[j] + space.spacing * (rng.random() - 0.5), space.length))


def sample_center_pure(psi: PureState, particle: int, width: float, rng: np.random.Generator) -> float:
    """Draw a collapse centre from ``||Lambda_k(x)^(1/2) psi||^2``."""
    return _sample_center(psi.space, center_density(psi, particle, width), rng)


def sample_center_density(w: DensityMatrix, particle: int, width: float, rng: np.random.Generator) -> float:
    """Draw a collapse centre from ``tr(W Lambda_k(x))``."""
    return _sample_center(w.space, center_density(w, particle, width), rng)


def sample_waiting_time(particles: int, rate: float, rng: np.random.Generator) -> float:
    """Exponential waiting time with total rate ``N * rate``."""
    if particles < 1:
        raise ValidationError("need at least one particle")
    return float(rng.exponential(1.0 / (particles * rate)))


def collapse_pure(psi: PureState, particle: int, center: float, width: float) -> PureState:
    lam = collapse_operator(psi.space, particle, center, width)
    out = np.sqrt(lam) * psi.amplitudes
    norm2 = np.sum(np.abs(out) ** 2) * psi.measure
    if norm2 < MIN_COLLAPSE_NORM:
        raise NullSupportError("collapse centre lies where the state has no weight")
    return PureState(out / np.sqrt(norm2), psi.space)


def collapse_density(w: DensityMatrix, particle: int, center: float, width: float) -> DensityMatrix:
    lam = collapse_operator(w.space, particle, center, width)
    tr = np.sum(np.real(np.diagonal(w.entries)) * lam) * w.measure
    if tr < MIN_COLLAPSE_NORM:
        raise NullSupportError("collapse centre lies where the state has no weight")
    s = np.sqrt(lam)
    out = s[:, None] * w.entries * s[None, :] / tr
    return DensityMatrix(0.5 * (out + out.conj().T), w.space)


def mass_density_from_probabilities(space: LatticeSpace, probabilities: np.ndarray) -> np.ndarray:
    values = np.zeros(space.points)
    for i, m in enumerate(space.masses):
        values += m * marginal(space, probabilities, i)
    return values / space.spacing


def mass_density(state: State, t: float = 0.0) -> MassDensityField:
    """``m(x) = sum_i m_i P(particle i in cell x) / a``."""
    space = state.space
    return MassDensityField(mass_density_from_probabilities(space, diagonal_distribution(state)), space, t)


@dataclass
class GrwHistory:
    final: State
    events: list
    masses: list = field(default_factory=list)


class _Evolver:
    """Exact unitary evolution between collapses, keeping the state in the energy basis."""

    def __init__(self, state: State, prop: Propagator, t0: float = 0.0):
        self.prop = prop
        self.space = state.space
        self.pure = isinstance(state, PureState)
        self.reset(state, t0)

    def reset(self, state: State, t: float):
        self.t0 = t
        if self.pure:
            self.coeff = self.prop.vectors.conj().T @ state.amplitudes
        else:
            self.coeff = self.prop.to_eigenbasis(state.entries)

    def state(self, t: float) -> State:
        if self.pure:
            amp = self.prop.vectors @ (self.coeff * self.prop.phases(t - self.t0))
            return PureState.from_values(amp, self.space)
        w = self.prop.from_eigenbasis(self.coeff, t - self.t0)
        w = w / (np.trace(w).real * self.space.measure)
        return DensityMatrix(0.5 * (w + w.conj().T), self.space)

    def probabilities(self, t: float) -> np.ndarray:
        if self.pure:
            amp = self.prop.vectors @ (self.coeff * self.prop.phases(t - self.t0))
            p = np.abs(amp) ** 2
        else:
            p = self.prop.diagonal_from_eigenbasis(self.coeff, t - self.t0)
        return np.clip(p, 0.0, None) / np.sum(p)


def run_grw_history(initial: State, prop: Propagator, params: GrwParams, t_final: float,
                    rng: np.random.Generator, sample_times: Sequence[float] = ()) -> GrwHistory:
    """Unitary evolution interrupted by collapses at exponential waiting times.

    Mass densities are recorded at ``sample_times`` (within ``[0, t_final]``).
    """
    space = initial.space
    n = space.particles
    samples = sorted(float(s) for s in sample_times)
    if samples and (samples[0] < 0 or samples[-1] > t_final + 1e-12):
        raise ValidationError("sample times must lie in [0, t_final]")
    evolver = _Evolver(initial, prop)
    events, masses = [], []
    t = 0.0
    pending = iter(samples)
    next_sample = next(pending, None)
    while True:
        t_next = t + sample_waiting_time(n, params.rate, rng)
        horizon = min(t_next, t_final)
        while next_sample is not None and next_sample <= horizon:
            p = evolver.probabilities(next_sample)
            masses.append(MassDensityField(mass_density_from_probabilities(space, p), space, next_sample))
            next_sample = next(pending, None)
        if t_next > t_final:
            break
        state = evolver.state(t_next)
        k = int(rng.integers(n))
        if isinstance(state, PureState):
            x = sample_center_pure(state, k, params.width, rng)
            state = collapse_pure(state, k, x, params.width)
        else:
            x = sample_center_density(state, k, params.width, rng)
            state = collapse_density(state, k, x, params.width)
        events.append(CollapseEvent(t_next, k, x))
        evolver.reset(state, t_next)
        t = t_next
    return GrwHistory(evolver.state(t_final), events, masses)


def _histories(initials: Sequence[State], prop, params, t_final, seed, tag, sample_times, threads):
    def one(h):
        return run_grw_history(initials[h], prop, params, t_final,
                               stats.stream(seed, stats.GRW, tag, h), sample_times)
    idx = range(len(initials))
    if threads <= 1:
        return [one(h) for h in idx]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, idx))


@dataclass
class GrwEquivalenceReport:
    sample_times: list
    mass_tv: list
    mass_tv_time_averaged: float
    flash_tv: float
    flash_bins: int
    mean_events_w: float
    mean_events_psi: float
    histories: int
    flash_vs_mass_tv: dict = field(default_factory=dict)


def _mean_profiles(histories: Sequence[GrwHistory]) -> np.ndarray:
    # (times, M) ensemble mean of mass density
    return np.mean([[m.values for m in h.masses] for h in histories], axis=0)


def _flash_histogram(space: LatticeSpace, histories, bins: int) -> np.ndarray:
    centers = np.array([e.center for h in histories for e in h.events])
    cells = np.rint(centers / space.spacing).astype(np.int64) % space.points
    return np.bincount((cells * bins) // space.points, minlength=bins).astype(float)


def _smeared_number_density(space, histories, width, sample_times):
    # expected flash-centre density: time average of the Gaussian-smeared particle density
    kern = _kernel(space, width)
    profiles = []
    for t_idx in range(len(sample_times)):
        per = np.zeros(space.points)
        for h in histories:
            per += h.masses[t_idx].values
        profiles.append(per / len(histories))
    profiles = np.array(profiles)
    weights = np.gradient(np.asarray(sample_times))
    mean = np.einsum("t,tm->m", weights, profiles)
    return (mean * space.spacing) @ kern


def grw_equivalence(w0: DensityMatrix, decomposition: Sequence, prop: Propagator, params: GrwParams,
                    t_final: float, sample_times: Sequence[float], histories: int, seed: int,
                    flash_bins: int = None, threads: int = 1) -> GrwEquivalenceReport:
    """W-GRW from ``w0`` against Psi-GRW with ``psi_0`` drawn from ``decomposition``.

    Compares the ensemble-mean mass-density profile at each sample time (m
    ontology) and the pooled histogram of collapse centres (f ontology).
    With equal masses the flash histogram is also compared against the
    Gaussian-smeared time-averaged particle density of each theory.
    """
    space = w0.space
    weights = np.array([p for p, _ in decomposition], dtype=float)
    cdf = np.cumsum(weights / weights.sum())
    branch = [min(int(np.searchsorted(cdf, stats.stream(seed, stats.BRANCH, h).random(), side="right")),
                  len(cdf) - 1) for h in range(histories)]
    psi_init = [decomposition[b][1] for b in branch]
    w_runs = _histories([w0] * histories, prop, params, t_final, seed, 0, sample_times, threads)
    psi_runs = _histories(psi_init, prop, params, t_final, seed, 1, sample_times, threads)

    mw, mp = _mean_profiles(w_runs), _mean_profiles(psi_runs)
    tvs = [stats.total_variation(a, b) for a, b in zip(mw, mp)]
    flash_bins = flash_bins or space.points
    fw = _flash_histogram(space, w_runs, flash_bins)
    fp = _flash_histogram(space, psi_runs, flash_bins)
    report = GrwEquivalenceReport(
        sample_times=list(sample_times), mass_tv=tvs,
        mass_tv_time_averaged=stats.total_variation(mw.mean(axis=0), mp.mean(axis=0)),
        flash_tv=stats.total_variation(fw, fp), flash_bins=flash_bins,
        mean_events_w=float(np.mean([len(h.events) for h in w_runs])),
        mean_events_psi=float(np.mean([len(h.events) for h in psi_runs])),
        histories=histories)
    if len(set(space.masses)) == 1 and len(sample_times) > 1:
        for name, runs, hist in (("W", w_runs, fw), ("Psi", psi_runs, fp)):
            expected = _smeared_number_density(space, runs, params.width, sample_times)
            coarse = np.bincount((np.arange(space.points) * flash_bins) // space.points,
                                 weights=expected, minlength=flash_bins)
            report.flash_vs_mass_tv[name] = stats.total_variation(hist, coarse)
    return report
