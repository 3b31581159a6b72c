"""Subsystem/environment splittings, conditional and effective density matrices.

Also hosts the pointer-measurement demonstration: W-BM trajectories whose
conditional density matrix goes from mixed to pure as the pointer moves,
next to the Psi-BM account with a randomly chosen branch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import bohm
from .errors import ConfigurationError, NullSupportError, ValidationError
from .hilbert import (DensityMatrix, LatticeSpace, PureState, State,
                      diagonal_distribution, purity, trace_distance)

MIN_CONDITIONAL_MASS = 1e-14
DEFAULT_EPSILON = 1e-6


@dataclass(frozen=True)
class Splitting:
    """Particles of the subsystem (``x``) and of the environment (``y``)."""

    subsystem: tuple
    environment: tuple

    def __post_init__(self):
        sub = tuple(int(i) for i in self.subsystem)
        env = tuple(int(i) for i in self.environment)
        if not sub or not env:
            raise ValidationError("subsystem and environment must both be nonempty")
        if set(sub) & set(env):
            raise ValidationError("subsystem and environment overlap")
        object.__setattr__(self, "subsystem", sub)
        object.__setattr__(self, "environment", env)

    @classmethod
    def of(cls, space: LatticeSpace, subsystem: Sequence[int]) -> "Splitting":
        env = [i for i in range(space.particles) if i not in set(subsystem)]
        return cls(tuple(subsystem), tuple(env))

    def check(self, space: LatticeSpace):
        if sorted(self.subsystem + self.environment) != list(range(space.particles)):
            raise ValidationError("splitting does not partition the particles")

    def dims(self, space: LatticeSpace) -> tuple:
        return space.points ** len(self.subsystem), space.points ** len(self.environment)


@dataclass(frozen=True, eq=False)
class ConditionalState:
    w: DensityMatrix
    cell: tuple
    normalization: float


def _blocks(state: State, split: Splitting) -> np.ndarray:
    """Unit-trace matrix as a ``(dx, dy, dx, dy)`` tensor ordered subsystem first."""
    space = state.space
    split.check(space)
    n = space.particles
    dx, dy = split.dims(space)
    order = split.subsystem + split.environment
    if isinstance(state, PureState):
        v = state.vector.reshape(space.shape).transpose(order).reshape(dx, dy)
        return np.einsum("ab,cd->abcd", v, v.conj())
    t = state.matrix.reshape(space.shape * 2)
    t = t.transpose(order + tuple(n + i for i in order))
    return t.reshape(dx, dy, dx, dy)


def environment_cell(space: LatticeSpace, split: Splitting, y) -> tuple:
    """Snap environment coordinates to grid cells."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != len(split.environment):
        raise ValidationError(f"need {len(split.environment)} environment coordinates")
    return tuple(int(c) for c in space.cell_of(y[None, :])[0])


def _env_flat(space: LatticeSpace, cells: tuple) -> int:
    return int(np.ravel_multi_index(cells, (space.points,) * len(cells)))


def _conditional_from_blocks(blocks: np.ndarray, space: LatticeSpace, split: Splitting,
                             cells: tuple) -> ConditionalState:
    j = _env_flat(space, cells)
    block = blocks[:, j, :, j]
    k = float(np.trace(block).real)
    if k < MIN_CONDITIONAL_MASS:
        raise NullSupportError(f"environment cell {cells} carries no weight")
    sub = space.sub(split.subsystem)
    return ConditionalState(DensityMatrix.from_matrix(block / k, sub), cells, k)


def conditional_density_matrix(state: State, split: Splitting, y) -> ConditionalState:
    """``w(x, x') = W(x, Y, x', Y) / K`` with ``Y`` snapped to its cell.

    ``K`` is the diagonal block's trace, i.e. the probability of the cell.
    """
    cells = environment_cell(state.space, split, y)
    return _conditional_from_blocks(_blocks(state, split), state.space, split, cells)


def conditional_probability(cond: ConditionalState) -> np.ndarray:
    """``P(X in cell | Y) = w(x, x) dx``."""
    return diagonal_distribution(cond.w)


def jitter_sensitivity(state: State, split: Splitting, y) -> float:
    """Largest trace distance between the conditional state at ``Y``'s cell and at neighbouring cells."""
    space = state.space
    blocks = _blocks(state, split)
    cells = environment_cell(space, split, y)
    base = _conditional_from_blocks(blocks, space, split, cells).w
    worst = 0.0
    for axis in range(len(cells)):
        for step in (-1, 1):
            nb = list(cells)
            nb[axis] = (nb[axis] + step) % space.points
            try:
                other = _conditional_from_blocks(blocks, space, split, tuple(nb)).w
            except NullSupportError:
                continue
            worst = max(worst, trace_distance(base, other))
    return worst


@dataclass(frozen=True, eq=False)
class MacroRegionSet:
    """Labelled disjoint sets of environment cells (flat indices)."""

    regions: dict
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        regions = {str(k): np.unique(np.asarray(v, dtype=np.int64)) for k, v in self.regions.items()}
        seen = set()
        for cells in regions.values():
            if seen & set(cells.tolist()):
                raise ValidationError("macro regions overlap")
            seen |= set(cells.tolist())
        object.__setattr__(self, "regions", regions)

    def label_of(self, flat_cell: int) -> str:
        for label, cells in self.regions.items():
            if flat_cell in cells:
                return label
        raise ValidationError(f"environment cell {flat_cell} lies in no declared region")


@dataclass(frozen=True, eq=False)
class EffectiveState:
    rho: DensityMatrix
    label: str
    residual: float


def _trace_norm(m: np.ndarray) -> float:
    return float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (m + m.conj().T)))))


def factorization_residual(blocks: np.ndarray, cells: np.ndarray) -> tuple:
    """Best ``rho (x) gamma`` fit to the region block; returns ``(rho, relative trace-norm residual)``.

    The fit is the leading term of the operator-Schmidt decomposition.
    """
    dx = blocks.shape[0]
    r = len(cells)
    sub = blocks[:, cells][:, :, :, cells]                 # (dx, r, dx, r)
    mass = float(np.real(np.einsum("ajaj->", sub)))
    if mass < MIN_CONDITIONAL_MASS:
        raise NullSupportError("region carries no weight")
    realigned = sub.transpose(0, 2, 1, 3).reshape(dx * dx, r * r)
    u, s, vh = np.linalg.svd(realigned, full_matrices=False)
    rho = u[:, 0].reshape(dx, dx)
    gamma = (s[0] * vh[0]).reshape(r, r)
    # fix the phase so both factors are positive Hermitian
    phase = np.trace(rho) / abs(np.trace(rho))
    rho, gamma = rho / phase, gamma * phase
    fit = np.einsum("ac,bd->abcd", rho, gamma)
    residual = _trace_norm((sub - fit).reshape(dx * r, dx * r)) / mass
    rho = rho / np.trace(rho).real
    return 0.5 * (rho + rho.conj().T), residual


def detect_effective_state(state: State, split: Splitting, y, regions: MacroRegionSet) -> Optional[EffectiveState]:
    """Effective density matrix of the subsystem, if the region containing ``Y`` factorizes.

    Returns ``None`` when the residual exceeds ``regions.epsilon``.  The
    residual is the larger of the relative trace-norm error of the best
    product fit on the region block and the trace distance between that
    fit and the conditional state at ``Y``.
    """
    space = state.space
    cells = environment_cell(space, split, y)
    label = regions.label_of(_env_flat(space, cells))
    blocks = _blocks(state, split)
    rho, residual = factorization_residual(blocks, regions.regions[label])
    sub = space.sub(split.subsystem)
    rho = DensityMatrix.from_matrix(rho, sub)
    try:
        local = trace_distance(rho, _conditional_from_blocks(blocks, space, split, cells).w)
    except NullSupportError:
        local = 1.0
    residual = max(residual, local)
    if residual >= regions.epsilon:
        return None
    return EffectiveState(rho, label, residual)


def region_overlap(branch: PureState, split: Splitting, own: np.ndarray) -> float:
    """Environment-marginal mass of ``branch`` outside its own region."""
    space = branch.space
    dx, dy = split.dims(space)
    p = diagonal_distribution(branch).reshape(space.shape)
    p = p.transpose(split.subsystem + split.environment).reshape(dx, dy).sum(axis=0)
    return float(1.0 - p[own].sum())


# ---- measurement demonstration ----

@dataclass
class DemoRecord:
    pre_purity: float
    post_purity: float
    outcome: str
    flagged: bool


@dataclass
class MeasurementReport:
    n: int
    t2: float
    overlap: float
    w_records: list
    psi_records: list
    w_frequencies: dict
    psi_frequencies: dict
    pre_purity: float
    min_post_purity: float
    max_psi_mixedness: float
    jitter: float = 0.0
    epsilon: float = DEFAULT_EPSILON

    def to_json(self) -> dict:
        return asdict(self)


def _outcome(w: DensityMatrix, targets: dict) -> str:
    fid = {k: float(np.real(v.vector.conj() @ w.matrix @ v.vector)) for k, v in targets.items()}
    return max(sorted(fid), key=fid.get)


def _frequencies(records: Sequence[DemoRecord], labels) -> dict:
    kept = [r for r in records if not r.flagged]
    n = max(len(kept), 1)
    return {lab: sum(r.outcome == lab for r in kept) / n for lab in labels}


def measurement_demo(n: int = 1000, seed: int = 0, coupling: float = 1.0, k: float = 1.0,
                     epsilon: float = DEFAULT_EPSILON, threads: int = 1, scenario=None) -> MeasurementReport:
    """Momentum measurement read out by a pointer; W-BM and Psi-BM accounts side by side.

    Each W-BM history conditions the universal density matrix on its own
    pointer position, before coupling and at the read-out time ``t2``.
    The Psi-BM history draws a branch, follows it, and does the same.
    """
    from .presets import momentum_mixture

    sc = scenario or momentum_mixture(coupling=coupling, k=k)
    space, prop, t2 = sc.space, sc.propagator, sc.extra["t2"]
    st = sc.extra["states"]
    split = Splitting.of(space, [0])
    regions = sc.extra["regions"]
    own = {"minus": regions["minus"], "plus": regions["plus"]}
    overlap = max(region_overlap(bohm.PureGuide(st["A"], prop).state(t2), split, own["minus"]),
                  region_overlap(bohm.PureGuide(st["B"], prop).state(t2), split, own["plus"]))
    if overlap > epsilon:
        raise ConfigurationError(f"pointer supports overlap by {overlap:.3e} > {epsilon:g} at read-out")
    targets = {"minus": st["psi_minus"], "plus": st["psi_plus"]}

    w0 = sc.initial
    guide = bohm.DensityGuide(w0, prop)
    w2 = DensityMatrix.from_matrix(prop.evolve_matrix(w0.matrix, t2), space, renormalize=True)
    pre_blocks, post_blocks = _blocks(w0, split), _blocks(w2, split)
    ens = bohm.sample_initial(w0, n, seed)
    out = bohm.integrate_ensemble(ens, guide, t2, sc.dt, threads=threads)
    w_records = []
    pre_values = []
    post_cells = set()
    for i in range(n):
        y0 = ens.positions[i, 1:]
        pre = _conditional_from_blocks(pre_blocks, space, split, environment_cell(space, split, y0))
        pre_values.append(purity(pre.w))
        if out.flagged[i]:
            w_records.append(DemoRecord(pre_values[-1], float("nan"), "flagged", True))
            continue
        post = _conditional_from_blocks(post_blocks, space, split,
                                        environment_cell(space, split, out.positions[i, 1:]))
        pp = purity(post.w)
        w_records.append(DemoRecord(pre_values[-1], pp, _outcome(post.w, targets), False))
        post_cells.add(post.cell)

    labels, pos0 = bohm.sample_branches(sc.decomposition, n, seed, space)
    psi_records = [None] * n
    for b, (_, psi) in enumerate(sc.decomposition):
        sel = np.flatnonzero(labels == b)
        if not sel.size:
            continue
        pguide = bohm.PureGuide(psi, prop)
        pb_pre = _blocks(psi, split)
        pb_post = _blocks(pguide.state(t2), split)
        res = bohm.integrate_ensemble(bohm.TrajectoryEnsemble(space, pos0[sel], sel, seed), pguide,
                                      t2, sc.dt, threads=threads)
        for j, i in enumerate(sel):
            pre = _conditional_from_blocks(pb_pre, space, split, environment_cell(space, split, pos0[i, 1:]))
            if res.flagged[j]:
                psi_records[i] = DemoRecord(purity(pre.w), float("nan"), "flagged", True)
                continue
            post = _conditional_from_blocks(pb_post, space, split,
                                            environment_cell(space, split, res.positions[j, 1:]))
            psi_records[i] = DemoRecord(purity(pre.w), purity(post.w), _outcome(post.w, targets), False)

    kept_w = [r.post_purity for r in w_records if not r.flagged]
    psi_pur = [p for r in psi_records for p in (r.pre_purity, r.post_purity) if not np.isnan(p)]
    return MeasurementReport(
        n=n, t2=float(t2), overlap=overlap, w_records=w_records, psi_records=psi_records,
        w_frequencies=_frequencies(w_records, targets), psi_frequencies=_frequencies(psi_records, targets),
        pre_purity=float(np.mean(pre_values)),
        min_post_purity=float(min(kept_w)) if kept_w else float("nan"),
        max_psi_mixedness=float(1 - min(psi_pur)),
        jitter=max((jitter_sensitivity(w2, split, space.grid[list(c)]) for c in sorted(post_cells)), default=0.0),
        epsilon=epsilon)
