"""Seeded streams, coarse position histograms and two-sample statistics."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import stats

from .hilbert import LatticeSpace

# stream tags keep unrelated draws from sharing a sequence
INITIAL = 1
BRANCH = 2
GRW = 3
HAAR = 4
DEMO = 5


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``(master seed, key...)``, e.g. one per trajectory."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def streams(seed: int, tag: int, indices: Sequence[int]) -> list:
    return [stream(seed, tag, i) for i in indices]


def default_bins(space: LatticeSpace) -> int:
    """Bins per axis: fine for one particle, coarse for the joint histogram of several.

    The two-sample TV of pure sampling noise is about ``sqrt(B / (pi n))`` for
    ``B`` bins, so the total bin count is kept near 32 or below.
    """
    per_axis = 32 if space.particles == 1 else 4
    return min(space.points, per_axis)


def bin_of_cells(space: LatticeSpace, cells: np.ndarray, bins: int) -> np.ndarray:
    """Flat coarse-bin index for ``(n, N)`` grid cells."""
    coarse = (np.atleast_2d(cells) * bins) // space.points
    return np.ravel_multi_index(tuple(coarse.T), (bins,) * space.particles)


def binned_distribution(space: LatticeSpace, probabilities: np.ndarray, bins: int) -> np.ndarray:
    """Aggregate per-cell probabilities into coarse bins."""
    cells = np.indices(space.shape).reshape(space.particles, -1).T
    return np.bincount(bin_of_cells(space, cells, bins), weights=probabilities,
                       minlength=bins ** space.particles)


def position_histogram(space: LatticeSpace, positions: np.ndarray, bins: int) -> np.ndarray:
    """Normalised coarse histogram of continuous positions (nearest-grid-point cells)."""
    positions = np.atleast_2d(positions)
    counts = np.bincount(bin_of_cells(space, space.cell_of(positions), bins),
                         minlength=bins ** space.particles).astype(float)
    return counts / max(len(positions), 1)


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * math.fsum(np.abs(p / p.sum() - q / q.sum()))


def two_sample_ks(x: np.ndarray, y: np.ndarray) -> tuple:
    """Two-sample KS on each coordinate; returns the largest statistic and smallest p-value."""
    x = np.asarray(x).reshape(len(x), -1)
    y = np.asarray(y).reshape(len(y), -1)
    results = [stats.ks_2samp(x[:, c], y[:, c]) for c in range(x.shape[1])]
    return (max(float(r.statistic) for r in results),
            min(float(r.pvalue) for r in results))


def fsum_stats(values: Sequence[float]) -> tuple:
    """Order-independent mean, max and standard deviation."""
    values = [float(v) for v in values]
    n = len(values)
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / n
    return mean, max(values), math.sqrt(var)
