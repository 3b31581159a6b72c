"""Named scenarios used by the experiment runner and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np

from .dynamics import LindbladSpec, Propagator
from .errors import ConfigurationError
from .hilbert import (DensityMatrix, Hamiltonian, LatticeSpace, PureState,
                      build_hamiltonian, gaussian_packet, mix_density,
                      plane_wave, product_state, pure_to_density)


@dataclass
class Scenario:
    name: str
    space: LatticeSpace
    hamiltonian: Hamiltonian
    initial: DensityMatrix
    times: tuple
    dt: float
    decomposition: Optional[list] = None
    extra: dict = field(default_factory=dict)

    @cached_property
    def propagator(self) -> Propagator:
        return Propagator(self.hamiltonian)


# ---- measurement scenario: system particle with k = +-1, pointer read-out ----

MEASUREMENT_POINTS = 32
MEASUREMENT_POINTER_MASS = 100.0
MEASUREMENT_COUPLING = 1.0
MEASUREMENT_SHIFT_CELLS = 8
MEASUREMENT_POINTER_WIDTH_CELLS = 1.5


def measurement_space(points: int = MEASUREMENT_POINTS, coupling: float = MEASUREMENT_COUPLING,
                      pointer_mass: float = MEASUREMENT_POINTER_MASS) -> LatticeSpace:
    # ring of length 4 pi, so k = +-1 are commensurate
    a = 4 * np.pi / points
    return LatticeSpace(2, points, a, (1.0, pointer_mass), ((0, 1, coupling),))


def measurement_time(space: LatticeSpace, shift_cells: int = MEASUREMENT_SHIFT_CELLS) -> float:
    """Time for the pointer to move ``shift_cells`` cells.

    The system's central-difference momentum for ``k = 1`` is ``sin(a)/a``.
    """
    a = space.spacing
    g = space.couplings[0][2]
    return shift_cells * a / (g * np.sin(a) / a)


def measurement_states(space: LatticeSpace, k: float = 1.0,
                       pointer_width_cells: float = MEASUREMENT_POINTER_WIDTH_CELLS) -> dict:
    """System plane waves, ready pointer and the two product branches."""
    one = space.sub([0])
    psi_minus = plane_wave(one, -k)
    psi_plus = plane_wave(one, k)
    ready = gaussian_packet(one, space.length / 2, pointer_width_cells * space.spacing)
    return {
        "psi_minus": psi_minus,
        "psi_plus": psi_plus,
        "ready": ready,
        "A": product_state(space, [psi_minus, ready]),
        "B": product_state(space, [psi_plus, ready]),
    }


def measurement_regions(space: LatticeSpace) -> dict:
    """Pointer half-rings split at the ready position and its antipode.

    Label ``"minus"`` is the half the pointer enters when the system has ``k < 0``.
    """
    m = space.points
    lower = np.arange(0, m // 2)
    upper = np.arange(m // 2, m)
    return {"minus": lower, "plus": upper}


def momentum_mixture(weights=(0.5, 0.5), points: int = MEASUREMENT_POINTS, coupling: float = MEASUREMENT_COUPLING,
          pointer_mass: float = MEASUREMENT_POINTER_MASS, k: float = 1.0) -> Scenario:
    space = measurement_space(points, coupling, pointer_mass)
    st = measurement_states(space, k)
    decomposition = [(float(weights[0]), st["A"]), (float(weights[1]), st["B"])]
    w0 = mix_density(decomposition)
    t2 = measurement_time(space)
    times = tuple(t2 * np.arange(1, 6) / 5)
    return Scenario("sec52-momentum-mixture", space, build_hamiltonian(space), w0, times, 0.02,
                    decomposition, {"t2": t2, "states": st, "regions": measurement_regions(space)})


# ---- single-particle scenarios ----

def free_packet() -> Scenario:
    """Mixture of two moving Gaussian packets on a free ring."""
    space = LatticeSpace(1, 64, 0.25)
    left = gaussian_packet(space, 5.0, 0.8, 1.5)
    right = gaussian_packet(space, 11.0, 0.8, -1.0)
    decomposition = [(0.6, left), (0.4, right)]
    return Scenario("free-packet", space, build_hamiltonian(space), mix_density(decomposition),
                    (0.5, 1.0, 1.5, 2.0, 2.5), 0.01, decomposition)


def double_well_potential(space: LatticeSpace, depth: float = 2.0, separation: float = 2.5):
    centre = space.length / 2

    def v(x):
        u = (x - centre) / separation
        return depth * (u ** 2 - 1) ** 2
    return v


def double_well() -> Scenario:
    """Packet released at rest in the left well of a quartic double well."""
    space = LatticeSpace(1, 64, 0.25)
    h = build_hamiltonian(space, double_well_potential(space))
    psi = gaussian_packet(space, space.length / 2 - 2.5, 0.6)
    return Scenario("double-well", space, h, pure_to_density(psi), (0.5, 1.0, 1.5, 2.0, 2.5), 0.01,
                    [(1.0, psi)])


def double_well_ground() -> Scenario:
    """Ground state of the double well, a stationary state."""
    sc = double_well()
    prop = Propagator(sc.hamiltonian)
    ground = PureState.from_values(prop.vectors[:, 0] / np.sqrt(sc.space.measure), sc.space)
    out = Scenario("double-well-ground", sc.space, sc.hamiltonian, pure_to_density(ground),
                   sc.times, sc.dt, [(1.0, ground)])
    out.__dict__["propagator"] = prop
    return out


# ---- open-system contrast ----

# TV between gamma = 1 and gamma = 0 position histograms at t = 2 dynamical
# times from an oracle run with 10^5 trajectories per arm (seed 11, 32 bins),
# halved.  Frozen before the main runs.
LINDBLAD_ORACLE_TV = 0.18295
LINDBLAD_THRESHOLD = 0.5 * LINDBLAD_ORACLE_TV


def lindblad_cat(rate: float = 1.0) -> Scenario:
    """Unequal two-packet superposition at rest; free spreading makes fringes.

    The dynamical time is the spreading time ``2 m width^2``.  ``dt`` is the
    trajectory step; the GKLS equation uses ``lindblad_dt``.
    """
    space = LatticeSpace(1, 48, 0.25)
    c = space.length / 2
    width = 0.8
    psi = PureState.from_values(gaussian_packet(space, c - 2.0, width).amplitudes
                                + 0.7 * gaussian_packet(space, c + 2.0, width).amplitudes, space)
    t_dyn = 2 * space.masses[0] * width ** 2
    return Scenario("lindblad-cat", space, build_hamiltonian(space), pure_to_density(psi),
                    (2 * t_dyn,), 0.01, [(1.0, psi)],
                    {"dynamical_time": t_dyn, "lindblad_dt": 0.001, "threshold": LINDBLAD_THRESHOLD,
                     "spec": LindbladSpec.dephasing(space.grid - c, rate)})


# ---- GRW diagram ----

def grw_diagram(weights=(0.7, 0.3)) -> Scenario:
    """Two particles exchanged between two packets; mixture of the two orderings."""
    space = LatticeSpace(2, 12, 1.0)
    one = space.sub([0])
    a = gaussian_packet(one, 3.0, 1.0, 1.0)
    b = gaussian_packet(one, 9.0, 1.0, -1.0)
    decomposition = [(weights[0], product_state(space, [a, b])),
                     (weights[1], product_state(space, [b, a]))]
    return Scenario("grw-diagram", space, build_hamiltonian(space), mix_density(decomposition),
                    tuple(np.arange(0, 9) * 0.5), 0.5, decomposition,
                    {"rate": 0.5, "width": 2.0, "t_final": 4.0, "histories": 1000, "flash_bins": 6})


TYPICALITY_SWEEP = {"d_s": 4, "d_e": [16, 64, 256], "rule": "full", "samples": 200}


def typicality_sweep(**overrides) -> dict:
    """Parameter block for the typicality sweep (no lattice scenario)."""
    return dict(TYPICALITY_SWEEP, **overrides)


PRESETS: dict = {
    "sec52-momentum-mixture": momentum_mixture,
    "free-packet": free_packet,
    "double-well": double_well,
    "double-well-ground": double_well_ground,
    "lindblad-cat": lindblad_cat,
    "grw-diagram": grw_diagram,
    "typicality-sweep": typicality_sweep,
}



def resolve(name: str, **kwargs) -> Scenario:
    try:
        builder: Callable = PRESETS[name]
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; known: {sorted(PRESETS)}") from None
    return builder(**kwargs)
