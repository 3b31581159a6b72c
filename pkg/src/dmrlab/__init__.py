"""Wave-function and density-matrix versions of Bohmian, GRW and Everettian dynamics on small lattices."""

__version__ = "0.1.0"

from .errors import (ConfigurationError, DmrLabError, EquivarianceError, NodeError,  # noqa: E402
                     NullSupportError, PositivityError, ResourceError, StepSizeError,
                     ValidationError)
from .hilbert import (DensityMatrix, Hamiltonian, LatticeSpace, PureState,  # noqa: E402
                      build_hamiltonian, diagonal_distribution, gaussian_packet, mix_density,
                      plane_wave, product_state, pure_to_density, purity, trace_distance)
from .dynamics import LindbladSpec, Propagator, propagate_density, propagate_lindblad, propagate_pure  # noqa: E402

__all__ = [
    "ConfigurationError", "DmrLabError", "EquivarianceError", "NodeError", "NullSupportError",
    "PositivityError", "ResourceError", "StepSizeError", "ValidationError",
    "DensityMatrix", "Hamiltonian", "LatticeSpace", "PureState", "build_hamiltonian",
    "diagonal_distribution", "gaussian_packet", "mix_density", "plane_wave", "product_state",
    "pure_to_density", "purity", "trace_distance",
    "LindbladSpec", "Propagator", "propagate_density", "propagate_lindblad", "propagate_pure",
]
