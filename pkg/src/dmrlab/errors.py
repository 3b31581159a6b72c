"""Exception hierarchy shared by all modules."""


class DmrLabError(Exception):
    """Base class for library errors."""


class ValidationError(DmrLabError, ValueError):
    """An input violates a documented invariant."""


class ResourceError(DmrLabError):
    """A dense object would exceed the dimension guard."""


class PositivityError(ValidationError):
    """A density matrix or distribution has significantly negative entries."""


class NodeError(DmrLabError):
    """Velocity requested where the guiding density (nearly) vanishes."""


class StepSizeError(DmrLabError):
    """Time step violates a stability or resolution guard."""


class NullSupportError(DmrLabError):
    """Conditioning or collapsing on a region carrying no weight."""


class EquivarianceError(DmrLabError):
    """Too many trajectories were flagged at nodes (strict mode)."""


class ConfigurationError(DmrLabError):
    """An experiment or demo is misconfigured."""
