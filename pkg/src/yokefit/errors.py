"""Exception types shared across the package."""


class YokefitError(Exception):
    """Base class for all package-specific failures."""


class TableError(YokefitError, ValueError):
    """Invalid permeameter table or measurement file."""


class EnsembleError(YokefitError, ValueError):
    """Ensemble too small or inconsistent for statistics."""


class ModelConstructionError(YokefitError, RuntimeError):
    """Material-model construction failed (e.g. a non-monotone box corner)."""


class GeometryError(YokefitError, ValueError):
    """Degenerate or inconsistent magnet geometry."""


class DivergenceError(YokefitError, RuntimeError):
    """Newton iteration failed to converge; carries the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class NumericalError(YokefitError, RuntimeError):
    """Linear-solver breakdown or singular tangent."""


class LocationError(YokefitError, ValueError):
    """A probe point lies outside the mesh or the requested region."""


class OutOfBoxError(YokefitError, ValueError):
    """Parameter vector outside the admissible box."""


class IdentificationError(YokefitError, RuntimeError):
    """Swarm search aborted (e.g. persistent forward-solver divergence)."""


class ConfigError(YokefitError, ValueError):
    """Malformed run configuration (unknown key, bad value, missing path)."""
