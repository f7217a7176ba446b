"""Exception hierarchy shared by every kicksim module."""


class KicksimError(Exception):
    """Base class for all library errors."""


class ConfigurationError(KicksimError, ValueError):
    """Invalid system, lattice or experiment configuration."""


class DomainError(KicksimError, ValueError):
    """A function was evaluated outside its mathematical domain."""


class ResourceError(KicksimError, MemoryError):
    """A requested accuracy needs more memory than allowed."""


class AnalysisError(KicksimError, ValueError):
    """A fit or estimator was given unusable input."""


class EdgeLeakageError(KicksimError, RuntimeError):
    """Probability reached the outer band of a finite lattice.

    Attributes:
        step: step counter of the state at the moment of failure.
        edge_mass: probability found in the outer bands.
        suggested: ``(n_min, n_max)`` of a lattice expected to be wide enough.
    """

    def __init__(self, step, edge_mass, suggested, message=None):
        self.step = step
        self.edge_mass = edge_mass
        self.suggested = suggested
        if message is None:
            message = (
                f"edge mass {edge_mass:.3e} exceeds threshold at step {step}; "
                f"rerun with a larger lattice, e.g. n_min={suggested[0]}, n_max={suggested[1]}"
            )
        super().__init__(message)
