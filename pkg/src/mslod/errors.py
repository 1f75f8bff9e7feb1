"""Exception hierarchy shared by all modules."""


class MslodError(Exception):
    """Base class for all library errors."""


class TagError(MslodError):
    """Field vectors with mismatched space tags or lengths were combined."""


class EllipticityError(MslodError):
    """A diffusion field violates its positivity/ellipticity bounds."""


class SolverError(MslodError):
    """A linear solve failed or exceeded its residual tolerance."""


class CorrectorSolveError(SolverError):
    """A patch saddle-point problem could not be solved."""

    def __init__(self, element, message):
        super().__init__(f"element {element}: {message}")
        self.element = element


class ConfigError(MslodError):
    """An experiment configuration is missing, unreadable, or inconsistent."""


class CacheError(MslodError):
    """An on-disk corrector cache is incompatible with the requested build."""
