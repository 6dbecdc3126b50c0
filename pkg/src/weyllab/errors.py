"""Exception hierarchy.  Every error carries a module-qualified ``code`` for the CLI."""


class WeylLabError(Exception):
    code = "weyllab.error"


# geometry
class ElementClassError(WeylLabError, ValueError):
    """Raised when a translation length is requested for a non-hyperbolic element."""

    code = "geom.classification"


class EllipticElement(ElementClassError):
    code = "geom.elliptic"


class ParabolicElement(ElementClassError):
    code = "geom.parabolic"


class IdentityElement(ElementClassError):
    code = "geom.identity"


class NotNegativelyCurved(WeylLabError):
    code = "geom.not_negatively_curved"


# fuchsian
class GeneratorFileError(WeylLabError, ValueError):
    code = "fuchsian.generator_file"


class InvalidGroup(WeylLabError, ValueError):
    code = "fuchsian.invalid_group"


class MemoryBudgetExceeded(WeylLabError):
    code = "fuchsian.memory_budget"


class StabilizationFailed(WeylLabError):
    code = "fuchsian.stabilization"


# dynamics
class NoConvergence(WeylLabError):
    code = "dynamics.no_convergence"


class RelaxationFailed(WeylLabError):
    code = "dynamics.relaxation"


class EmptyWindow(WeylLabError):
    code = "dynamics.empty_window"


# thermo / spectral
class MissingDetTerm(WeylLabError, ValueError):
    code = "thermo.missing_det_term"


class DegenerateWindow(WeylLabError, ValueError):
    code = "thermo.degenerate_window"


class SpectrumTruncated(WeylLabError):
    code = "spectral.truncated"


class CoverageExceeded(WeylLabError):
    code = "spectral.coverage"


class IncompleteSpectrum(WeylLabError):
    code = "spectral.incomplete_length_spectrum"


class FileFormat(WeylLabError, ValueError):
    code = "spectral.file_format"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# box
class SearchExhausted(WeylLabError):
    code = "box.search_exhausted"

    def __init__(self, message, best_phase=None):
        super().__init__(message)
        self.best_phase = best_phase


class WindowEmpty(WeylLabError):
    code = "box.window_empty"


# cli
class ConfigError(WeylLabError, ValueError):
    code = "cli.config"
