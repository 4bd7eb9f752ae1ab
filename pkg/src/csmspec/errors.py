"""Exception and warning types shared across the package."""


class CsmSpecError(Exception):
    """Base class for all package errors."""


class ShapeError(CsmSpecError):
    """Inputs have inconsistent or invalid dimensions."""


class DomainError(CsmSpecError):
    """A point lies outside the state box and clamping is disabled."""


class GridTooLargeError(CsmSpecError):
    """Requested grid exceeds the configured cell cap."""


class SeparationError(CsmSpecError):
    """Cluster centers cannot be placed at the required separation."""


class NumericalBlowUpError(CsmSpecError):
    """A simulated state became non-finite."""


class DomainEscapeError(CsmSpecError):
    """Sampled images left the grid box with clamping disabled."""


class NoConvergenceError(CsmSpecError):
    """Power iteration failed to converge (e.g. periodic chain)."""


class IllConditionedSpectrumError(CsmSpecError):
    """Biorthogonality residual cannot reach tolerance (defective cluster)."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class NoSignificantSpectrumError(CsmSpecError):
    """No eigenvalue modulus exceeds the significance threshold."""


class EmptyRankError(CsmSpecError):
    """Basin assignment requested with rank zero."""


class SubsampleTooSmallError(CsmSpecError):
    """Bootstrap subsample is smaller than rank + 1."""


class DivergenceError(CsmSpecError):
    """Gradient descent loss increased for too many consecutive steps."""


class ConfigError(CsmSpecError):
    """Run configuration is missing fields or holds out-of-range values."""


class StageError(CsmSpecError):
    """A pipeline stage failed; carries the stage name for CLI reporting."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class DegenerateKernelWarning(UserWarning):
    """All pairwise distances are zero; the kernel carries no geometry."""


class EscapedCellWarning(UserWarning):
    """An Ulam cell lost every sample to escape and was given a self-loop."""
