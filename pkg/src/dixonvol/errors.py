"""Exception hierarchy for the volumetry pipeline."""


class PipelineError(Exception):
    """Base class for all pipeline errors."""


# --- NIfTI I/O -------------------------------------------------------------

class NiftiError(PipelineError):
    """Base class for NIfTI read/write failures."""


class MalformedHeader(NiftiError):
    """Header is not a valid 348-byte NIfTI-1 header (size, magic, dims)."""


class UnsupportedDatatype(NiftiError):
    """Datatype code outside the supported set (uint8/int16/int32/float32/float64)."""


class TruncatedData(NiftiError):
    """Voxel payload is shorter than the header dimensions imply."""


class NonFiniteData(NiftiError):
    """Voxel intensities contain NaN or infinity after scaling."""


class IoFailure(PipelineError):
    """Filesystem-level failure (unreadable path, write error)."""


# --- cohort / splits -------------------------------------------------------

class GeometryMismatch(PipelineError):
    """Dims or spacing differ where identical geometry is required."""


class SizeMismatch(PipelineError):
    """Requested split sizes are inconsistent with the id set."""


# --- inference -------------------------------------------------------------

class InvalidGraph(PipelineError):
    """Serialized model file is missing, unreadable, or of unknown format."""


class ShapeMismatch(PipelineError):
    """Model input/output shape violates the 3-channel / 1-or-2-class contract."""


class ExecutorFailure(PipelineError):
    """The inference backend raised during execution."""


class CountMismatch(PipelineError):
    """Slice count does not match the target axis length when restacking."""


class DecisionMismatch(PipelineError):
    """Decision rule variant does not match the model's output class count."""


# --- metrics / stats -------------------------------------------------------

class BothEmpty(PipelineError):
    """Dice of two empty masks is undefined and must be handled by the caller."""


class NoValidPairs(PipelineError):
    """Every agreement pair was skipped; no aggregate can be computed."""


class TooFewSubjects(PipelineError):
    """Population summary needs at least two included subjects."""


class ConfigError(PipelineError):
    """Pipeline configuration is invalid for the requested subcommand."""
