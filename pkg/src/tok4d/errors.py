"""Exception hierarchy for the tokenizer pipeline.

Everything derives from :class:`Tok4dError` so callers (notably the CLI)
can coarsely separate pipeline failures from programming errors.
"""


class Tok4dError(Exception):
    """Base class for all pipeline errors."""


# --- token sets ---------------------------------------------------------

class DuplicateCoordinate(Tok4dError):
    """Two tokens share the same 4D coordinate."""


class SubspaceViolation(Tok4dError):
    """A token lies outside its modality's coordinate subspace."""


class InvariantViolation(Tok4dError):
    """A token set violates a structural invariant (bounds, count, finiteness)."""


# --- serialization ------------------------------------------------------

class BadMagic(Tok4dError):
    """Stream does not begin with the expected magic bytes."""


class UnsupportedVersion(Tok4dError):
    """Stream declares a format version this reader does not understand."""


class TruncatedStream(Tok4dError):
    """Stream ended before the declared payload was read."""


# --- patchify / cameras -------------------------------------------------

class DimensionNotDivisible(Tok4dError):
    """Input dimensions are not divisible by the patch shape."""


class ShapeMismatch(Tok4dError):
    """Array shapes are inconsistent with the declared geometry."""


class BehindCamera(Tok4dError):
    """World point has non-positive depth in camera coordinates."""


class VoxelNotVisible(Tok4dError):
    """A voxel projects outside every provided view."""


# --- rope / attention ---------------------------------------------------

class OddHeadDim(Tok4dError):
    """Rotary tables require an even head dimension."""


class LengthMismatch(Tok4dError):
    """Paired sequences have different lengths."""


class CacheOrderViolation(Tok4dError):
    """Attempt to append cache entries at or before the current high-water mark."""


# --- quantization -------------------------------------------------------

class NonFiniteInput(Tok4dError):
    """Quantizer input contains NaN or infinity."""


class OffGridLevel(Tok4dError):
    """Level value is not on the quantizer's level grid."""


class IdOutOfRange(Tok4dError):
    """Codebook id outside the valid range."""


# --- losses / gradients -------------------------------------------------

class MissingTerm(Tok4dError):
    """Loss parts do not match the active task's schema."""


class NonFiniteGradient(Tok4dError):
    """A computed gradient contains NaN or infinity."""


class NonFiniteLoss(Tok4dError):
    """Training loss evaluated to NaN or infinity; the step is aborted."""


# --- metrics ------------------------------------------------------------

class TooFewSamples(Tok4dError):
    """Feature statistics require at least two samples."""


class DimensionMismatch(Tok4dError):
    """Feature statistics have different dimensionality."""


class NotSymmetric(Tok4dError):
    """Matrix square root requires a symmetric input."""


class SqrtFailure(Tok4dError):
    """Matrix is too far from positive semi-definite to take a square root."""


# --- trainer / config ---------------------------------------------------

class UnknownStage(Tok4dError):
    """Curriculum stage id outside 1..4."""


class StepOutOfRange(Tok4dError):
    """Step index outside [0, total_steps]."""


class ConfigError(Tok4dError):
    """Malformed or incomplete training configuration."""


class DataError(Tok4dError):
    """Training data missing or unreadable."""
