"""Exception types shared across the library."""


class AdairError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(AdairError):
    """Operands have incompatible shapes."""


class DivisionByZero(AdairError):
    """Elementwise division hit a zero denominator."""


class InvalidGroups(AdairError):
    """Convolution group count does not divide the channel counts."""


class NonScalarLoss(AdairError):
    """Backward was called on a tensor that is not a scalar."""


class NonFiniteValue(AdairError):
    """An operation produced NaN or Inf."""


class InvalidRange(AdairError):
    """A parameter lies outside its declared valid range."""


class HeadMismatch(AdairError):
    """Attention head count does not divide the channel count."""


class InvalidConfig(AdairError):
    """Model configuration violates its own constraints."""


class EmptyInput(AdairError):
    """An image or batch with zero elements was supplied."""


class CorruptCheckpoint(AdairError):
    """Checkpoint file failed magic, structure, or checksum validation."""


class ConfigMismatch(AdairError):
    """Checkpoint configuration disagrees with the target model."""


class PatchTooLarge(AdairError):
    """Requested crop exceeds the source image extent."""


class UnnormalizedKernel(AdairError):
    """Blur kernel does not sum to one."""


class NaNLoss(AdairError):
    """Training loss became non-finite."""


class ImageTooSmall(AdairError):
    """Image is smaller than the metric's window."""


class MalformedHeader(AdairError):
    """Image file header could not be parsed."""


class TruncatedPayload(AdairError):
    """Image file ended before the declared payload was complete."""


class UsageError(AdairError):
    """Command line was invoked with invalid arguments."""
