"""Exception hierarchy shared by all maskpriv modules."""


class MaskPrivError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameterError(MaskPrivError, ValueError):
    pass


class ImageFormatError(MaskPrivError, ValueError):
    """Malformed, truncated or unsupported image file."""


class MissingMetadataError(MaskPrivError):
    pass


class InvalidDatasetError(MaskPrivError, ValueError):
    pass


class InvalidInputError(MaskPrivError, ValueError):
    pass


class ConfigurationError(MaskPrivError):
    """Deployment configured inconsistently (missing model, blur, checksum mismatch)."""


class InvalidPlanError(MaskPrivError, ValueError):
    pass


class ProtocolError(MaskPrivError, ValueError):
    """A wire record could not be decoded or violates a message invariant."""


class AuditError(MaskPrivError):
    """The capture could not be audited at all (as opposed to being non-compliant)."""


class ModelFormatError(MaskPrivError, ValueError):
    """Saved model file is corrupt or describes an unsupported architecture."""
