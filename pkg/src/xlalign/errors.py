"""Exception hierarchy shared across the package."""


class XlalignError(Exception):
    """Base class for all errors raised by this package."""


class InvariantError(XlalignError):
    """A data-structure invariant was violated (non-finite value, bad shape, ...)."""


class DimensionError(XlalignError):
    """Operands have incompatible dimensions."""


class FormatError(XlalignError):
    """A serialized file does not conform to its declared format."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File magic is right but the format version is unsupported."""


class TruncatedError(FormatError):
    """File ended before the payload promised by its header."""


class HeaderMismatchError(FormatError):
    """Payload length disagrees with the header (trailing bytes or bad counts)."""
