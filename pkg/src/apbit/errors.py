"""Exception types raised across apbit."""


class ApbitError(Exception):
    """Base class for all apbit errors."""


class ValueOutOfRange(ApbitError, ValueError):
    pass


class BadEncoding(ApbitError, ValueError):
    pass


class PaddingError(ApbitError, ValueError):
    """Packed words carry set bits beyond the logical extent."""


class ShapeMismatch(ApbitError, ValueError):
    pass


class LengthMismatch(ApbitError, ValueError):
    pass


class IllegalEncodingPair(ApbitError, ValueError):
    pass


class BadTileConfig(ApbitError, ValueError):
    pass


class QuantRangeError(ApbitError, ValueError):
    pass


class BadLayoutTag(ApbitError, ValueError):
    pass


class GraphShapeError(ApbitError, ValueError):
    pass


class UnsupportedLayer(ApbitError, ValueError):
    pass


class ConfigError(ApbitError, ValueError):
    """Model config could not be parsed; the message carries the line number."""


class FormatError(ApbitError, ValueError):
    """Malformed .bpt file."""
