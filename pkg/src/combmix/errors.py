"""Exception types shared across the toolkit."""


class CombmixError(Exception):
    """Base class for all toolkit errors."""


class NonCommensurateError(CombmixError):
    """A tone frequency does not land on the DFT grid of the record."""


class UndersampledError(CombmixError):
    """Sample rate violates the Nyquist requirement of the signal content."""


class RateNotMultipleError(CombmixError):
    """Requested sample rate is not an integer multiple of the baseband rate."""


class ZeroPowerError(CombmixError):
    """Operation requires a signal with nonzero average power."""


class LengthMismatchError(CombmixError):
    """Two signals that must share a record length do not."""


class RateMismatchError(CombmixError):
    """Two signals that must share a sample rate do not."""


class EvenOrderError(CombmixError):
    """A polynomial order that must be odd is even."""


class MissingPhasePolynomialError(CombmixError):
    """A fundamental bin has no phase polynomial and strict mode is on."""


class SchemaMismatchError(CombmixError):
    """A persisted document does not match the expected schema/version."""


class BoundViolationError(CombmixError):
    """A coefficient lies outside its declared box constraint."""


class SchemaError(CombmixError):
    """A CSV/config file violates its documented schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class AlignmentError(CombmixError):
    """Sweep columns or phase curves are not aligned to the power grid."""


class OffGridProductError(CombmixError):
    """A product frequency does not fall on a spectrum bin."""


class GridMismatchError(CombmixError):
    """Two spectra that must share a bin grid do not."""


class NoProgressWarning(UserWarning):
    """All optimizer starts failed to improve on their initialization."""


class InsufficientPointsError(CombmixError):
    """Too few sweep points for the requested polynomial degree."""


class BandOverlapError(CombmixError):
    """The requested comb copy cannot be isolated at this comb spacing."""


class ZeroTxSymbolError(CombmixError):
    """Spectral division requires nonzero transmitted symbols."""


class MaskCoversMapError(CombmixError):
    """Sidelobe masks leave no cells to estimate the image floor."""
