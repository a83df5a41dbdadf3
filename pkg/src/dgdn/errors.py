"""Exception hierarchy for structured error reporting."""


class DgdnError(Exception):
    """Base class for all library errors."""


class ShapeError(DgdnError):
    """Array dimensions violate an operation's contract."""


class ConfigError(DgdnError):
    """Malformed configuration text or inconsistent architecture."""


class FormatError(DgdnError):
    """Malformed binary file (IDX, PGM, checkpoint)."""


class NumericsError(DgdnError):
    """Invalid parameter values or numerical divergence."""
