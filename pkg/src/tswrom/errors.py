"""Exception types shared across the package.

The command line maps these onto process exit codes, so raising the right
class matters more than the message text: ConfigError -> 2, NumericError -> 3,
plain OSError -> 4, FormatError -> 5.
"""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class NumericError(RuntimeError):
    """Solver failure: nonpositive height, Newton stall, singular system."""


class FormatError(RuntimeError):
    """A binary or text artifact does not match its declared layout."""
