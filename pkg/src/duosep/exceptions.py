"""Error taxonomy shared across the package.

Every deliberate failure path raises a DuosepError subclass so the CLI can
map it to a stable exit code (config 2, data 3, numerical 4). Anything else
escaping to the top level is a genuine bug and keeps its traceback.
"""


class DuosepError(Exception):
    """Base class for all errors raised intentionally by this package."""

    exit_code = 1
    category = "error"


class ConfigError(DuosepError):
    """Invalid, inconsistent, or unknown configuration."""

    exit_code = 2
    category = "config"


class DataError(DuosepError):
    """Malformed or unusable input data (audio, manifests, caches)."""

    exit_code = 3
    category = "data"


class ZeroEnergyError(DataError):
    """A signal that must carry energy is all zero (or numerically so)."""


class ShapeError(DataError):
    """Array arguments with incompatible shapes."""


class NumericalError(DuosepError):
    """Non-finite values or numerically impossible operations."""

    exit_code = 4
    category = "numerical"
