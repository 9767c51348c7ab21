"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2, data-side
errors -> 3, numerical failures -> 4.
"""


class XcbError(Exception):
    """Base class for all package errors."""


class DimensionError(XcbError):
    """Operand shapes are incompatible with the requested operation."""


class InputError(XcbError):
    """An argument value violates an operation's preconditions."""


class ContractError(XcbError):
    """An API contract was violated (e.g. non-scalar backward root)."""


class ConfigError(XcbError):
    """Invalid or inconsistent configuration."""


class DataError(XcbError):
    """Problem with corpus data or persisted artifacts."""


class ParseError(DataError):
    """A persisted record could not be parsed; message names the line."""


class ProtocolError(DataError):
    """The data violates the experiment protocol (e.g. no target phrase)."""


class NumericalError(XcbError):
    """Non-finite values where finite ones are required (divergence)."""


class DegenerateLossError(NumericalError):
    """A loss had no contributing positions."""


class MetricError(XcbError):
    """A metric is undefined for the given inputs."""
