"""Exception taxonomy shared by every stage.

The CLI maps these onto exit codes, so raising the right class is part of
the external contract: ConfigError -> 2, DependencyError -> 3,
NumericsError -> 4. ContractError signals a violated call precondition and
is a bug in the caller, not an operator mistake.
"""


class MixarError(Exception):
    """Base class for package errors."""

    category = "error"


class ConfigError(MixarError):
    """Invalid or unknown configuration (bad bounds, unknown keys, ...)."""

    category = "config"


class ContractError(MixarError):
    """A call precondition was violated (shape/length/state mismatch)."""

    category = "contract"


class DependencyError(MixarError):
    """A required upstream artifact (checkpoint, run dir) is missing."""

    category = "dependency"


class NumericsError(MixarError):
    """Training or evaluation produced non-finite or invalid numbers."""

    category = "numerics"
