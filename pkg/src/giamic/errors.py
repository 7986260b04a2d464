"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""


class GiamicError(Exception):
    exit_code = 1


class ConfigError(GiamicError, ValueError):
    exit_code = 2


class DimensionError(GiamicError, ValueError):
    exit_code = 2


class ContractError(GiamicError, RuntimeError):
    exit_code = 2


class NumericalError(GiamicError, ArithmeticError):
    exit_code = 4


class FormatError(GiamicError, ValueError):
    """Malformed GMIC feature file. ``code`` distinguishes the failure kind."""

    exit_code = 3
    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class TruncatedFileError(FormatError):
    code = "truncated"


class DimensionOverflowError(FormatError):
    code = "dimension_overflow"
