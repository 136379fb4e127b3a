"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration: unknown option, bad value, incompatible choice."""


class ContractError(ValueError):
    """A call violated an interface contract (shape mismatch, out-of-range argument)."""


class NumericError(ArithmeticError):
    """A numeric computation produced non-finite values or degenerated."""


class IdxFormatError(ValueError):
    """Base class for IDX file parse failures."""


class IdxBadMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass
