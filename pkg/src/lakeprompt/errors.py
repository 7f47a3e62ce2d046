class ContractError(ValueError):
    """An input violates an operation's preconditions."""


class FormatError(ValueError):
    """A file does not match the expected on-disk format."""


class NonFiniteError(FloatingPointError):
    """A tensor op produced NaN or Inf."""
