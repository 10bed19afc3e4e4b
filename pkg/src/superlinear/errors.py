"""Exception hierarchy shared by all modules."""


class SuperlinearError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(SuperlinearError, ValueError):
    """A configuration field violates one of its constraints."""

    def __init__(self, field, bound, value=None):
        self.field = field
        self.bound = bound
        self.value = value
        msg = f"{field}: requires {bound}"
        if value is not None:
            msg += f" (got {value!r})"
        super().__init__(msg)


class NonPositiveField(ConfigError):
    pass


class FieldOutOfRange(ConfigError):
    pass


class ExponentSumTooSmall(ConfigError):
    pass


class BackwardFactorTooSmall(ConfigError):
    pass


class UnknownConfigKey(ConfigError):
    pass


class DimensionMismatch(SuperlinearError, ValueError):
    pass


class EmptyIndexSet(SuperlinearError, ValueError):
    pass


class EmptySequence(SuperlinearError, ValueError):
    pass


class AnchorOutOfRange(SuperlinearError, ValueError):
    pass


class DegenerateFit(SuperlinearError, ValueError):
    pass


class TensorFormatError(SuperlinearError, ValueError):
    pass
