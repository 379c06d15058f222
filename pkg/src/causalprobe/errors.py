"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value lies outside its allowed domain."""


class ContractError(ValueError):
    """A function was called with arguments violating its preconditions."""


class FormatError(ValueError):
    """A serialized file could not be parsed.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class UndefinedMetricError(ValueError):
    """A ranking metric is undefined for the given labels (e.g. single class)."""
