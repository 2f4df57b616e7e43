"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class TPSError(Exception):
    exit_code = 1


class InvalidInputError(TPSError, ValueError):
    exit_code = 2


class ValidationError(InvalidInputError):
    """A trajectory record violates a data-model invariant."""

    def __init__(self, message, *, record_id=None, field=None):
        self.record_id = record_id
        self.field = field
        prefix = []
        if record_id is not None:
            prefix.append(f"record {record_id!r}")
        if field is not None:
            prefix.append(f"field {field!r}")
        super().__init__(": ".join(prefix + [message]) if prefix else message)


class WrongModeError(InvalidInputError):
    """A score was requested in a mode the record cannot support."""


class MissingNuisanceError(WrongModeError):
    """The exact censored score needs q_Z but none was supplied."""


class EmptyPopulationError(InvalidInputError):
    pass


class UndefinedMetricError(TPSError, ValueError):
    exit_code = 3


class IdentityCheckError(TPSError, AssertionError):
    exit_code = 4


class ExcludedPrefixError(InvalidInputError):
    """A continuation audit has fewer valid branches than the retention minimum."""
