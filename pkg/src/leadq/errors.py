"""Exception hierarchy. Every error the CLI can exit on derives from LeadqError."""


class LeadqError(Exception):
    exit_code = 1


class ConfigurationError(LeadqError):
    exit_code = 2


class DataError(LeadqError):
    exit_code = 3


class PartitionError(DataError):
    pass


class NumericError(LeadqError):
    exit_code = 4


class BudgetError(LeadqError):
    exit_code = 5


class StreamExhausted(LeadqError):
    """Raised when a client stream cannot supply a full round of arrivals."""

    exit_code = 6


class AuditViolation(LeadqError):
    """A label was read without a logged oracle query."""

    exit_code = 7


class CheckpointError(LeadqError):
    exit_code = 8
