"""Exception types shared across the package."""


class InputError(ValueError):
    """Raised when caller-supplied data violates an operation's preconditions."""


class ContractViolation(ValueError):
    """Raised when arguments are structurally inconsistent (dimension mismatch etc.)."""
