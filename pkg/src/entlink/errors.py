"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when input data or configuration violates a documented contract.

    CLI entry points map this to exit code 1; genuine I/O failures
    (missing files, unreadable paths) surface as OSError and map to 2.
    """
