"""Exception hierarchy shared by the library and the CLI.

The CLI maps ``InputError`` subclasses to exit code 1 and
``UnresolvableError`` to exit code 2.
"""


class InputError(ValueError):
    """Base class for bad input: malformed files, violated invariants, bad domains."""


class SchemaError(InputError):
    """A study document does not conform to the study-file schema."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class ValidationError(InputError):
    """A study document is well formed but violates a structural invariant."""

    def __init__(self, message, cell_ids=()):
        self.cell_ids = tuple(cell_ids)
        if self.cell_ids:
            message = f"{message}: {', '.join(self.cell_ids)}"
        super().__init__(message)


class DomainError(InputError):
    """A numeric argument lies outside the domain of a formula."""


class DfMismatchError(InputError):
    """An F-statistic's degrees of freedom do not match the effect it is paired with."""


class EnumerationLimitError(InputError):
    """Vertex enumeration was refused because a block has too many cells."""


class UnresolvableError(Exception):
    """Required input (usually the error variance) cannot be determined."""


class ConvergenceError(RuntimeError):
    """A numerical oracle failed to converge within its iteration budget."""
