"""Exception hierarchy shared by the whole package.

The CLI maps these onto exit codes: DomainError -> 1, InputError -> 2,
NumericalError -> 3. Library code raises, it never calls sys.exit.
"""


class KronDysonError(Exception):
    """Base class for all package errors."""


class DomainError(KronDysonError):
    """A mathematically invalid request: bad shapes, a non-Hermitian K0,
    an operation outside its stated domain (e.g. gamma_tilde on beta=2)."""


class InputError(KronDysonError):
    """Malformed user input: unparseable JSON, unknown keys, bad CLI values."""


class NumericalError(KronDysonError):
    """A computation that started from valid input failed to meet its
    numerical contract (non-convergence, singular stability operator,
    quadrature inconsistency, mass deficit)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = dict(diagnostics)
