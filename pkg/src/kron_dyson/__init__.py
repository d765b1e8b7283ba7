"""Matrix Dyson equation tools for Kronecker random matrix ensembles.

Subpackages by task: core_algebra (matrix/superoperator primitives),
ensemble (structure data, validation, flatness), mde (self-consistent
equation and density of states), stability (one- and two-point stability
operators), sampler (Monte Carlo draws and resolvent statistics), clt
(mesoscopic linear statistics and the universal variance), cli (command
line entry point).
"""

__version__ = "0.1.0"

from .errors import KronDysonError, DomainError, InputError, NumericalError

__all__ = ["KronDysonError", "DomainError", "InputError", "NumericalError", "__version__"]
