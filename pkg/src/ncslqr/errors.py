"""Exception hierarchy shared across the package."""


class NcslqrError(Exception):
    """Base class for all package errors."""


class ParseError(NcslqrError):
    """Config file is malformed or missing required fields."""


class ShapeError(NcslqrError):
    """A matrix or vector has the wrong dimensions; message names the field."""


class ProbabilityError(NcslqrError):
    """A probability vector is negative or does not sum to one."""


class DefinitenessError(NcslqrError):
    """A matrix fails its required PSD/PD test."""

    def __init__(self, msg, min_eig=None):
        if min_eig is not None:
            msg = f"{msg} (min eigenvalue {min_eig:.3e})"
        super().__init__(msg)
        self.min_eig = min_eig


class DimensionError(NcslqrError):
    """Operands passed to a matrix utility do not agree in size."""


class SingularBlockError(NcslqrError):
    """A trailing block that must be PD for a Schur complement is not."""


class MissingEntryError(NcslqrError):
    """A matrix collection indexed by (mode, channel output) lacks an entry."""


class NonFiniteError(NcslqrError):
    """A simulated state or action left the finite range."""


class ScaleGuardError(NcslqrError):
    """Exact enumeration was requested for an instance above the size guard."""


class UnsupportedPolicyError(NcslqrError):
    """The exact evaluator was handed a policy it cannot express."""


class OptimalityViolation(NcslqrError):
    """A gain perturbation or gradient check contradicted optimality."""

    def __init__(self, msg, where=None, gradient=None):
        super().__init__(msg)
        self.where = where
        self.gradient = gradient
