"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command line front end:
1 for configuration problems, 2 for numerical failures, 3 for resonances.
"""


class CocycleError(Exception):
    exit_code = 2


class ConfigError(CocycleError, ValueError):
    exit_code = 1


class InvalidInputError(CocycleError, ValueError):
    exit_code = 1


class ShapeError(InvalidInputError):
    pass


class RepresentationError(CocycleError):
    """A required representation (grid or spectral) is not populated."""


class ConjugateSymmetryError(CocycleError):
    pass


class SingularMatrixError(CocycleError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NumericOverflowError(CocycleError, ArithmeticError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class LevelBudgetError(CocycleError):
    pass


class IllConditionedError(CocycleError):
    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class NoDominantBundleError(CocycleError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonconstantSignError(CocycleError):
    pass


class ResonanceError(CocycleError):
    exit_code = 3

    def __init__(self, message, modes=()):
        super().__init__(message)
        self.modes = list(modes)


def annotate(err, prefix):
    """Return a copy of ``err`` whose message is prefixed, keeping extra attributes."""
    new = type(err).__new__(type(err))
    new.__dict__.update(err.__dict__)
    new.args = (f"{prefix}: {err}",)
    return new
