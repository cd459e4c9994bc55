"""Exception types shared across the package."""


class SccMediateError(Exception):
    """Base class for all package errors."""


class DataError(SccMediateError):
    """Invalid input data (bad values, missing cells, unknown columns)."""


class FormulaError(SccMediateError):
    """Malformed or non-hierarchical model formula."""


class ConfigError(SccMediateError):
    """Invalid run configuration."""


class SingularDesignError(SccMediateError):
    """Design matrix is rank deficient on the weighted support."""


class NonConvergenceError(SccMediateError):
    """Iterative fit did not converge; carries the last iterate."""

    def __init__(self, message, last_iterate=None, diagnostics=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.diagnostics = diagnostics or {}


class SingularInformationError(SccMediateError):
    """Near-singular bread matrix in a sandwich variance."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class EstimationError(SccMediateError):
    """Estimator failure, tagged with the failing step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
