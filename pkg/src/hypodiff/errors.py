"""Exception hierarchy shared by the whole package."""


class HypoDiffError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(HypoDiffError, ValueError):
    pass


class DomainError(HypoDiffError, ValueError):
    """A state lies outside the model's declared state domain."""


class NumericError(HypoDiffError, ArithmeticError):
    """A computation produced a non-finite value."""


class ModelViolationError(HypoDiffError):
    """A model assumption failed, e.g. a non-positive diffusion coefficient."""


class DegeneracyError(HypoDiffError):
    """A covariance that must be positive definite is not.

    Usually means the noise-propagation condition fails at the state or the
    time step is too large for the scheme.
    """


class NotApplicableError(HypoDiffError):
    pass


class FilterCollapseError(HypoDiffError):
    def __init__(self, msg, time_index=None):
        super().__init__(msg)
        self.time_index = time_index


class MStepSingularError(HypoDiffError):
    pass


class ExplosionError(HypoDiffError):
    def __init__(self, msg, step=None, state=None):
        super().__init__(msg)
        self.step = step
        self.state = state
