"""Exception types shared across the estimation pipeline."""


class EstimationError(Exception):
    """Base class for recoverable estimation failures."""

    def __init__(self, message, bandwidth=None):
        super().__init__(message)
        self.bandwidth = bandwidth


class InsufficientSupport(EstimationError):
    """Fewer draws with positive weight than coefficients to fit."""


class SingularDesign(EstimationError):
    """Weighted Gram matrix condition estimate above threshold.

    Typically signals collinear regressors, e.g. overidentified moment
    conditions simulated without perturbation noise.
    """

    def __init__(self, message, condition=None, bandwidth=None):
        super().__init__(message, bandwidth=bandwidth)
        self.condition = condition


class SolverNotConverged(EstimationError):
    """Quantile solver exhausted its iteration budget."""

    def __init__(self, message, best_objective=None, bandwidth=None):
        super().__init__(message, bandwidth=bandwidth)
        self.best_objective = best_objective


class WeightUnderflow(EstimationError):
    """All self-normalized weights underflowed to zero."""

    def __init__(self, message, max_log_weight=None):
        super().__init__(message)
        self.max_log_weight = max_log_weight


class ConfigError(Exception):
    """Invalid experiment configuration."""
