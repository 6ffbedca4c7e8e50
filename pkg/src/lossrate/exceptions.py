"""Exception hierarchy shared by the computation modules and the CLI."""


class LossRateError(Exception):
    """Base class for all errors raised by :mod:`lossrate`."""


class DomainError(LossRateError, ValueError):
    """A cumulant generating function was evaluated outside its finiteness domain."""


class NoTiltError(LossRateError, ValueError):
    """No finite tilt solves ``Lambda'(sigma) = q``.

    ``side`` is ``"upper"`` when ``q`` is at or above the essential supremum
    and ``"lower"`` when it is at or below the essential infimum.
    """

    def __init__(self, message, side):
        super().__init__(message)
        self.side = side


class DefectiveDistributionError(LossRateError, ValueError):
    def __init__(self, defect):
        super().__init__(
            f"default-time law is defective (mass {defect:.6g} never defaults); "
            "pass augment_defect=True to add a virtual no-loss epoch"
        )
        self.defect = defect


class NotRareEventError(LossRateError, ValueError):
    """The level does not exceed the mean loss, so the event is not rare."""

    def __init__(self, message, epoch):
        super().__init__(message)
        self.epoch = epoch


class UnreachableLevelError(LossRateError, ValueError):
    """Every tabulated level lies above the largest attainable loss."""


class NonUniqueOptimumError(LossRateError):
    """Two or more epochs attain the minimal rate within the gap tolerance."""

    def __init__(self, message, epochs):
        super().__init__(message)
        self.epochs = list(epochs)


class CapacityError(LossRateError):
    def __init__(self, message, required=None):
        super().__init__(message)
        self.required = required


class ConfigError(LossRateError, ValueError):
    """An experiment configuration failed validation."""
