"""Exception hierarchy shared by all modules."""


class DifflabError(Exception):
    pass


class DomainError(DifflabError, ValueError):
    """An argument lies outside the domain of the operation (e.g. t not in [0,1])."""


class NumericError(DifflabError, ArithmeticError):
    pass


class SingularityError(DifflabError, ArithmeticError):
    """An operation would divide by a vanishing quantity."""


class ConditioningError(DifflabError, ValueError):
    """Conditioning on an event of probability zero."""


class SupportError(DifflabError, ValueError):
    pass


class CapacityError(DifflabError, MemoryError):
    """A dense object would exceed the configured state-space cap."""


class StabilityError(DifflabError, ArithmeticError):
    pass


class PositivityError(DifflabError, ValueError):
    pass


class TrainingError(DifflabError, RuntimeError):
    def __init__(self, msg, last_state=None):
        super().__init__(msg)
        self.last_state = last_state
