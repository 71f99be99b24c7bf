class IntError(Exception):
    pass


class ValidationError(Exception):
    pass


class ExceedsMaximumError(Exception):
    pass


class ProfileFormatError(Exception):
    pass


class PlanMismatchError(ValidationError):
    pass


class SimulationError(Exception):
    pass


class DeadlockError(SimulationError):
    """
    Raised when no event is runnable while work remains.

    :param worker: The id of the first blocked worker.
    :param pending: A description of the work item the worker waits on.
    """

    def __init__(self, message: str, worker: int = None, pending: str = None) -> None:
        super().__init__(message)
        self.worker = worker
        self.pending = pending


class ConsistencyError(Exception):
    pass
