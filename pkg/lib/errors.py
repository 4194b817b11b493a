from typing import Optional, Sequence


class UsageError(ValueError):
    pass


class IndexingError(Exception):
    def __init__(self, required_extent: Sequence[int]) -> None:
        self.required_extent = [int(e) for e in required_extent]
        super().__init__(
            f"grid extent {self.required_extent} does not fit a 64-bit linear cell id"
        )


class DegenerateProfileError(Exception):
    pass


class TargetUnreachableError(Exception):
    def __init__(self, target: float, achievable: float) -> None:
        self.target = target
        self.achievable = achievable
        super().__init__(
            f"average neighbor target {target:.4f} is not reached within eps_mean, "
            f"the histogram only accounts for {achievable:.4f}"
        )


class BufferOverflowError(Exception):
    def __init__(self, batch_index: int, realized: int, capacity: int) -> None:
        self.batch_index = batch_index
        self.realized = realized
        self.capacity = capacity
        super().__init__(
            f"batch {batch_index} produced at least {realized} pairs, buffer holds {capacity}"
        )


class SampleTooSmallError(Exception):
    def __init__(self, sample_size: int, floor: int) -> None:
        self.sample_size = sample_size
        self.floor = floor
        super().__init__(f"sample of {sample_size} queries is below the floor of {floor}")


class IngestionError(Exception):
    def __init__(
        self, message: str, row: Optional[int] = None, column: Optional[int] = None
    ) -> None:
        self.row = row
        self.column = column

        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")

        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


class OracleCapError(Exception):
    def __init__(self, size: int, cap: int) -> None:
        self.size = size
        self.cap = cap
        super().__init__(
            f"dataset has {size} points, the quadratic oracle is capped at {cap}"
        )


class RunError(Exception):
    """
    Raised by the orchestrator around any engine failure, carrying the phase
    and the parameters of the run. The original error is chained.
    """

    def __init__(self, phase: str, context: dict) -> None:
        self.phase = phase
        self.context = context
        super().__init__(f"run failed during `{phase}` | {context}")
