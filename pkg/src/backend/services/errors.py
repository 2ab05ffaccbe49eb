class KernelTestError(Exception):
    """Base class for every error raised by the services package"""


class InputError(KernelTestError, ValueError):
    """Invalid shapes, lengths, ranges or degenerate inputs"""


class DataFormatError(InputError):
    """Malformed CSV input. Carries the 1-based line number when known."""

    def __init__(self, message: str, path: str = "", line: int = None):
        self.path = path
        self.line = line
        where = path
        if line is not None:
            where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class ReplicateError(KernelTestError, RuntimeError):
    def __init__(self, replicate: int, cause: Exception):
        self.replicate = replicate
        super().__init__(f"bootstrap replicate {replicate} failed: {cause}")


class ExperimentError(KernelTestError, RuntimeError):
    def __init__(self, grid_index: int, param, repetition: int, cause: Exception):
        self.grid_index = grid_index
        self.param = param
        self.repetition = repetition
        super().__init__(
            f"experiment failed at grid point {grid_index} (param={param}), "
            f"repetition {repetition}: {cause}"
        )
