from typing import Optional


class SimulationError(Exception):
    """Base class for every error raised by the simulator."""

    exit_code: int = 1


class DomainError(SimulationError, ValueError):
    """An operation was called with arguments outside its domain."""

    exit_code = 2


class InfeasibleError(DomainError):
    """The request is well-formed but cannot be satisfied (e.g. more partitions than sublayers)."""


class ConfigError(SimulationError):
    """Scenario configuration failed validation."""

    exit_code = 2

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


class OutputError(SimulationError):
    """Writing a report, timeline or sweep file failed."""

    exit_code = 3


class InputError(SimulationError):
    """A scenario file could not be read."""

    exit_code = 3
