from __future__ import annotations

from typing import Optional


class NVSimError(ValueError):
    """Base for every physics / validation failure raised by nvsim.

    `module` names the part of the toolkit that raised it; the CLI prints it as
    `error[<module>]: <message>` and exits with code 2.
    """

    module = "nvsim"

    def qualified(self) -> str:
        return f"error[{self.module}]: {self}"


class InvalidParameterError(NVSimError):
    module = "spin-hamiltonian"


class ContractViolationError(NVSimError):
    module = "spin-hamiltonian"


class StateError(NVSimError):
    module = "dynamics"


class CostGuardError(NVSimError):
    module = "dynamics"


class StabilityError(NVSimError):
    module = "dynamics"


class SequenceSyntaxError(NVSimError):
    module = "sequence"

    def __init__(self, message: str, line: int, column: int, source: Optional[str] = None):
        self.line = line
        self.column = column
        self.source = source
        self.message = message
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{column}: {message}")


class SequenceCompileError(NVSimError):
    module = "sequence"


class TimelineError(NVSimError):
    module = "sequence"


class FitError(NVSimError):
    module = "analysis"


class UnderdeterminedError(FitError):
    pass


class DataValidationError(NVSimError):
    module = "analysis"


class SGIError(NVSimError):
    module = "sgi"


class ResonatorError(NVSimError):
    module = "resonator"


class ConfigError(ValueError):
    """Malformed or unreadable run configuration. A usage error (exit 1), not a physics one."""
