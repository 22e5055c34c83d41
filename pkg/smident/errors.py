from __future__ import annotations


class SmidentError(Exception):
    pass


class ConfigError(SmidentError, ValueError):
    pass


class DataError(SmidentError, ValueError):
    pass


class NumericalError(SmidentError, RuntimeError):
    pass


class EmptySetError(NumericalError):
    pass


class ProcedureError(NumericalError):
    pass


class InfeasibleStartError(NumericalError):
    def __init__(self, message: str, violations: list[tuple[str, float]] | None = None) -> None:
        self.violations = violations or []
        if self.violations:
            worst = ", ".join(f"{name}={value:.3g}" for name, value in self.violations[:5])
            message = f"{message} (most violated: {worst})"
        super().__init__(message)
