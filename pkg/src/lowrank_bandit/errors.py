"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid configuration. Carries the full list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class ConvergenceError(RuntimeError):
    """An iterative kernel failed to converge. Carries the achieved residual."""

    def __init__(self, message, residual):
        self.residual = float(residual)
        super().__init__(f"{message} (residual={residual:.3e})")


class DiagnosticUnavailableError(RuntimeError):
    """A diagnostic was requested without the recorded data it needs."""
