from typing import Any


class MFGError(Exception):
    """Base class for every error raised by mfgpy."""


class ValidationError(MFGError):
    """Invalid grid, field, problem data or configuration."""


class ConfigError(ValidationError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if key is not None:
            prefix += f"{key}: "
        super().__init__(prefix + message)


class NonConvergence(MFGError):
    def __init__(self, message: str, last_iterate: Any = None, report: Any = None, stage: int | None = None):
        self.last_iterate = last_iterate
        self.report = report
        self.stage = stage
        if stage is not None:
            message = f"stage {stage}: {message}"
        super().__init__(message)


class BracketFailure(NonConvergence):
    pass
