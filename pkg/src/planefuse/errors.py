"""Exception types shared across the toolkit."""


class PlanefuseError(Exception):
    """Base class for all domain errors raised by planefuse."""


class ParameterError(PlanefuseError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class InputError(PlanefuseError, ValueError):
    pass


class ScaleError(PlanefuseError, ValueError):
    pass


class ConfigError(PlanefuseError, ValueError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class CloudParseError(PlanefuseError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InitializationError(PlanefuseError, RuntimeError):
    # status is the initial-pose search outcome when that is what failed
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status
