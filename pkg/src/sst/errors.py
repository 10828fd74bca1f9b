"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Raised when an argument violates a documented precondition."""


class TrainingDivergedError(RuntimeError):
    """Raised when a gradient step produces non-finite values."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


class ConfigError(InvalidInputError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CsvError(InvalidInputError):
    """Base class for CSV ingestion failures. ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class CsvMissingError(CsvError, FileNotFoundError):
    pass


class CsvMalformedRowError(CsvError):
    pass


class CsvNonNumericError(CsvError):
    pass


class CsvLabelError(CsvError):
    pass
