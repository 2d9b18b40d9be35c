"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class ShapeError(ValueError):
    pass


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class TrainingError(RuntimeError):
    pass
