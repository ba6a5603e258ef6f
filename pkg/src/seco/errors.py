"""Exception types shared across modules; each maps to a CLI exit code."""


class ConfigurationError(ValueError):
    """Settings or shapes that do not fit together (exit code 2)."""


class DataError(ValueError):
    """Dataset content that cannot be used as asked (exit code 2)."""


class FormatError(ValueError):
    """Malformed dataset or checkpoint file (exit code 2)."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class CheckpointError(FormatError):
    pass


class DivergenceError(ArithmeticError):
    """Non-finite training loss (exit code 3)."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
