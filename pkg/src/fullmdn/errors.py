"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """Input values are malformed (non-finite entries, wrong packed length)."""


class ShapeError(ValueError):
    """Array shapes do not agree."""


class InvalidParamsError(ValueError):
    """Mixture parameters violate their invariants (e.g. weights off the simplex)."""


class SingularFactorError(ArithmeticError):
    """A triangular factor has a (numerically) zero diagonal entry."""


class NumericError(ArithmeticError):
    """Non-finite values appeared during a network evaluation."""


class TapeError(RuntimeError):
    """Misuse of a gradient tape, e.g. running the backward pass twice."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, value: float):
        super().__init__(f"non-finite training loss {value!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.value = value


class DatasetParseError(ValueError):
    """A dataset or checkpoint file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
