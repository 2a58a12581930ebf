"""Exception types shared across the package."""


class InputError(ValueError):
    """Caller supplied a value that violates an operation's precondition."""


class DataError(ValueError):
    """A dataset file or record is malformed."""

    def __init__(self, message, row=None, image_id=None):
        if row is not None:
            message = f"row {row}: {message}"
        if image_id is not None:
            message = f"{image_id}: {message}"
        super().__init__(message)
        self.row = row
        self.image_id = image_id


class EnvironmentUnavailable(RuntimeError):
    """An optional backend (detector, backbone, external tool) is missing."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class CheckpointError(ValueError):
    """A checkpoint does not match the model or vocabulary it is loaded into."""
