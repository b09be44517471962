"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A caller passed values that violate an operation's preconditions."""


class FormatError(ValueError):
    """A file could not be parsed; the message names the file and field."""

    def __init__(self, path, field, detail):
        self.path = str(path)
        self.field = field
        super().__init__(f"{self.path}: bad {field}: {detail}")


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, detail="non-finite loss"):
        self.epoch = epoch
        super().__init__(f"training diverged in epoch {epoch}: {detail}")


class SensorSaturation(ValueError):
    """Sensor output reached the supply voltage (overload)."""
