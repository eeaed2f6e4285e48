"""Warning and exception classes shared by the whole package."""


class DataWarning(UserWarning):
    """Input data has a problem the run can survive (dropped rows, dropped items, skipped pairs)."""


class ConfigWarning(UserWarning):
    """A configuration value is legal but probably not what was intended."""


class AudiorecError(Exception):
    """Root of all errors raised by audiorec_eval."""


class DataError(AudiorecError, ValueError):
    """Malformed input or a violated data contract."""


class ConfigError(AudiorecError, ValueError):
    """Invalid run configuration."""


class TrainingError(AudiorecError, RuntimeError):
    """Training or inference produced non-finite values."""

    def __init__(self, message, epoch=None, batch=None, layer=None):
        details = [f"{name}={val}" for name, val in (("epoch", epoch), ("batch", batch), ("layer", layer))
                   if val is not None]
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
        self.layer = layer
