"""Exception hierarchy. CLI exit codes key off these classes."""


class DMGNNError(Exception):
    exit_code = 1


class ConfigError(DMGNNError, ValueError):
    exit_code = 2


class ValidationError(ConfigError):
    """A structural definition (scale spec, edge list, ...) is inconsistent."""


class DimensionError(DMGNNError, ValueError):
    exit_code = 4


class ContractError(DMGNNError, ValueError):
    exit_code = 4


class DataError(DMGNNError):
    exit_code = 3


class ParseError(DataError, ValueError):
    pass


class LoadError(DataError):
    """Checkpoint unreadable or incompatible with the model config."""


class TrainingError(DMGNNError, RuntimeError):
    exit_code = 4
