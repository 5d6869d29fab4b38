"""Exception hierarchy shared across the package."""


class RepclError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RepclError):
    """Invalid configuration value, schema violation, or unknown key."""


class DataError(RepclError):
    """Malformed corpus file or instance failing validation."""


class InputError(RepclError):
    """Operation called with inputs violating its precondition."""


class StructuralError(RepclError):
    """Shape or parameter-structure mismatch between model components."""


class CheckpointError(RepclError):
    """Checkpoint archive does not match the expected model configuration."""
