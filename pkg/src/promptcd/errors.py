"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class PromptCDError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(PromptCDError):
    """Invalid configuration: unknown keys, bad ranges, wrong variant, dims."""

    exit_code = 2


class ShapeError(ConfigError):
    """Tensor or map dimensions do not line up."""


class VariantError(ConfigError):
    """Operation not available under the configured variant."""


class DataError(PromptCDError):
    """Malformed or inconsistent input data."""

    exit_code = 3


class SchemaError(DataError):
    """A declared column is missing from an input file."""


class RowError(DataError):
    """A single data row failed validation; carries the 1-based row number."""

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class EntityLookupError(DataError):
    """An entity id could not be resolved."""


class CheckpointError(PromptCDError):
    """Checkpoint missing, malformed, or incompatible with the scenario."""

    exit_code = 4


class MetricError(PromptCDError):
    """A metric is undefined for the given inputs."""

    exit_code = 5


class StateError(PromptCDError):
    """API called out of order, e.g. backward without a recorded forward."""
