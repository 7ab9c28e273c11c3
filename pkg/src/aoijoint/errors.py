"""Exception hierarchy shared by the solver, the closed forms and the CLI."""


class AoiError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(AoiError, ValueError):
    exit_code = 2


class ModelError(ConfigError):
    """A model file or in-memory model breaks a structural constraint."""


class OutOfRegionError(AoiError, ValueError):
    """The MGF argument lies outside the region where the quantity is finite."""

    exit_code = 3


class NotErgodicError(AoiError):
    exit_code = 4


class UnstableError(AoiError):
    exit_code = 4


class SimulationError(AoiError):
    exit_code = 5
