"""Exception types shared across the library."""


class Stereo4PError(Exception):
    """Base class for all library errors."""


class ShapeError(Stereo4PError, ValueError):
    """An array has the wrong shape, dtype, or non-finite values."""


class ConfigError(Stereo4PError, ValueError):
    """A configuration file or parameter set is invalid."""


class WeightsFormatError(Stereo4PError, ValueError):
    """A weights file is corrupt, truncated, or built for another network."""


class DataError(Stereo4PError, ValueError):
    """A dataset, image, or calibration file cannot be used."""


class TrainingDivergedError(Stereo4PError, RuntimeError):
    """Training produced a non-finite loss."""
