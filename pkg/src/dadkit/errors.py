"""Exception types shared across the package."""


class DadkitError(Exception):
    """Base class for all dadkit errors."""


class InvalidInputError(DadkitError):
    """Input data violates a documented precondition (shape, finiteness, indices)."""


class InvalidParameterError(DadkitError):
    """A configuration value is outside its legal range."""


class DegenerateMaskError(DadkitError):
    """A mask or indicator has no active pixels where at least one is required."""


class DegenerateTransferError(DadkitError):
    """A homography is singular or could not be sampled within its constraints."""


class DegenerateInputError(DadkitError):
    """A point configuration admits no unique model fit."""


class PlacementError(DadkitError):
    """Random placement could not satisfy the separation constraints."""


class InsufficientDataError(DadkitError):
    """Fewer data points than the operation needs."""


class ConfigError(DadkitError):
    """A config file or command line carries an unknown or malformed key."""
