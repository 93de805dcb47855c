"""Exception hierarchy shared across the package."""


class MetafuncError(Exception):
    """Base class for all package errors."""


class ConfigError(MetafuncError):
    """Invalid or inconsistent configuration."""


class DataError(MetafuncError):
    """Non-finite or otherwise unusable numeric data."""


class FormatError(MetafuncError):
    """Corrupt or unrecognized file content."""


class DimensionError(MetafuncError):
    """Shape or dimensionality mismatch."""


# embeddings
class EmptyClass(ConfigError):
    pass


class UnsupportedShape(ConfigError):
    pass


class DimensionShrink(DimensionError):
    pass


class OverlappingSplit(ConfigError):
    pass


class UnknownClass(ConfigError):
    pass


class EmptySplit(ConfigError):
    pass


# classifiers
class DegenerateLabels(DataError):
    pass


# episodes
class InsufficientSamples(ConfigError):
    pass


class EmptyBase(ConfigError):
    pass


class InsufficientClasses(ConfigError):
    pass


# neural
class BatchTooSmall(DimensionError):
    pass


class CacheError(MetafuncError):
    pass


# functional
class EmptyFunctionalSet(ConfigError):
    pass


class MissingPrototypes(ConfigError):
    pass


class EmptyEnsemble(ConfigError):
    pass


class InvalidWay(ConfigError):
    pass
