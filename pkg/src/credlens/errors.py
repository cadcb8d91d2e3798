"""Exception types raised by the pipeline, one per contract violation."""


class CredlensError(Exception):
    """Base class for all package errors."""


class ConfigError(CredlensError):
    """Invalid or unknown configuration value."""


class DataError(CredlensError):
    """Input data violates a precondition."""


# -- tabular -----------------------------------------------------------------

class MissingColumn(DataError):
    pass


class UnknownTargetValue(DataError):
    pass


class EmptyFile(DataError):
    pass


class AllMissingColumn(DataError):
    pass


class UnknownFeature(DataError):
    pass


class SingleClassDataset(DataError):
    pass


class TooManyFolds(DataError):
    pass


# -- gbdt --------------------------------------------------------------------

class NonFiniteInput(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class CorruptModel(CredlensError):
    pass


class VersionMismatch(CredlensError):
    pass


# -- shap --------------------------------------------------------------------

class ZeroCover(CredlensError):
    pass


class TooManyFeatures(CredlensError):
    pass


class SchemaMismatch(DataError):
    pass


# -- girp / metrics ----------------------------------------------------------

class EmptyMatrix(DataError):
    pass


class NoMatchingRule(CredlensError):
    """A point fell through the rule set; rules from one tree tile the space,
    so this always signals a corrupted rule set."""


class EmptyRuleSet(DataError):
    pass


class LengthMismatch(DataError):
    pass


# -- anchors / protodash -----------------------------------------------------

class EmptyTrainingSet(DataError):
    pass


class EmptyCandidates(DataError):
    pass


class KTooLarge(DataError):
    pass


class MissingArtifact(CredlensError):
    """A pipeline stage ran before the artifacts it needs were produced."""
