"""Exception types raised across the package."""


class SectisError(Exception):
    """Base class for protocol and library errors."""


# cas
class NotFound(SectisError, KeyError):
    pass


class DigestCollision(SectisError):
    pass


# ledger
class DuplicateRegistration(SectisError):
    pass


class WrongPhase(SectisError):
    pass


class UnknownNode(SectisError):
    pass


class DanglingDigest(SectisError):
    pass


class MissingModel(SectisError):
    pass


class NotEnoughEligible(SectisError):
    pass


class DuplicateRecord(SectisError):
    pass


class NotAValidator(SectisError):
    pass


class NotAggregator(SectisError):
    pass


class ScoresMissing(SectisError):
    pass


class EmptyNetwork(SectisError):
    pass


# nn
class ShapeMismatch(SectisError, ValueError):
    pass


class EmptyDataset(SectisError, ValueError):
    pass


class ArchitectureMismatch(SectisError, ValueError):
    pass


class NoSourceSamples(SectisError, ValueError):
    pass


# commitments
class ParamsMismatch(SectisError):
    pass


# reputation
class EmptyInput(SectisError, ValueError):
    pass


class MissingCentroid(SectisError):
    pass


class NoValidators(SectisError):
    pass


# simulator / cli
class ConfigInvalid(SectisError, ValueError):
    pass


class DatasetLoadError(SectisError):
    pass
