"""Exception types raised across the package.

Every error carries a stable ``code`` string so the CLI can map failures
to exit codes without string-matching messages.
"""

from __future__ import annotations


class PoflscError(Exception):
    """Base class; ``code`` identifies the failure kind."""

    code = "ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


class ConfigInvalid(PoflscError):
    code = "CONFIG_INVALID"

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NoPoolFormed(PoflscError):
    code = "NO_POOL_FORMED"


class BadParams(PoflscError):
    code = "BAD_PARAMS"


class UnknownMiner(PoflscError):
    code = "UNKNOWN_MINER"


class DimensionMismatch(PoflscError):
    code = "DIMENSION_MISMATCH"


class BadMagic(PoflscError):
    code = "BAD_MAGIC"


class CountMismatch(PoflscError):
    code = "COUNT_MISMATCH"


class TruncatedFile(PoflscError):
    code = "TRUNCATED_FILE"


class DatasetTooSmall(PoflscError):
    code = "DATASET_TOO_SMALL"


class EmptyRound(PoflscError):
    code = "EMPTY_ROUND"


class StaleNegative(PoflscError):
    code = "STALE_NEGATIVE"


class NoContributors(PoflscError):
    code = "NO_CONTRIBUTORS"


class TooManyMembers(PoflscError):
    code = "TOO_MANY_MEMBERS"


class PartnershipUnknownPool(PoflscError):
    code = "PARTNERSHIP_UNKNOWN_POOL"


class InvalidTx(PoflscError):
    code = "INVALID_TX"


class NoCandidate(PoflscError):
    code = "NO_CANDIDATE"


class AlreadyIssued(PoflscError):
    code = "ALREADY_ISSUED"


class SubsetTooLarge(PoflscError):
    code = "SUBSET_TOO_LARGE"


class NoModel(PoflscError):
    code = "NO_MODEL"


class MissingSeeds(PoflscError):
    code = "MISSING_SEEDS"
