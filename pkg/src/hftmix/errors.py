"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the CLI can emit a
structured error record and a stable exit status.
"""

from __future__ import annotations


class HFTMixError(Exception):
    code = "Error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self), **self.details}


# market_data
class MissingColumn(HFTMixError):
    code = "MissingColumn"


class NonMonotonicTimestamps(HFTMixError):
    code = "NonMonotonicTimestamps"


class GapInSeries(HFTMixError):
    code = "GapInSeries"


class InvalidFrame(HFTMixError):
    code = "InvalidFrame"


class RangeOutOfBounds(HFTMixError):
    code = "RangeOutOfBounds"


class InsufficientHistory(HFTMixError):
    code = "InsufficientHistory"


# indicators
class DegenerateBar(HFTMixError):
    code = "DegenerateBar"


class EmptyTraining(HFTMixError):
    code = "EmptyTraining"


# decomposition
class SeriesTooShort(HFTMixError):
    code = "SeriesTooShort"


class TooFewChunks(HFTMixError):
    code = "TooFewChunks"


class EmptySubset(HFTMixError):
    code = "EmptySubset"


# env
class SteppedAfterDone(HFTMixError):
    code = "SteppedAfterDone"


# neural
class ShapeMismatch(HFTMixError):
    code = "ShapeMismatch"


class IndexOutOfRange(HFTMixError):
    code = "IndexOutOfRange"


class NonFiniteGradient(HFTMixError):
    code = "NonFiniteGradient"


class CheckpointError(HFTMixError):
    code = "CheckpointError"


# optimal_q
class SegmentTooShort(HFTMixError):
    code = "SegmentTooShort"


class SegmentTooLong(HFTMixError):
    code = "SegmentTooLong"


# agents
class MissingOptimalQ(HFTMixError):
    code = "MissingOptimalQ"


class InvalidEpochs(HFTMixError):
    code = "InvalidEpochs"


class PoolIncomplete(HFTMixError):
    code = "PoolIncomplete"


class EmptySeries(HFTMixError):
    code = "EmptySeries"


# memory
class KeyDimMismatch(HFTMixError):
    code = "KeyDimMismatch"


class EmptyMemory(HFTMixError):
    code = "EmptyMemory"


# cli
class ConfigInvalid(HFTMixError):
    code = "ConfigInvalid"


class MissingDependency(HFTMixError):
    code = "MissingDependency"
