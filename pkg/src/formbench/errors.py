"""Exception types shared across formbench modules."""

from __future__ import annotations


class FormbenchError(Exception):
    """Base class for all formbench errors."""


class InvalidBoxError(FormbenchError, ValueError):
    """A bounding box violates its construction invariants."""


class InvalidImageDimensionsError(FormbenchError, ValueError):
    """An image width or height is zero or negative."""


class InvalidSegmentError(FormbenchError, ValueError):
    """A hierarchical-name segment contains the reserved separator."""


class CorpusError(FormbenchError):
    """A dataset or corpus file failed validation."""


class IngestionError(CorpusError):
    """A single annotation file could not be parsed."""

    def __init__(self, path: str, reason: str):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason


class MissingAssetError(CorpusError):
    """An annotation references an image that does not exist."""


class EmptyDatasetError(CorpusError):
    """Statistics were requested for an empty document list."""


class UnsatisfiableSpecError(FormbenchError):
    """A correctness spec references facts the persona does not hold."""


class ConfigurationError(FormbenchError):
    """A run or component was configured inconsistently."""


class EpisodeOverError(FormbenchError, RuntimeError):
    """An action was applied to a terminated canvas (harness bug)."""


class EvaluationInputError(FormbenchError):
    """Evaluation inputs are inconsistent (e.g. missing ground truth)."""
