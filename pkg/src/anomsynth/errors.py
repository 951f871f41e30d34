"""Exception hierarchy shared across the toolkit.

Exit-code mapping lives in the CLI: config errors -> 2, backend/transport
errors -> 3, generation failures -> 4.
"""

from __future__ import annotations


class AnomSynthError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(AnomSynthError, ValueError):
    """An argument violates an operation's precondition."""


class UndefinedBaseError(InvalidInputError):
    """Area fraction requested against an empty base mask."""


class ConfigError(AnomSynthError):
    """Run configuration is missing or malformed."""


class TaxonomyError(AnomSynthError):
    """Category name not present in the library taxonomy."""


class NotFoundError(AnomSynthError):
    """Asset id (or other keyed record) does not exist."""


class StateConflictError(AnomSynthError):
    """Curation decision attempted on an asset that is not pending."""


class NoCandidatesError(AnomSynthError):
    """Matching requested against an empty pool."""


class UndefinedDistanceError(AnomSynthError):
    """Intra-cluster distance requested for a cluster with fewer than 2 members."""


class TransportError(AnomSynthError):
    """A live backend could not be reached.

    Carries the number of attempts made so callers can log retry history.
    """

    def __init__(self, message: str, retries: int = 0):
        super().__init__(message)
        self.retries = retries


class ParseError(AnomSynthError):
    """A backend answer could not be parsed; carries the raw text."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


class GenerationFailedError(AnomSynthError):
    """Mask rejection sampling exhausted its retry budget.

    ``reason`` records the predicate that failed on the final attempt
    ("foreground overlap" or "texture overlap").
    """

    def __init__(self, reason: str, retries: int):
        super().__init__(f"mask generation failed after {retries} retries ({reason})")
        self.reason = reason
        self.retries = retries
