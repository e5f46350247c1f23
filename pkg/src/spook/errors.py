"""Errors and diagnostics shared by every layer of the engine."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class Location:
    """Position in a source document, 1-based."""

    line: int
    column: int
    source: str = "<memory>"

    def __str__(self) -> str:
        return f"{self.source}:{self.line}:{self.column}"


class SpookError(Exception):
    """Base class for all engine errors.

    `code` is a stable machine-readable identifier used by the service layer.
    """

    code = "error"

    def __init__(self, message: str, location: Optional[Location] = None):
        super().__init__(message)
        self.message = message
        self.location = location

    def __str__(self) -> str:
        if self.location is not None:
            return f"{self.location}: {self.message}"
        return self.message


# --- model / language ------------------------------------------------------

class KbSyntaxError(SpookError):
    code = "syntax"


class DuplicateName(SpookError):
    code = "duplicate-name"


class UnknownReference(SpookError):
    code = "unknown-reference"


class UnknownAttribute(SpookError):
    code = "unknown-attribute"


class UnknownInstance(SpookError):
    code = "unknown-instance"


class UnknownKB(SpookError):
    code = "unknown-kb"


class NonSimpleChain(SpookError):
    """Chain has a multi-valued or simple interior hop, or a complex terminal."""

    code = "non-simple-chain"


class IncompatibleOverride(SpookError):
    code = "incompatible-override"


class BadValue(SpookError):
    code = "bad-value"


class InvalidModel(SpookError):
    """Raised when inference is attempted on a KB that fails validation."""

    code = "invalid-model"


# --- inference -------------------------------------------------------------

class ImpossibleEvidence(SpookError):
    code = "impossible-evidence"


class InputHasCPD(SpookError):
    code = "input-has-cpd"


class StateSpaceTooLarge(SpookError):
    code = "state-space-too-large"


class NaiveCapExceeded(SpookError):
    code = "naive-cap-exceeded"


class RangeMismatch(SpookError):
    code = "range-mismatch"


class CycleDetected(SpookError):
    code = "cycle-detected"


class RecursionDepthExceeded(SpookError):
    code = "recursion-depth-exceeded"


class UnsupportedStructure(SpookError):
    """A model shape with no defined semantics, e.g. chaining back through a
    multi-valued inverse from a generic context."""

    code = "unsupported-structure"


# --- sessions --------------------------------------------------------------

class ContradictoryEvidence(SpookError):
    code = "contradictory-evidence"
