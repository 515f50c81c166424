"""
MONARCH CASTLE TECHNOLOGIES
ARCHSCOPE - Error Types
=======================
Every failure the toolkit reports is one of these. Library code raises,
the CLI catches ArchScopeError and turns it into an exit status.
"""

from typing import List, Optional


class ArchScopeError(Exception):
    """Base class for all ArchScope failures."""


# ============================================================================
# NUMERIC KERNEL
# ============================================================================

class ShapeError(ArchScopeError):
    """Array dimensions do not chain or do not match."""


class NumericError(ArchScopeError):
    """Non-finite value in a gradient, parameter or loss."""

    def __init__(self, message: str, index: Optional[int] = None, epoch: Optional[int] = None):
        super().__init__(message)
        self.index = index
        self.epoch = epoch


class RangeError(ArchScopeError):
    """Value outside its admissible range (epoch, ordinal, threshold)."""


class ArgumentError(ArchScopeError):
    """Caller passed an argument the operation cannot work with."""


# ============================================================================
# DATA
# ============================================================================

class IngestionError(ArchScopeError):
    """A record lacks a metric the encoding needs."""

    def __init__(self, message: str, arch_id: Optional[str] = None, feature: Optional[str] = None):
        super().__init__(message)
        self.arch_id = arch_id
        self.feature = feature


class DataError(ArchScopeError):
    """Measurements needed by an operation are missing or unusable."""

    def __init__(self, message: str, missing: Optional[List[str]] = None):
        super().__init__(message)
        self.missing = list(missing or [])


class ParseError(ArchScopeError):
    """Malformed line in a dataset file."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        super().__init__(message)
        self.line_no = line_no


class IntegrityError(ArchScopeError):
    """Dataset violates an identity constraint (duplicate arch_id)."""


class SpecError(ArchScopeError):
    """Synthetic benchmark spec cannot produce a meaningful dataset."""


# ============================================================================
# MODEL STATE
# ============================================================================

class StateError(ArchScopeError):
    """Object used before it was fitted, or lacks a required component."""


class DeviceLookupError(ArchScopeError, KeyError):
    """Device or label is not registered."""

    def __str__(self):
        return Exception.__str__(self)


class UnsupportedTransferError(ArchScopeError):
    """Cross-space transfer requested for a space-dependent encoding."""


# ============================================================================
# ANALYSIS / EXPERIMENTS
# ============================================================================

class UndefinedCorrelationError(ArchScopeError):
    """Rank correlation is undefined (too short or zero rank variance)."""


class InfeasibleSplitError(ArchScopeError):
    """Device filtering left no training devices."""


class ConfigError(ArchScopeError):
    """Experiment config failed schema validation."""

    def __init__(self, message: str, diagnostics: Optional[List[str]] = None):
        self.diagnostics = list(diagnostics or [])
        if self.diagnostics:
            message = message + "\n" + "\n".join(f"  - {d}" for d in self.diagnostics)
        super().__init__(message)
