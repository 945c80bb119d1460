"""Exception types raised across the package.

Each class maps to one failure mode of the processing chain so callers
(and the command-line front end) can react without string matching.
"""


class ModalidError(Exception):
    """Base class for all package errors."""


class InvalidFilterError(ModalidError, ValueError):
    """Filter cutoffs are not realizable at the given sample rate."""


class TooShortError(ModalidError, ValueError):
    """Input series is too short for the requested operation."""


class AlignmentError(ModalidError, ValueError):
    """Paired channels disagree in length or sample rate."""


class CsvParseError(ModalidError, ValueError):
    """A data file could not be parsed.

    Attributes
    ----------
    line : int or None
        1-based line number of the offending row, when known.
    """

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class DegenerateCoherenceError(ModalidError, ValueError):
    """Coherence requested from a single average (identically one)."""


class InvalidParameterError(ModalidError, ValueError):
    """A numeric parameter is outside its admissible range."""


class RankDeficientError(ModalidError):
    """Requested realization order exceeds the numerical rank.

    Carries the singular-value spectrum so callers can inspect how the
    order request failed.
    """

    def __init__(self, message, singular_values=None):
        super().__init__(message)
        self.singular_values = singular_values


class SingularModeError(ModalidError, ValueError):
    """An eigenvalue at zero makes the matrix logarithm undefined."""


class IdentificationFailedError(ModalidError):
    """No usable model could be identified.

    Attributes
    ----------
    diagnostics : dict
        Per-band or per-segment failure descriptions.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnobservableModelError(ModalidError):
    """Observability matrix is rank deficient; no initial state exists."""


class UndefinedScoreError(ModalidError, ValueError):
    """Fit score undefined (constant measured signal)."""


class MetadataError(ModalidError, ValueError):
    """Required metadata is missing.

    Attributes
    ----------
    offenders : list
        Identifiers of the records that lack the metadata.
    """

    def __init__(self, message, offenders=None):
        super().__init__(message)
        self.offenders = offenders or []


class ConfigurationError(ModalidError, ValueError):
    """Inconsistent configuration (e.g. sampling-time mismatch)."""


class UnknownLocationError(ModalidError, KeyError):
    """Location id not present in the model registry."""
