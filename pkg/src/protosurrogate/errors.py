"""Exception hierarchy shared across the package.

Every error raised on a documented failure path derives from
:class:`ProtosurError`, so callers (and the CLI exit-code mapping) can
distinguish our failures from programming errors.
"""

from __future__ import annotations


class ProtosurError(Exception):
    """Base class for all package errors."""


# --- segmentation ---------------------------------------------------------

class EmptyInput(ProtosurError):
    """Input text is empty or all whitespace."""


class TokenizerMismatch(ProtosurError):
    """Stored token data disagrees with the text it claims to describe."""


# --- data_io ---------------------------------------------------------------

class ParseError(ProtosurError):
    """A dataset line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicateId(ProtosurError):
    """Two dataset records share a document id."""


class BadMagic(ProtosurError):
    """A binary file does not start with the expected magic bytes."""


class VersionUnsupported(ProtosurError):
    """A binary file declares a format version this build cannot read."""


class ShapeMismatch(ProtosurError):
    """Declared shapes are internally inconsistent."""


class CorruptPayload(ProtosurError):
    """Payload bytes are truncated, non-finite, or fail the checksum."""


# --- encoder ---------------------------------------------------------------

class NonFiniteGradient(ProtosurError):
    """A backward pass produced NaN or Inf."""


# --- prototypes ------------------------------------------------------------

class TooFewPoints(ProtosurError):
    """Fewer distinct points than requested cluster centers."""


class ZeroVector(ProtosurError):
    """Cosine similarity requested against a (near-)zero vector."""


# --- training ---------------------------------------------------------------

class LabelOutOfRange(ProtosurError):
    """A class label does not fit the model's class count."""


class MissingBundle(ProtosurError):
    """A document has no embedding bundle paired with it."""


class DivergedLoss(ProtosurError):
    """Training hit a non-finite loss; carries the offending batch index."""

    def __init__(self, batch_index: int, doc_ids: list[str]):
        super().__init__(
            f"non-finite loss in batch {batch_index} (docs: {', '.join(doc_ids)})"
        )
        self.batch_index = batch_index
        self.doc_ids = doc_ids


# --- explanation / faithfulness ---------------------------------------------

class UnknownFormat(ProtosurError):
    """Requested report format is not supported."""


class IndexOutOfRange(ProtosurError):
    """A sentence index does not exist in the document."""


class EmptyDataset(ProtosurError):
    """An evaluation was requested over zero documents."""


# --- target_client -----------------------------------------------------------

class UnparseableAnswer(ProtosurError):
    """The target model's reply did not match the expected answer format."""

    def __init__(self, raw: str, expected: str):
        super().__init__(f"cannot parse answer {raw!r} (expected {expected})")
        self.raw = raw


class HttpFailure(ProtosurError):
    """All HTTP attempts failed; carries the attempt count."""

    def __init__(self, attempts: int, last_error: str):
        super().__init__(f"request failed after {attempts} attempts: {last_error}")
        self.attempts = attempts


class MissingPrediction(ProtosurError):
    """The prediction file has no entry for a requested document id."""


class UnknownDatasetKind(ProtosurError):
    """No prompt template exists for the requested dataset kind."""
