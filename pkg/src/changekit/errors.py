"""Exception types shared across the toolkit."""

from __future__ import annotations

from dataclasses import dataclass, field


class ChangekitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ChangekitError):
    """Bad or missing configuration value."""


@dataclass(frozen=True)
class ValidationIssue:
    """One problem found while scanning a corpus.

    kind is one of: missing_file, caption_count_mismatch, duplicate_sample_id,
    change_map_size_mismatch, bad_index.
    """

    kind: str
    sample_id: str
    detail: str

    def __str__(self) -> str:
        return f"[{self.kind}] {self.sample_id}: {self.detail}"


class CorpusValidationError(ChangekitError):
    """Aggregated report of every issue found in one corpus scan."""

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = issues
        lines = "\n".join(f"  {i}" for i in issues)
        super().__init__(f"corpus validation failed with {len(issues)} issue(s):\n{lines}")


class IoFailure(ChangekitError):
    """Filesystem-level failure while reading or writing artifacts."""


class MalformedLine(ChangekitError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class SchemaViolation(ChangekitError):
    def __init__(self, field_name: str, detail: str, line_no: int | None = None):
        self.field_name = field_name
        self.line_no = line_no
        where = f"line {line_no}: " if line_no is not None else ""
        super().__init__(f"{where}field '{field_name}': {detail}")


class DecodeFailure(ChangekitError):
    """Change-map bytes could not be decoded as an image."""


class UnknownPixelValue(ChangekitError):
    def __init__(self, value, location: tuple[int, int]):
        self.value = value
        self.location = location
        super().__init__(f"pixel value {value!r} at (x={location[0]}, y={location[1]}) not in palette")


class BackgroundCategoryRequested(ChangekitError):
    """Connected components are only defined for change categories."""


class DegenerateResult(ChangekitError):
    """Simplification could not retain 3 non-collinear vertices."""


class OutOfBoundsVertex(ChangekitError):
    def __init__(self, vertex: tuple[float, float], width: int, height: int):
        self.vertex = vertex
        super().__init__(f"vertex {vertex} outside [0, {width}] x [0, {height}]")


class ParseFailure(ChangekitError):
    def __init__(self, position: int, reason: str):
        self.position = position
        self.reason = reason
        super().__init__(f"at offset {position}: {reason}")


class CoordinateOutOfRange(ChangekitError):
    def __init__(self, value: float):
        self.value = value
        super().__init__(f"coordinate {value} outside [0, 1]")


class EmptyHypothesis(ChangekitError):
    """A caption metric received an empty hypothesis token sequence."""


class CorpusTooSmall(ChangekitError):
    """CIDEr-D needs at least two pairs to build document frequencies."""


class LengthMismatch(ChangekitError):
    """Prediction and ground-truth lists have different lengths."""


class EmptyInput(ChangekitError):
    """An aggregate score was requested over zero items."""


class MissingEvidence(ChangekitError):
    """Prompt construction lacks a required evidence block."""


class EndpointUnavailable(ChangekitError):
    """The chat endpoint kept failing after all retries."""


class AuthFailure(ChangekitError):
    """The chat endpoint rejected our credentials (or no token is set)."""


class EndpointTimeout(ChangekitError):
    """The chat endpoint timed out after all retries."""


class UnparseableResponse(ChangekitError):
    """A generation response contained zero extractable question/answer pairs."""


class UnparseableAnswer(ChangekitError):
    """A model answer did not match the expected yes/no or count shape."""


@dataclass
class RecordViolation:
    """One structural problem in a persisted conversation record."""

    record_id: str
    line_no: int
    problem: str

    def __str__(self) -> str:
        return f"line {self.line_no} ({self.record_id}): {self.problem}"
