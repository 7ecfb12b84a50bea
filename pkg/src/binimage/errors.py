"""Exception types shared across the package.

Every error raised by the library is a subclass of :class:`BinImageError`,
split into validation errors (bad inputs, bad configuration) and runtime
errors (failures while executing an otherwise valid request). The CLI maps
validation errors to exit code 1 and runtime errors to exit code 2.
"""

from __future__ import annotations


class BinImageError(Exception):
    """Base class for all library errors."""


class ValidationError(BinImageError):
    """Invalid input or configuration, detectable before doing real work."""


class RuntimeFailure(BinImageError):
    """Failure while executing a valid request."""


# --- preprocessing ---

class EmptyInput(ValidationError):
    """Byte stream of length zero."""

    def __init__(self, source_id: str = ""):
        self.source_id = source_id
        suffix = f": {source_id}" if source_id else ""
        super().__init__(f"empty byte stream{suffix}")


class NotAligned(ValidationError):
    """Byte length not divisible by the fixed image width."""


# --- dataset ---

class MissingFile(ValidationError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"missing file: {path}")


class UnknownFamily(ValidationError):
    def __init__(self, path: str):
        self.path = path
        super().__init__(f"manifest row with empty family: {path}")


class FamilyTooSmall(ValidationError):
    def __init__(self, family: str, count: int):
        self.family = family
        self.count = count
        super().__init__(f"family {family!r} has {count} sample(s); need at least 2")


class BadSpec(ValidationError):
    """Out-of-range synthetic corpus parameters."""


# --- model / masking / losses ---

class BadConfig(ValidationError):
    """Inconsistent model, mask, or training configuration."""


class ShapeMismatch(ValidationError):
    """Tensor shape incompatible with the configured architecture."""


class BatchMismatch(ValidationError):
    """Probability and label batches of different lengths."""


class NonFinite(ValidationError):
    """NaN or infinity where a finite value is required."""


class StructuralMismatch(ValidationError):
    """Student and teacher parameter name/shape lists disagree."""


# --- trainer ---

class NonFiniteLoss(RuntimeFailure):
    """Training loss became NaN or infinite."""

    def __init__(self, step: int, ce: float, d2v: float):
        self.step = step
        super().__init__(f"non-finite loss at step {step}: ce={ce}, d2v={d2v}")


class EmptyCorpus(ValidationError):
    """Operation requires at least one sample."""


class CheckpointWriteError(RuntimeFailure):
    """Checkpoint could not be written; reports the last good checkpoint."""

    def __init__(self, path: str, last_good: str | None, cause: str):
        self.path = path
        self.last_good = last_good
        suffix = f"; last good checkpoint: {last_good}" if last_good else "; no checkpoint saved yet"
        super().__init__(f"failed to write checkpoint {path}: {cause}{suffix}")


class CheckpointMismatch(ValidationError):
    """Checkpoint was written under a different configuration."""


# --- analysis ---

class TooFewRows(ValidationError):
    """Projection requires at least 3 embedding rows."""


class DegenerateLabels(ValidationError):
    """Cluster quality needs >= 2 families with >= 2 rows each."""


class EmptyReference(ValidationError):
    """Novelty scoring against an empty reference table."""


class ExternalToolFailure(RuntimeFailure):
    """External projector command failed."""

    def __init__(self, command: str, returncode: int, stderr: str):
        self.command = command
        self.returncode = returncode
        self.stderr = stderr
        super().__init__(
            f"external projector {command!r} exited {returncode}: {stderr.strip()[:500]}"
        )
