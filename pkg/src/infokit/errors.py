"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for every error raised by infokit."""


class MalformedHeader(ToolkitError):
    """File does not parse as a valid EMB1/PRB1 artifact."""


class ChecksumMismatch(ToolkitError):
    """Stored checksum disagrees with the file contents."""


class InvariantViolation(ToolkitError):
    """A table or model violates one of its structural invariants."""


class UnknownId(ToolkitError):
    """A requested sample id is not present in the table."""


class DimMismatch(ToolkitError):
    """Feature dimensionality or class count disagrees between operands."""


class DuplicateId(ToolkitError):
    """Two tables being merged share at least one sample id."""


class EmptyTable(ToolkitError):
    """Operation requires a non-empty table."""


class AbsentClass(ToolkitError):
    """A class with zero support samples was used where support is required."""


class MissingLogits(ToolkitError):
    """Operation needs a logit matrix but the table carries none."""


class EmptyScores(ToolkitError):
    """Operation requires a non-empty score table."""


class InsufficientPool(ToolkitError):
    """Requested budget exceeds what the pool can supply."""


class DivergenceDetected(ToolkitError):
    """Probe training produced a non-finite loss."""


class EmptyDistances(ToolkitError):
    """Migration split requires at least one distance entry."""


def error_code(exc: BaseException) -> str:
    """Stable machine-readable code for an exception (UPPER_SNAKE of the class name)."""
    name = type(exc).__name__
    out = [name[0]]
    for ch in name[1:]:
        if ch.isupper():
            out.append("_")
        out.append(ch)
    return "".join(out).upper()
