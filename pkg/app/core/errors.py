"""
Exception hierarchy for the workbench.

Every error carries the process exit code the CLI reports for it:
1 usage error, 2 data/format error, 3 numerical failure.
"""

from enum import Enum
from typing import Optional


class WorkbenchError(Exception):
    """Base exception for workbench errors."""
    exit_code = 2


class UsageError(WorkbenchError):
    """Bad command-line usage."""
    exit_code = 1


# --- data / format family (exit 2) ---


class ConfigError(WorkbenchError):
    """Invalid configuration file entry or value."""

    def __init__(self, message: str, line: Optional[int] = None, text: Optional[str] = None):
        if line is not None:
            message = f"line {line}: {message}" + (f" ({text!r})" if text else "")
        super().__init__(message)
        self.line = line
        self.text = text


class MalformedTopology(WorkbenchError):
    """Port assignment does not describe a valid 13-port topology."""
    pass


class ParseErrorKind(str, Enum):
    UNKNOWN_TOKEN = "UnknownToken"
    UNEXPECTED_TOKEN = "UnexpectedToken"
    MISSING_DEVICE = "MissingDevice"
    DUPLICATE_DEVICE = "DuplicateDevice"
    BAD_NET_NAME = "BadNetName"
    TRUNCATED = "Truncated"


class ParseError(WorkbenchError):
    """Netlist text does not follow the encoding grammar."""

    def __init__(self, kind: ParseErrorKind, message: str, clause: str = ""):
        text = f"{kind.value}: {message}"
        if clause:
            text += f" in clause {clause!r}"
        super().__init__(text)
        self.kind = kind
        self.clause = clause


class UnknownToken(ParseError):
    """Token outside the closed vocabulary."""

    def __init__(self, token: str, clause: str = ""):
        super().__init__(ParseErrorKind.UNKNOWN_TOKEN, f"unknown token {token!r}", clause)
        self.token = token


class FormatError(WorkbenchError):
    """Malformed artifact file (dataset, report)."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(WorkbenchError):
    """Malformed or incompatible checkpoint file."""
    pass


class ArtifactExists(WorkbenchError):
    """Refusing to overwrite an existing artifact without --force."""
    pass


class DegenerateLabels(WorkbenchError):
    """Training data contains a single class."""
    pass


class DegenerateGroups(WorkbenchError):
    """Two-sample test inputs are too small or have no variance."""
    pass


class EmptyTarget(WorkbenchError):
    """A loss was requested over zero target positions."""
    pass


# --- numerical family (exit 3) ---


class NumericalError(WorkbenchError):
    """Base for numerical failures."""
    exit_code = 3


class SingularSystem(NumericalError):
    """MNA matrix could not be factored."""
    pass


class NonFiniteError(NumericalError):
    """A value became NaN/inf or exceeded its magnitude bound."""
    pass


class ShapeMismatch(NumericalError):
    """Incompatible tensor shapes."""
    pass


class NonScalarLoss(NumericalError):
    """backward() called on a tensor with more than one element."""
    pass


class SequenceTooLong(NumericalError):
    """Token sequence exceeds the model context length."""
    pass


class NonStochasticRows(NumericalError):
    """Distribution matrix rows do not sum to one."""
    pass
