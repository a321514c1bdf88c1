"""
Exception hierarchy shared by the library and the command line.

Every error carries the process exit code the CLI reports for it and can be
rendered as a JSON-friendly dict for the machine-readable stderr line.
"""
from typing import Dict, List, Optional, Tuple


class SinkgpError(Exception):
    """Base class for all sinkgp errors."""

    exit_code = 1
    kind = 'error'

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> Dict:
        payload = {
            'error': self.kind,
            'message': self.message,
            'exit_code': self.exit_code,
        }
        if self.details:
            payload['details'] = self.details
        return payload


class ValidationError(SinkgpError, ValueError):
    """Invalid input: bad shapes, out-of-range parameters, mismatched versions."""

    exit_code = 2
    kind = 'validation'


class ParseError(ValidationError):
    """Malformed CSV / JSON / PGM input."""

    kind = 'parse'

    def __init__(self, message: str, path: Optional[str] = None, row: Optional[int] = None):
        location = []
        if path:
            location.append(str(path))
        if row is not None:
            location.append(f"row {row}")
        full = f"{': '.join(location)}: {message}" if location else message
        super().__init__(full, path=str(path) if path else None, row=row)
        self.row = row


class EmptyMeasureError(ValidationError):
    """A measure ended up with no atom of positive weight."""

    kind = 'empty_measure'


class NumericError(SinkgpError, ArithmeticError):
    """NaN/overflow, failed factorization or diverging Newton iterations."""

    exit_code = 3
    kind = 'numeric'


class ConvergenceError(SinkgpError):
    """An iterative method did not converge where convergence is required."""

    exit_code = 4
    kind = 'convergence'


class BatchError(SinkgpError):
    """Collects the failures of a batch of independent items, by index."""

    kind = 'batch'

    def __init__(self, failures: List[Tuple[int, SinkgpError]]):
        self.failures = sorted(failures, key=lambda item: item[0])
        lines = [f"  - item {index}: {error}" for index, error in self.failures]
        super().__init__(
            f"{len(self.failures)} item(s) failed:\n" + "\n".join(lines),
            indices=[index for index, _ in self.failures],
        )
        self.exit_code = max(error.exit_code for _, error in self.failures)
