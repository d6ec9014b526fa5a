"""Exception hierarchy.

Every error carries a stable ``code`` string so callers (and the CLI) can
map failures onto exit statuses without string matching on messages.
"""


class SosAllocError(Exception):
    code = "ERROR"


class DegenerateDataError(SosAllocError, ValueError):
    code = "DEGENERATE_DATA"


class DegreeCapError(SosAllocError, ValueError):
    code = "DEGREE_CAP"


class WrongDegreeError(SosAllocError, ValueError):
    code = "WRONG_DEGREE"


class ZeroPolynomialError(SosAllocError, ValueError):
    code = "ZERO_POLYNOMIAL"


class SolverError(SosAllocError):
    """Conic solve did not produce a usable point."""

    code = "NUMERICAL_FAILURE"

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class InfeasibleProgramError(SolverError):
    code = "INFEASIBLE"


class SliceFitError(SosAllocError):
    code = "SLICE_FIT_FAILED"

    def __init__(self, message, slice_index):
        super().__init__(message)
        self.slice_index = slice_index


class OutOfRangeError(SosAllocError, ValueError):
    code = "OUT_OF_RANGE"


class InfeasibleDemandError(SosAllocError):
    code = "INFEASIBLE_DEMAND"


class DataFormatError(SosAllocError, ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    code = "DATA_FORMAT"

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
