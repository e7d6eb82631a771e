"""Exception hierarchy shared by the pipeline stages."""


class SstePredError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SstePredError, ValueError):
    """Malformed or out-of-range input data."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class InsufficientHistory(SstePredError, ValueError):
    """Not enough events or observations to perform the requested step."""


class DegenerateSeries(SstePredError, ValueError):
    """A series with zero variance where a correlogram or fit is required."""


class FutureCheckin(SstePredError, ValueError):
    """A check-in is dated after the reference time it is weighed against."""


class NoCandidates(SstePredError, LookupError):
    """No candidate region exists, so a location prediction must abstain."""


class FilterError(SstePredError, ArithmeticError):
    """The Kalman update produced a non-finite value and was rolled back."""
