"""Exception hierarchy.

User-input problems derive from :class:`InputError`; numerical failures from
:class:`NumericalError`. The CLI maps the two families to different exit codes.
"""


class ResidconfError(Exception):
    pass


class InputError(ResidconfError):
    pass


class SchemaError(InputError):
    pass


class ParseError(InputError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class ValidationError(InputError):
    pass


class NumericalError(ResidconfError):
    pass


class RankDeficientError(NumericalError):
    def __init__(self, message: str, columns: list[str] | None = None):
        self.columns = list(columns or [])
        super().__init__(message)


class NotConvergedError(NumericalError):
    pass


class ZeroVarianceError(NumericalError):
    pass


class SimulationError(ResidconfError):
    pass
