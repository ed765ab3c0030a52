"""Exception hierarchy. The CLI maps each family onto an exit code."""


class LabelMeasureError(Exception):
    exit_code = 1


class ConfigError(LabelMeasureError):
    """Bad configuration, model specification or usage."""

    exit_code = 2


class SpecError(ConfigError):
    pass


class DataError(LabelMeasureError):
    """Input data violates a schema, integrity rule or modelling precondition."""

    exit_code = 3


class ParseError(DataError):
    def __init__(self, message, *, path=None, line=None):
        locus = ""
        if path is not None:
            locus = f"{path}"
            if line is not None:
                locus += f":{line}"
            locus += ": "
        super().__init__(locus + message)
        self.path = path
        self.line = line


class IntegrityError(DataError):
    pass


class DegenerateDataError(DataError):
    pass


class NumericalError(LabelMeasureError):
    exit_code = 4


class CapabilityError(NumericalError):
    """Problem is too large for a deliberately small-scale routine."""
