class DFDError(Exception):
    pass


class ConfigError(DFDError):
    """Bad configuration key, value or incompatible model/input geometry."""


class DecodeError(DFDError, ValueError):
    pass


class LayoutError(DFDError):
    pass


class NumericError(DFDError, ArithmeticError):
    pass


class StateError(DFDError):
    pass


class UndefinedMetricError(DFDError, ValueError):
    pass
