class VNNGPError(Exception):
    """Base class for package errors."""


class ArgumentError(VNNGPError, ValueError):
    pass


class NumericalError(VNNGPError, ArithmeticError):
    pass


class IngestionError(VNNGPError):
    pass


class UnsupportedError(VNNGPError):
    pass
