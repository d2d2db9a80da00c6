class RebelHadError(Exception):
    """Base class for errors raised by rebelhad."""


class FormatError(RebelHadError, ValueError):
    """A cube, mask or model file does not follow its binary format."""


class ModelFormatError(FormatError):
    """An RSM1 model file is malformed or does not match the requested stage."""


class SpecError(RebelHadError, ValueError):
    """A scene specification cannot be realized."""


class NumericalError(RebelHadError, ArithmeticError):
    """Non-finite values or an unrecoverable degenerate linear algebra problem."""
