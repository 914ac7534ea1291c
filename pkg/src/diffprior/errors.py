"""Exception hierarchy shared by every module.

Each error carries an ``exit_code`` so the command line layer can map
failures onto its documented codes without string matching.
"""


class DiffPriorError(Exception):
    exit_code = 2


class ShapeError(DiffPriorError, ValueError):
    def __init__(self, message, *shapes):
        super().__init__(message)
        self.shapes = shapes


class NumericDomainError(DiffPriorError, ValueError):
    exit_code = 3


class NonFiniteLossError(DiffPriorError, FloatingPointError):
    exit_code = 3

    def __init__(self, message, breakdown=None):
        super().__init__(message)
        self.breakdown = breakdown


class ConfigError(DiffPriorError, ValueError):
    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class DatasetError(DiffPriorError, ValueError):
    pass


class CheckpointError(DiffPriorError, ValueError):
    pass


class PriorMismatchError(CheckpointError):
    pass


class TimestepError(DiffPriorError, ValueError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
