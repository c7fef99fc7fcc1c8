"""Exception hierarchy shared by every lmpwatch module.

Each exception class carries the exit code the command line returns when it
escapes a subcommand: 2 for validation, 3 for numeric failures, 4 for I/O.
"""
from typing import Optional, Sequence

import numpy as np


class LmpwatchError(Exception):
    exit_code = 1


class InputError(LmpwatchError):
    exit_code = 2


class StructuralError(InputError):
    """Disconnected network or an outage that would island part of it."""


class StreamParseError(InputError):

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[str] = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f'line {line}: {message}'
        super().__init__(message)


class ThresholdRangeError(InputError):
    pass


class MissingAtlasError(InputError):
    pass


class NumericError(LmpwatchError):
    exit_code = 3


class InfeasibleError(NumericError):

    def __init__(self, message: str, report: Optional[dict] = None):
        self.report = report or {}
        super().__init__(message)


class NonConvergenceError(NumericError):

    def __init__(self, message: str, residuals=None):
        self.residuals = residuals
        super().__init__(f'{message} (residuals: {residuals})')


class DegenerateRegionError(NumericError):

    def __init__(self, message: str, active_set: Sequence[int] = (), xi=None):
        self.active_set = tuple(int(i) for i in active_set)
        self.xi = None if xi is None else np.asarray(xi, dtype=float).copy()
        super().__init__(f'{message} (active set {list(self.active_set)}, xi {None if xi is None else self.xi.tolist()})')


class DegenerateDensityError(NumericError):
    pass


class ScenarioError(NumericError):

    def __init__(self, message: str, step: int):
        self.step = step
        super().__init__(f'step {step}: {message}')


class CacheError(LmpwatchError):
    exit_code = 4
