"""Exception types raised across the package."""

from __future__ import annotations


class SpecError(ValueError):
    """An operator spec, its hyperparameters, or its params are invalid."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class DivergedError(FloatingPointError):
    def __init__(self, epoch: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch


class NoCommonSupportError(ValueError):
    pass


class OutOfSupportError(ValueError):
    def __init__(self, target: float, interval: tuple[int, int], kind: str = ""):
        lo, hi = interval
        who = f" for {kind}" if kind else ""
        super().__init__(f"target {target} outside feasible interval [{lo}, {hi}]{who}")
        self.target = target
        self.interval = interval


class NoCrossoverError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


class ResultsParseError(ValueError):
    def __init__(self, path: str, offset: int, reason: str):
        super().__init__(f"{path}: parse error at offset {offset}: {reason}")
        self.path = path
        self.offset = offset
