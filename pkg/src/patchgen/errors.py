"""Exception taxonomy. CLI exit codes map onto these classes."""
from __future__ import annotations


class PatchGenError(Exception):
    """Base class for all package errors."""


class ConfigError(PatchGenError):
    """Invalid configuration value, unknown key, or inconsistent settings."""


class DataError(PatchGenError):
    """Input data violates a shape, range, or format contract."""


class ScheduleError(DataError):
    """Source material is incompatible with the requested scale schedule."""


class ResampleError(DataError):
    """Resampling target shape violates the operation's contract."""


class LossError(PatchGenError):
    """A loss was evaluated on non-finite inputs."""


class DivergenceError(PatchGenError):
    """Training produced a non-finite loss and cannot continue."""


class StateError(PatchGenError):
    """Checkpoint or model state is missing, locked, or inconsistent."""


class MetricError(PatchGenError):
    """Metric preconditions violated (too few samples, degenerate input)."""
