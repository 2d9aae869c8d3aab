"""Asynchronous stochastic approximation with ODE-method diagnostics."""
__version__ = "0.1.0"

from .drift import DriftField, affine_field, linear_field, callable_field  # noqa: E402
from .engine import RunConfig, RunHistory, run, replicate, replay  # noqa: E402
from .schedule import StepsizeSchedule, UpdateSetProcess, harmonic, power, constant  # noqa: E402

__all__ = [
    "DriftField", "affine_field", "linear_field", "callable_field",
    "RunConfig", "RunHistory", "run", "replicate", "replay",
    "StepsizeSchedule", "UpdateSetProcess", "harmonic", "power", "constant",
]
