"""EIT light storage: Maxwell-Bloch integration, storage protocol and its optimizations"""

from .fields import SampledPulse, SpinWave
from .medium import CalibrationAnchors, MediumParams
from .solver import SolverGrid

__all__ = [
    "CalibrationAnchors",
    "MediumParams",
    "SampledPulse",
    "SolverGrid",
    "SpinWave",
]
