"""Data-driven detect/stabilize control of unknown switched linear systems.

From per-mode initialization records alone, the package synthesizes state
feedback gains certified over every system consistent with the data, runs an
online controller that alternates mode detection with stabilization, and
audits closed-loop stability through dwell/activation-time fits, timer
sequences, a per-step contraction certificate, and an explicit state bound.
"""

from . import analysis, cli, controller, data, detection, linalg, lmi, plant, simulate
from .controller import ModeLibrary, Phase, build_library
from .data import DataMatrices, MatchSet
from .linalg import DEFAULT_TOL, Tolerance
from .lmi import GainCertificate, GrowthParams
from .plant import Adaptive, Precomputed, SwitchedPlant
from .simulate import RunLog, run_closed_loop

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "cli",
    "controller",
    "data",
    "detection",
    "linalg",
    "lmi",
    "plant",
    "simulate",
    "ModeLibrary",
    "Phase",
    "build_library",
    "DataMatrices",
    "MatchSet",
    "DEFAULT_TOL",
    "Tolerance",
    "GainCertificate",
    "GrowthParams",
    "Adaptive",
    "Precomputed",
    "SwitchedPlant",
    "RunLog",
    "run_closed_loop",
    "__version__",
]
