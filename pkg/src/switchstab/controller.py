"""Two-phase switched feedback controller.

The controller starts in a detection phase, feeds every measured transition
into the online record, and switches to stabilization as soon as exactly one
mode remains compatible. While stabilizing with the detected mode's gain it
monitors the one-step contraction of that mode's quadratic function; a
violation sends it back to detection with a fresh online buffer. The plant
may switch without the trigger firing as long as the monitored function keeps
contracting; the controller deliberately stays put in that case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .data import DataMatrices, MatchSet, pairwise_incompatible
from .detection import DetectionState, detect_input, detect_update, is_resolved
from .errors import DimensionMismatch, SynthesisInconclusive
from .linalg import DEFAULT_TOL, Tolerance
from .lmi import GainCertificate, synth_gain, verify_uniform_decay

__all__ = [
    "Phase",
    "ModeLibrary",
    "ControllerState",
    "build_library",
    "audit_library",
    "initial_controller",
    "control",
    "observe",
    "state_to_json",
    "state_from_json",
]

# relative slack so rounding noise alone cannot fire the trigger
_TRIGGER_SLACK = 1e-9


class Phase(Enum):
    DETECT = "detect"
    STABILIZE = "stabilize"


@dataclass(frozen=True)
class ModeLibrary:
    """Per-mode initialization record plus synthesized gain and certificate."""

    init_data: tuple[DataMatrices, ...]
    certs: tuple[GainCertificate, ...]

    def __post_init__(self):
        if len(self.init_data) != len(self.certs):
            raise DimensionMismatch("one certificate per record required")
        object.__setattr__(self, "init_data", tuple(self.init_data))
        object.__setattr__(self, "certs", tuple(self.certs))

    @property
    def p(self) -> int:
        return len(self.certs)

    @property
    def n(self) -> int:
        return self.init_data[0].n

    @property
    def m(self) -> int:
        return self.init_data[0].m

    @property
    def lam(self) -> float:
        return self.certs[0].lam


def build_library(init_data: list[DataMatrices], lam: float,
                  tol: Tolerance = DEFAULT_TOL, margin: float | None = None,
                  verify: bool = True) -> ModeLibrary:
    """Synthesize a gain/certificate pair for every initialization record.

    Solver output is not trusted: each synthesized pair is re-checked against
    200 sampled consistent systems unless ``verify`` is disabled.
    """
    certs = []
    for i, d in enumerate(init_data):
        cert = synth_gain(d, lam, tol, margin)
        if verify and not verify_uniform_decay(d, cert, sample_count=200, tol=1e-6):
            raise SynthesisInconclusive(
                f"mode {i}: synthesized gain failed the sampled decay re-check"
            )
        certs.append(cert)
    return ModeLibrary(init_data=tuple(init_data), certs=tuple(certs))


def audit_library(lib: ModeLibrary, tol: Tolerance = DEFAULT_TOL,
                  sample_count: int = 200, decay_tol: float = 1e-6) -> dict:
    """Independent checks: per-mode decay on sampled systems, pairwise record
    incompatibility. Returns {'decay': [bool per mode], 'incompatible': bool}."""
    decay = [
        verify_uniform_decay(d, c, sample_count=sample_count, tol=decay_tol)
        for d, c in zip(lib.init_data, lib.certs)
    ]
    return {
        "decay": decay,
        "incompatible": pairwise_incompatible(list(lib.init_data), tol),
    }


@dataclass(frozen=True)
class ControllerState:
    """Phase flag, detected mode, detection buffers, and the mode library."""

    phase: Phase
    sigma_d: int | None
    det: DetectionState
    library: ModeLibrary
    seed_violation: bool = False
    last_pruned: tuple[int, ...] | None = None  # match set after the last update

    def __post_init__(self):
        if self.phase is Phase.STABILIZE and self.sigma_d is None:
            raise ValueError("stabilization phase requires a detected mode")


def initial_controller(library: ModeLibrary, x0, u_max: float,
                       seed_violation: bool = False) -> ControllerState:
    """Controller in its initial detection phase with the online record at x0."""
    det = DetectionState.fresh(x0, library.m, library.p, u_max)
    return ControllerState(
        phase=Phase.DETECT, sigma_d=None, det=det,
        library=library, seed_violation=seed_violation,
    )


def control(st: ControllerState, x_t: np.ndarray,
            tol: Tolerance = DEFAULT_TOL) -> tuple[np.ndarray, ControllerState]:
    """Input for the current step: detection input or detected-mode feedback."""
    x_t = np.asarray(x_t, dtype=float)
    if st.phase is Phase.DETECT:
        return detect_input(st.det, x_t, tol), st
    return st.library.certs[st.sigma_d].K @ x_t, st


def observe(st: ControllerState, x_t: np.ndarray, u_t: np.ndarray,
            x_next: np.ndarray, tol: Tolerance = DEFAULT_TOL) -> ControllerState:
    """Feed the measured transition and run the phase logic.

    Detection: record the transition, prune, and toggle to stabilization when
    a single mode remains (the match set is then re-armed to all modes).
    Stabilization: test the one-step contraction of the detected mode's
    quadratic function; on violation, toggle to detection with the online
    record reset. The default reset keeps only x_next, the state at which the
    next detection step actually starts; with ``seed_violation`` the record
    is seeded with the violating transition itself, which is valid whenever
    the post-switch mode is still active during the coming detection phase.
    """
    x_t = np.asarray(x_t, dtype=float)
    u_t = np.asarray(u_t, dtype=float)
    x_next = np.asarray(x_next, dtype=float)
    if st.phase is Phase.DETECT:
        det = detect_update(st.det, x_t, u_t, x_next, list(st.library.init_data), tol)
        pruned = det.matches.remaining
        resolved = is_resolved(det)  # raises EmptyMatchSet when nothing is left
        if resolved is None:
            return replace(st, det=det, last_pruned=pruned)
        det = replace(det, matches=MatchSet.full(st.library.p))
        return replace(
            st, phase=Phase.STABILIZE, sigma_d=resolved, det=det, last_pruned=pruned,
        )
    P = st.library.certs[st.sigma_d].P
    lam = st.library.certs[st.sigma_d].lam
    v_now = float(x_t @ P @ x_t)
    v_next = float(x_next @ P @ x_next)
    if v_next <= lam * v_now * (1.0 + _TRIGGER_SLACK):
        return replace(st, last_pruned=None)
    if st.seed_violation:
        online = DataMatrices.from_initial_state(x_t, st.library.m).append(u_t, x_next)
    else:
        online = DataMatrices.from_initial_state(x_next, st.library.m)
    det = DetectionState(
        online=online, matches=MatchSet.full(st.library.p), u_max=st.det.u_max,
    )
    return replace(st, phase=Phase.DETECT, det=det, last_pruned=None)


# ---------------------------------------------------------------------------
# JSON snapshots for replay/debugging
# ---------------------------------------------------------------------------

def state_to_json(st: ControllerState) -> str:
    doc = {
        "phase": st.phase.value,
        "sigma_d": st.sigma_d,
        "seed_violation": st.seed_violation,
        "u_max": st.det.u_max,
        "matches": list(st.det.matches.remaining),
        "online": {
            "X": [list(map(float, row)) for row in st.det.online.X],
            "U_minus": [list(map(float, row)) for row in st.det.online.U_minus],
        },
    }
    return json.dumps(doc, indent=2)


def state_from_json(text: str, library: ModeLibrary) -> ControllerState:
    doc = json.loads(text)
    online = DataMatrices(
        X=np.array(doc["online"]["X"], dtype=float).reshape(library.n, -1),
        U_minus=np.array(doc["online"]["U_minus"], dtype=float).reshape(
            library.m, -1
        ),
    )
    det = DetectionState(
        online=online,
        matches=MatchSet(tuple(doc["matches"])),
        u_max=float(doc["u_max"]),
    )
    return ControllerState(
        phase=Phase(doc["phase"]),
        sigma_d=doc["sigma_d"],
        det=det,
        library=library,
        seed_violation=bool(doc["seed_violation"]),
    )


def save_state(path, st: ControllerState) -> None:
    Path(path).write_text(state_to_json(st) + "\n")


def load_state(path, library: ModeLibrary) -> ControllerState:
    return state_from_json(Path(path).read_text(), library)
