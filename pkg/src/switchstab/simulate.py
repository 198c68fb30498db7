"""Closed-loop harness: plant + controller, step by step, fully logged.

The harness owns the clock. Per step it asks the controller for an input,
advances the hidden plant one step, then feeds the measured transition back
(measure, act, observe). Runs replay bit-identically from (plant, seed,
reset policy): every random draw is derived from the run seed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controller import ModeLibrary, Phase, control, initial_controller, observe
from .errors import EmptyMatchSet, NoExcitationDirection
from .linalg import DEFAULT_TOL, Tolerance
from .plant import SwitchedPlant, step

__all__ = [
    "StepRecord",
    "RunLog",
    "run_closed_loop",
    "run_batch",
    "detect_phases",
    "write_runlog_csv",
    "read_runlog_csv",
    "write_events_json",
]


@dataclass(frozen=True)
class StepRecord:
    t: int
    x: np.ndarray
    u: np.ndarray
    sigma_true: int
    sigma_d: int | None
    phase: Phase
    v_value: float
    trigger_fired: bool
    matches: tuple[int, ...] | None


@dataclass
class RunLog:
    steps: list[StepRecord]
    final_state: np.ndarray
    final_phase: Phase
    final_sigma_d: int | None
    horizon: int
    seed: int
    u_max: float
    seed_violation: bool
    error: str | None = None

    @property
    def detect_starts(self) -> list[int]:
        """First instant of every detection phase."""
        out = []
        prev = None
        for rec in self.steps:
            if rec.phase is Phase.DETECT and prev is not Phase.DETECT:
                out.append(rec.t)
            prev = rec.phase
        return out

    @property
    def stabilize_starts(self) -> list[int]:
        out = []
        prev = None
        for rec in self.steps:
            if rec.phase is Phase.STABILIZE and prev is not Phase.STABILIZE:
                out.append(rec.t)
            prev = rec.phase
        return out

    def states(self) -> np.ndarray:
        """All states x(0..horizon), shape (horizon+1, n)."""
        return np.vstack([[rec.x for rec in self.steps], self.final_state[None, :]])


def detect_phases(log: RunLog) -> list[tuple[int, int, bool]]:
    """(start, end_exclusive, completed) for every detection phase.

    A phase is completed when it ended in a resolution rather than at the
    horizon cut.
    """
    phases = []
    start = None
    for rec in log.steps:
        if rec.phase is Phase.DETECT and start is None:
            start = rec.t
        elif rec.phase is not Phase.DETECT and start is not None:
            phases.append((start, rec.t, True))
            start = None
    if start is not None:
        completed = log.final_phase is Phase.STABILIZE
        phases.append((start, log.horizon, completed))
    return phases


def _analysis_mode(phase: Phase, sigma_true: int, sigma_d: int | None) -> int:
    # quadratic-function bookkeeping follows the active mode while detecting
    # and the detected mode while stabilizing
    return sigma_true if phase is Phase.DETECT else sigma_d


def run_closed_loop(plant: SwitchedPlant, library: ModeLibrary, x0,
                    horizon: int, seed: int = 0, seed_violation: bool = False,
                    u_max: float = 1.0, tol: Tolerance = DEFAULT_TOL) -> RunLog:
    """Simulate the switched plant under the two-phase controller.

    Controller failures (empty match set, missing excitation direction) are
    re-raised with the partial log attached as ``exc.partial_log``.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if plant.n != library.n or plant.m != library.m or plant.p != library.p:
        raise ValueError("plant and library dimensions disagree")
    x = np.asarray(x0, dtype=float).reshape(plant.n)
    driver = plant.signal.driver(plant.p, rng_seed=seed)
    st = initial_controller(library, x, u_max, seed_violation=seed_violation)
    steps: list[StepRecord] = []

    def finish(error=None):
        return RunLog(
            steps=steps, final_state=x.copy(), final_phase=st.phase,
            final_sigma_d=st.sigma_d, horizon=len(steps), seed=seed,
            u_max=u_max, seed_violation=seed_violation, error=error,
        )

    for t in range(horizon):
        phase = st.phase
        sigma = driver.mode(t, in_detect=phase is Phase.DETECT)
        sigma_d = st.sigma_d
        try:
            u, st = control(st, x, tol)
        except (EmptyMatchSet, NoExcitationDirection) as exc:
            exc.partial_log = finish(error=type(exc).__name__)
            raise
        x_next = step(plant, sigma, x, u)
        try:
            st_next = observe(st, x, u, x_next, tol)
            failed = None
        except EmptyMatchSet as exc:
            st_next = st
            failed = exc
        mode_for_v = _analysis_mode(phase, sigma, sigma_d)
        P = library.certs[mode_for_v].P
        steps.append(StepRecord(
            t=t, x=x.copy(), u=np.asarray(u, dtype=float).copy(),
            sigma_true=sigma, sigma_d=sigma_d, phase=phase,
            v_value=float(x @ P @ x),
            trigger_fired=(phase is Phase.STABILIZE and st_next.phase is Phase.DETECT),
            matches=(() if failed is not None else st_next.last_pruned)
            if phase is Phase.DETECT else None,
        ))
        x = x_next
        if failed is not None:
            st = st_next
            failed.partial_log = finish(error=type(failed).__name__)
            raise failed
        st = st_next
    return finish()


def run_batch(plant: SwitchedPlant, library: ModeLibrary, x0s, seeds,
              horizon: int, **kwargs) -> list[RunLog]:
    """Independent runs; safe to parallelize externally, executed in order."""
    return [
        run_closed_loop(plant, library, x0, horizon, seed=seed, **kwargs)
        for x0, seed in zip(x0s, seeds)
    ]


# ---------------------------------------------------------------------------
# files: CSV (one row per step, final state on a trailing input-less row)
# plus a JSON sidecar with the phase-change events
# ---------------------------------------------------------------------------

def write_runlog_csv(path, log: RunLog) -> None:
    n = log.steps[0].x.shape[0] if log.steps else log.final_state.shape[0]
    m = log.steps[0].u.shape[0] if log.steps else 0
    header = (
        ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
        + ["sigma_true", "sigma_d", "phase", "v_value", "trigger", "matches"]
    )
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in log.steps:
            w.writerow(
                [rec.t]
                + [repr(float(v)) for v in rec.x]
                + [repr(float(v)) for v in rec.u]
                + [
                    rec.sigma_true,
                    "" if rec.sigma_d is None else rec.sigma_d,
                    rec.phase.value,
                    repr(float(rec.v_value)),
                    int(rec.trigger_fired),
                    "" if rec.matches is None else "|".join(map(str, rec.matches)),
                ]
            )
        w.writerow(
            [log.horizon] + [repr(float(v)) for v in log.final_state]
            + [""] * m + ["", "", "", "", "", ""]
        )


def read_runlog_csv(path) -> RunLog:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for c in header if c.startswith("x") and c[1:].isdigit())
    m = sum(1 for c in header if c.startswith("u") and c[1:].isdigit())
    body, final_row = rows[1:-1], rows[-1]
    steps = []
    for r in body:
        matches_txt = r[1 + n + m + 5]
        steps.append(StepRecord(
            t=int(r[0]),
            x=np.array([float(v) for v in r[1 : 1 + n]]),
            u=np.array([float(v) for v in r[1 + n : 1 + n + m]]),
            sigma_true=int(r[1 + n + m]),
            sigma_d=None if r[1 + n + m + 1] == "" else int(r[1 + n + m + 1]),
            phase=Phase(r[1 + n + m + 2]),
            v_value=float(r[1 + n + m + 3]),
            trigger_fired=bool(int(r[1 + n + m + 4])),
            matches=None if matches_txt == "" and Phase(r[1 + n + m + 2]) is Phase.STABILIZE
            else tuple(int(s) for s in matches_txt.split("|")) if matches_txt else (),
        ))
    final_state = np.array([float(v) for v in final_row[1 : 1 + n]])
    last_sigma_d = steps[-1].sigma_d if steps else None
    # final phase/sigma_d are reconstructed when reading: a trailing detect
    # phase that resolved on the last step cannot be told apart from one cut
    # by the horizon, so replays also consult the events sidecar if present.
    return RunLog(
        steps=steps, final_state=final_state,
        final_phase=steps[-1].phase if steps else Phase.DETECT,
        final_sigma_d=last_sigma_d,
        horizon=len(steps), seed=-1, u_max=float("nan"), seed_violation=False,
    )


def write_events_json(path, log: RunLog, extra: dict | None = None) -> None:
    doc = {
        "horizon": log.horizon,
        "seed": log.seed,
        "u_max": log.u_max,
        "seed_violation": log.seed_violation,
        "detect_starts": log.detect_starts,
        "stabilize_starts": log.stabilize_starts,
        "triggers": [rec.t for rec in log.steps if rec.trigger_fired],
        "resolutions": [
            {"t": rec.t, "mode": rec.matches[0]}
            for rec in log.steps
            if rec.phase is Phase.DETECT and rec.matches is not None and len(rec.matches) == 1
        ],
        "final_phase": log.final_phase.value,
        "final_sigma_d": log.final_sigma_d,
        "error": log.error,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def apply_events_json(log: RunLog, path) -> RunLog:
    """Restore the fields a CSV round-trip cannot carry."""
    doc = json.loads(Path(path).read_text())
    log.final_phase = Phase(doc["final_phase"])
    log.final_sigma_d = doc["final_sigma_d"]
    log.seed = doc["seed"]
    log.u_max = doc["u_max"]
    log.seed_violation = doc["seed_violation"]
    log.error = doc.get("error")
    return log
