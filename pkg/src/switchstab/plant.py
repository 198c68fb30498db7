"""Ground-truth switched linear plant, switching signals, scenario generation.

The plant is a finite family of controllable (A_i, B_i) pairs driven by a
switching signal the controller never sees. Signals come in two kinds: a
precomputed schedule (which ignores the controller, useful for negative
tests) and an adaptive generator with geometric dwell times that defers any
switch landing inside a detection phase to the first stabilization step, so
closed-loop runs satisfy the no-switch-while-detecting assumption by
construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import DataMatrices
from .errors import DimensionMismatch, ExcitationFailed, GenerationFailed
from .linalg import DEFAULT_TOL, Tolerance, numeric_rank

__all__ = [
    "Precomputed",
    "Adaptive",
    "SwitchedPlant",
    "step",
    "controllable",
    "gen_modes",
    "gen_init_data",
    "write_plant_json",
    "read_plant_json",
]


@dataclass(frozen=True)
class Precomputed:
    """Explicit schedule of (start_time, mode); active mode = last started."""

    schedule: tuple[tuple[int, int], ...]

    def __post_init__(self):
        sched = tuple((int(t), int(mode)) for t, mode in self.schedule)
        if not sched or sched[0][0] != 0:
            raise ValueError("schedule must start at time 0")
        times = [t for t, _ in sched]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("schedule times must be strictly increasing")
        object.__setattr__(self, "schedule", sched)

    def driver(self, p: int, rng_seed: int = 0) -> "_PrecomputedDriver":
        return _PrecomputedDriver(self.schedule, p)


@dataclass(frozen=True)
class Adaptive:
    """Random switching with geometric dwells, paused during detection.

    Switch instants are scheduled on an absolute clock (cumulative geometric
    dwells with the given mean); each scheduled switch is realized at the
    first stabilization step at or after its scheduled time, one per step.
    The mode-to-go is uniform over the other modes.
    """

    mean_dwell: float
    seed: int = 0

    def __post_init__(self):
        if self.mean_dwell < 1.0:
            raise ValueError("mean dwell must be at least one step")

    def driver(self, p: int, rng_seed: int | None = None) -> "_AdaptiveDriver":
        seed = self.seed if rng_seed is None else rng_seed
        return _AdaptiveDriver(self.mean_dwell, seed, p)


class _PrecomputedDriver:
    def __init__(self, schedule, p):
        self._schedule = schedule
        self._p = p

    def mode(self, t: int, in_detect: bool) -> int:
        active = self._schedule[0][1]
        for start, mode in self._schedule:
            if start <= t:
                active = mode
            else:
                break
        if not 0 <= active < self._p:
            raise ValueError(f"scheduled mode {active} out of range")
        return active


class _AdaptiveDriver:
    def __init__(self, mean_dwell, seed, p):
        self._mean_dwell = float(mean_dwell)
        self._rng = np.random.default_rng(seed)
        self._p = p
        self._current = int(self._rng.integers(p))
        self._next_sched = self._draw_dwell()
        self._last_realized = -1

    def _draw_dwell(self) -> int:
        return int(self._rng.geometric(1.0 / self._mean_dwell))

    def mode(self, t: int, in_detect: bool) -> int:
        # realize at most one scheduled switch per step, never while detecting
        if self._p > 1 and not in_detect and self._next_sched <= t and t > self._last_realized:
            others = [i for i in range(self._p) if i != self._current]
            self._current = int(others[self._rng.integers(len(others))])
            self._last_realized = t
            self._next_sched += self._draw_dwell()
        return self._current


@dataclass(frozen=True)
class SwitchedPlant:
    """Mode family plus switching signal; all modes must be controllable."""

    modes: tuple[tuple[np.ndarray, np.ndarray], ...]
    signal: Precomputed | Adaptive

    def __post_init__(self):
        modes = tuple(
            (np.asarray(A, dtype=float), np.asarray(B, dtype=float))
            for A, B in self.modes
        )
        n = modes[0][0].shape[0]
        m = modes[0][1].shape[1]
        for A, B in modes:
            if A.shape != (n, n) or B.shape != (n, m):
                raise DimensionMismatch("inconsistent mode dimensions")
            if not controllable(A, B):
                raise ValueError("every mode must be a controllable pair")
        object.__setattr__(self, "modes", modes)

    @property
    def n(self) -> int:
        return self.modes[0][0].shape[0]

    @property
    def m(self) -> int:
        return self.modes[0][1].shape[1]

    @property
    def p(self) -> int:
        return len(self.modes)


def step(plant: SwitchedPlant, mode: int, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Exact one-step update under the given mode."""
    A, B = plant.modes[mode]
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (plant.n,) or u.shape != (plant.m,):
        raise DimensionMismatch("state/input dimension mismatch")
    return A @ x + B @ u


def controllable(A: np.ndarray, B: np.ndarray, tol: Tolerance = DEFAULT_TOL) -> bool:
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return numeric_rank(np.hstack(blocks), tol) == n


def gen_modes(seed: int, n: int, m: int, p: int,
              spectral_range: tuple[float, float] = (0.8, 1.2),
              max_tries: int = 200) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random controllable pairs with A scaled into the spectral-radius range."""
    lo, hi = spectral_range
    if not (0 < lo <= hi):
        raise ValueError("invalid spectral range")
    rng = np.random.default_rng(seed)
    modes = []
    for _ in range(p):
        for _ in range(max_tries):
            A = rng.standard_normal((n, n)) / np.sqrt(n)
            radius = max(abs(np.linalg.eigvals(A)))
            if radius < 1e-9:
                continue
            A *= rng.uniform(lo, hi) / radius
            B = rng.standard_normal((n, m))
            if controllable(A, B):
                modes.append((A, B))
                break
        else:
            raise GenerationFailed(
                f"no controllable pair found in {max_tries} draws"
            )
    return modes


def gen_init_data(mode: tuple[np.ndarray, np.ndarray], T: int, seed: int,
                  x0_scale: float = 1.0, u_scale: float = 1.0,
                  tol: Tolerance = DEFAULT_TOL, max_tries: int = 50) -> DataMatrices:
    """Simulate one initialization record of T transitions for a single mode.

    When T >= n + m the inputs are redrawn until the stacked regressor has
    full rank n + m (so the record pins the mode down uniquely); shorter
    records are returned as generated. Deterministic per seed.
    """
    A, B = np.asarray(mode[0], dtype=float), np.asarray(mode[1], dtype=float)
    n, m = A.shape[0], B.shape[1]
    if T < 1:
        raise ValueError("at least one transition is required")
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        x = x0_scale * rng.standard_normal(n)
        cols = [x]
        inputs = []
        for _ in range(T):
            u = u_scale * rng.standard_normal(m)
            inputs.append(u)
            x = A @ x + B @ u
            cols.append(x)
        data = DataMatrices(X=np.array(cols).T, U_minus=np.array(inputs).T)
        if T < n + m or numeric_rank(data.regressor, tol) == n + m:
            return data
    raise ExcitationFailed(
        f"regressor rank {n + m} not reached after {max_tries} redraws"
    )


# ---------------------------------------------------------------------------
# plant description files: dimensions, row-major mode matrices, signal, seed
# ---------------------------------------------------------------------------

def _signal_to_doc(signal) -> dict:
    if isinstance(signal, Adaptive):
        return {"kind": "adaptive", "mean_dwell": signal.mean_dwell, "seed": signal.seed}
    return {"kind": "precomputed", "schedule": [list(e) for e in signal.schedule]}


def _signal_from_doc(doc: dict):
    if doc["kind"] == "adaptive":
        return Adaptive(mean_dwell=float(doc["mean_dwell"]), seed=int(doc.get("seed", 0)))
    if doc["kind"] == "precomputed":
        return Precomputed(schedule=tuple((int(t), int(mode)) for t, mode in doc["schedule"]))
    raise ValueError(f"unknown signal kind {doc['kind']!r}")


def write_plant_json(path, plant: SwitchedPlant, seed=None) -> None:
    doc = {
        "n": plant.n,
        "m": plant.m,
        "p": plant.p,
        "modes": [
            {"A": [list(map(float, row)) for row in A],
             "B": [list(map(float, row)) for row in B]}
            for A, B in plant.modes
        ],
        "signal": _signal_to_doc(plant.signal),
    }
    if seed is not None:
        doc["seed"] = seed
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def read_plant_json(path) -> SwitchedPlant:
    doc = json.loads(Path(path).read_text())
    modes = tuple(
        (np.array(mode["A"], dtype=float), np.array(mode["B"], dtype=float))
        for mode in doc["modes"]
    )
    return SwitchedPlant(modes=modes, signal=_signal_from_doc(doc["signal"]))
