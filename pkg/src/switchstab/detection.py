"""Online mode detection: rank-increasing inputs and match-set pruning.

Each detection step either injects zero input (when the current state alone
already adds regressor rank) or a saturated input aligned with a kernel
direction of the transposed online regressor, which guarantees the appended
column leaves the span of the recorded ones. Every completed step therefore
raises the online regressor rank by one until the record pins down a unique
system, so with pairwise-incompatible initialization records the active mode
is identified after at most n + m steps.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import DataMatrices, MatchSet, prune_matches
from .errors import EmptyMatchSet, NoExcitationDirection
from .linalg import DEFAULT_TOL, Tolerance, kernel_basis, least_squares

__all__ = [
    "DetectionState",
    "ExcitationDirection",
    "detect_input",
    "detect_update",
    "is_resolved",
]


@dataclass(frozen=True)
class DetectionState:
    """Online record, surviving modes, and the input bound."""

    online: DataMatrices
    matches: MatchSet
    u_max: float

    def __post_init__(self):
        if self.u_max <= 0:
            raise ValueError("input bound must be positive")

    @classmethod
    def fresh(cls, x0, m: int, p: int, u_max: float) -> "DetectionState":
        return cls(
            online=DataMatrices.from_initial_state(x0, m),
            matches=MatchSet.full(p),
            u_max=u_max,
        )


@dataclass(frozen=True)
class ExcitationDirection:
    """Kernel direction (xi, nu) of the transposed online regressor, nu != 0."""

    xi: np.ndarray
    nu: np.ndarray


def pick_excitation(online: DataMatrices, tol: Tolerance = DEFAULT_TOL) -> ExcitationDirection:
    """Kernel-basis vector with the largest input component.

    If every kernel direction has a (numerically) zero input part, no bounded
    input can force the new data column out of the recorded span, which
    contradicts controllability of the active mode; that is surfaced as
    :class:`NoExcitationDirection`.
    """
    n = online.n
    basis = kernel_basis(online.regressor.T, tol)
    if basis.shape[1] == 0:
        raise NoExcitationDirection("online regressor already has full rank")
    nu_norms = np.linalg.norm(basis[n:, :], axis=0)
    best = int(np.argmax(nu_norms))
    if nu_norms[best] <= 1e-12:
        raise NoExcitationDirection("every kernel direction has zero input part")
    return ExcitationDirection(xi=basis[:n, best].copy(), nu=basis[n:, best].copy())


def detect_input(st: DetectionState, x_t: np.ndarray,
                 tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Input for the current detection step; always |u| <= u_max.

    Zero input when there is no transition yet or when the current state lies
    outside the span of the earlier recorded states (the new column then adds
    rank for free). Otherwise the input saturates the bound along the chosen
    excitation direction, signed to maximize |xi.x + nu.u|.
    """
    x_t = np.asarray(x_t, dtype=float)
    if not np.all(np.isfinite(x_t)):
        raise ValueError("non-finite state")
    if len(st.matches) == 0:
        raise EmptyMatchSet("no candidate modes remain")
    m = st.online.m
    if st.online.T == 0:
        return np.zeros(m)
    past_states = st.online.X_minus
    coeff = least_squares(past_states, x_t)
    residual = np.linalg.norm(past_states @ coeff - x_t)
    span_tol = tol.rank_rel * (1.0 + np.linalg.norm(x_t))
    if residual > span_tol:
        return np.zeros(m)
    ex = pick_excitation(st.online, tol)
    nu_norm = np.linalg.norm(ex.nu)
    sign = 1.0 if float(ex.xi @ x_t) >= 0.0 else -1.0
    u = sign * st.u_max * ex.nu / nu_norm
    while np.linalg.norm(u) > st.u_max:  # the bound is hard, not approximate
        u *= 1.0 - 1e-15
    pairing = abs(float(ex.xi @ x_t) + float(ex.nu @ u))
    if pairing < span_tol:
        raise NoExcitationDirection(
            "excitation cannot separate the new column from the recorded span"
        )
    return u


def detect_update(st: DetectionState, x_t: np.ndarray, u_t: np.ndarray,
                  x_next: np.ndarray, init: list[DataMatrices],
                  tol: Tolerance = DEFAULT_TOL) -> DetectionState:
    """Append the observed transition and prune incompatible modes."""
    del x_t  # the transition start is already the newest recorded state
    online = st.online.append(u_t, x_next)
    matches = prune_matches(st.matches, init, online, tol)
    return replace(st, online=online, matches=matches)


def is_resolved(st: DetectionState) -> int | None:
    """Resolved mode index if exactly one remains, None if several.

    Raises :class:`EmptyMatchSet` when no candidate is left (the online data
    contradicts every initialization record).
    """
    remaining = st.matches.remaining
    if len(remaining) == 0:
        raise EmptyMatchSet("online data incompatible with every mode")
    if len(remaining) == 1:
        return remaining[0]
    return None
