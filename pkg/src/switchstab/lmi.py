"""Semidefinite feasibility engine and gain synthesis from data.

The synthesis assembles one block inequality from the recorded data whose
feasibility is equivalent to the existence of a single state feedback that
contracts a common quadratic function, at a chosen rate, for *every* system
consistent with the record. Unknowns are a symmetric matrix Q (inverse of the
quadratic certificate) and a rectangular matrix L; the gain is K = L Q^{-1}
and the certificate P = Q^{-1}.

Solver results are never trusted directly: every accepted point is re-checked
with an independent eigenvalue computation, and synthesized gains are further
validated by sampling the consistent set (`verify_uniform_decay`).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .data import DataMatrices, consistent_set, sample_consistent
from .errors import DimensionMismatch, NotInformative, SynthesisInconclusive
from .linalg import DEFAULT_TOL, Tolerance, spectral_norm, sym_eig_extremes

__all__ = [
    "AffineLmi",
    "FeasStatus",
    "FeasResult",
    "solve_feasibility",
    "GainCertificate",
    "synth_gain",
    "verify_uniform_decay",
    "GrowthParams",
    "growth_params",
    "compute_mu",
]

_SYM_TOL = 1e-12


@dataclass(frozen=True)
class AffineLmi:
    """Constraint ``constant + sum_j z_j coeffs[j] >> 0`` in scalar unknowns z."""

    constant: np.ndarray
    coeffs: tuple[np.ndarray, ...]

    def __post_init__(self):
        const = np.asarray(self.constant, dtype=float)
        coeffs = tuple(np.asarray(c, dtype=float) for c in self.coeffs)
        k = const.shape[0]
        for blk in (const, *coeffs):
            if blk.shape != (k, k):
                raise DimensionMismatch("all blocks must be square of equal size")
            if np.abs(blk - blk.T).max(initial=0.0) > _SYM_TOL * (
                1.0 + np.abs(blk).max(initial=0.0)
            ):
                raise ValueError("blocks must be symmetric")
        object.__setattr__(self, "constant", const)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def size(self) -> int:
        return self.constant.shape[0]

    @property
    def nvars(self) -> int:
        return len(self.coeffs)

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        out = self.constant.copy()
        for zj, cj in zip(z, self.coeffs):
            out += zj * cj
        return out


class FeasStatus(Enum):
    FEASIBLE = "feasible"
    INFEASIBLE = "infeasible"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class FeasResult:
    status: FeasStatus
    z: np.ndarray | None = None
    min_eigs: tuple[float, ...] = ()
    slack: float | None = None
    solver: str | None = None

    def __bool__(self) -> bool:
        return self.status is FeasStatus.FEASIBLE


def _solver_order():
    import cvxpy as cp

    order = []
    installed = cp.installed_solvers()
    for name in ("CLARABEL", "CVXOPT", "SCS"):
        if name in installed:
            order.append(name)
    return order


def solve_feasibility(lmis: list[AffineLmi], strict: frozenset[int] | set[int] = frozenset(),
                      margin: float = 1e-6, slack_cap: float = 1.0) -> FeasResult:
    """Find z with every constraint PSD; constraints in ``strict`` get ``margin``.

    Solved as a max-slack problem: maximize s subject to F_i(z) >= s I (plus
    margin on strict constraints). A certifiably negative optimum proves
    infeasibility. Acceptance is decided by an independent eigenvalue re-check
    of every constraint at the returned point, never by solver status alone;
    a small absolute floor (1e-8 relative to each block's norm) absorbs
    boundary-tight optima. Anything the re-check cannot confirm is UNKNOWN,
    which callers must treat as failure.
    """
    import cvxpy as cp

    if margin <= 0:
        raise ValueError("margin must be positive")
    nvars = lmis[0].nvars
    if any(l.nvars != nvars for l in lmis):
        raise DimensionMismatch("all constraints must share the variable vector")

    z = cp.Variable(nvars)
    s = cp.Variable()
    constraints = [s <= slack_cap]
    for idx, lmi in enumerate(lmis):
        expr = cp.Constant(lmi.constant)
        for j, cj in enumerate(lmi.coeffs):
            if np.any(cj):
                expr = expr + z[j] * cp.Constant(cj)
        expr = (expr + expr.T) / 2  # keep cvxpy's symmetry check happy
        shift = margin if idx in strict else 0.0
        constraints.append(expr >> (shift + s) * np.eye(lmi.size))
    problem = cp.Problem(cp.Maximize(s), constraints)

    infeasible_thr = -max(1e-8, 0.01 * margin)
    for solver in _solver_order():
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                problem.solve(solver=solver)
        except Exception:  # solver blow-ups of any kind: try the next one
            continue
        if problem.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return FeasResult(status=FeasStatus.INFEASIBLE, solver=solver)
        if z.value is None or s.value is None:
            continue
        slack = float(s.value)
        if slack < infeasible_thr and problem.status == cp.OPTIMAL:
            return FeasResult(status=FeasStatus.INFEASIBLE, slack=slack, solver=solver)
        point = np.asarray(z.value, dtype=float)
        eigs = []
        ok = True
        for idx, lmi in enumerate(lmis):
            F = lmi.evaluate(point)
            lo, _ = sym_eig_extremes(F)
            eigs.append(lo)
            floor = 1e-8 * (1.0 + spectral_norm(F))
            need = margin - floor if idx in strict else -floor
            if lo < need:
                ok = False
        if ok:
            return FeasResult(
                status=FeasStatus.FEASIBLE, z=point,
                min_eigs=tuple(eigs), slack=slack, solver=solver,
            )
    return FeasResult(status=FeasStatus.UNKNOWN)


@dataclass(frozen=True)
class GainCertificate:
    """Feedback gain with its quadratic contraction certificate."""

    K: np.ndarray
    P: np.ndarray
    lam: float

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        P = np.asarray(self.P, dtype=float)
        if not 0.0 < self.lam < 1.0:
            raise ValueError("decay rate must lie in (0, 1)")
        if np.abs(P - P.T).max() > 1e-10 * (1.0 + np.abs(P).max()):
            raise ValueError("certificate matrix must be symmetric")
        lo, _ = sym_eig_extremes(P)
        if lo <= 0:
            raise ValueError("certificate matrix must be positive definite")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "P", np.ascontiguousarray((P + P.T) / 2.0))


def _sym_basis(n: int) -> list[np.ndarray]:
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = 1.0
            E[j, i] = 1.0
            basis.append(E)
    return basis


def _place(big: int, r0: int, c0: int, blk: np.ndarray) -> np.ndarray:
    out = np.zeros((big, big))
    r, c = blk.shape
    out[r0 : r0 + r, c0 : c0 + c] = blk
    return out


def _synthesis_lmis(data: DataMatrices, lam: float):
    """Assemble the data-driven synthesis constraints in (Q, L) unknowns.

    Variable order: the n(n+1)/2 upper-triangle entries of Q, then the m*n
    entries of L row-major. Constraints: the 4x4 block inequality built from
    the data, Q >= margin*I (strictness, applied by the caller), and the
    normalization Q <= I. The last is lossless: scaling any feasible (Q, L)
    down by a common factor stays feasible because the data term is PSD.
    """
    n, m, T = data.n, data.m, data.T
    big = 3 * n + m
    q_basis = _sym_basis(n)
    nq = len(q_basis)
    nl = m * n
    nvars = nq + nl

    v = np.vstack([data.X_plus, -data.X_minus, -data.U_minus, np.zeros((n, T))])
    data_term = v @ v.T

    coeffs_main = []
    coeffs_q = []
    coeffs_norm = []
    for E in q_basis:
        C = (
            lam * _place(big, 0, 0, E)
            + _place(big, n, 2 * n + m, E)
            + _place(big, 2 * n + m, n, E)
            + _place(big, 2 * n + m, 2 * n + m, E)
        )
        coeffs_main.append(C)
        coeffs_q.append(E)
        coeffs_norm.append(-E)
    for r in range(m):
        for c in range(n):
            blk = np.zeros((m, n))
            blk[r, c] = 1.0
            C = _place(big, 2 * n, 2 * n + m, blk) + _place(big, 2 * n + m, 2 * n, blk.T)
            coeffs_main.append(C)
            coeffs_q.append(np.zeros((n, n)))
            coeffs_norm.append(np.zeros((n, n)))

    main = AffineLmi(constant=data_term, coeffs=tuple(coeffs_main))
    q_pos = AffineLmi(constant=np.zeros((n, n)), coeffs=tuple(coeffs_q))
    q_norm = AffineLmi(constant=np.eye(n), coeffs=tuple(coeffs_norm))
    return [main, q_pos, q_norm], nq, nvars


def _unpack_ql(z: np.ndarray, n: int, m: int, nq: int):
    Q = np.zeros((n, n))
    idx = 0
    for i in range(n):
        for j in range(i, n):
            Q[i, j] = z[idx]
            Q[j, i] = z[idx]
            idx += 1
    L = z[nq:].reshape(m, n)
    return Q, L


def synth_gain(data: DataMatrices, lam: float, tol: Tolerance = DEFAULT_TOL,
               margin: float | None = None) -> GainCertificate:
    """Synthesize (K, P) certifying decay ``lam`` over every consistent system.

    Raises :class:`NotInformative` when the feasibility engine proves the
    constraint system infeasible (the record does not certify a common gain)
    and :class:`SynthesisInconclusive` when it cannot certify either way.
    The returned P is normalized to unit spectral norm; the contraction
    property is invariant under that scaling. ``margin`` (default
    ``tol.psd_margin``) encodes the strict definiteness of Q.
    """
    if not 0.0 < lam < 1.0:
        raise ValueError("decay rate must lie in (0, 1)")
    if data.T < 1:
        raise ValueError("at least one recorded transition is required")
    if margin is None:
        margin = tol.psd_margin
    # scaling every recorded sample by one factor leaves the consistent set
    # (hence informativity) unchanged; normalize so the margin and the Q <= I
    # cap sit at the problem's natural scale
    scale = max(spectral_norm(data.X), spectral_norm(data.U_minus), 1e-300)
    scaled = DataMatrices(X=data.X / scale, U_minus=data.U_minus / scale)
    lmis, nq, _ = _synthesis_lmis(scaled, lam)
    res = solve_feasibility(lmis, strict={1}, margin=margin)
    if res.status is FeasStatus.INFEASIBLE:
        raise NotInformative(
            f"no common gain with decay {lam} is certified by the record"
        )
    if res.status is FeasStatus.UNKNOWN:
        raise SynthesisInconclusive("feasibility engine returned Unknown")
    Q, L = _unpack_ql(res.z, data.n, data.m, nq)
    P = np.linalg.inv(Q)
    P = (P + P.T) / 2.0
    K = L @ np.linalg.inv(Q)
    P = P / spectral_norm(P)  # common scale across modes; decay is scale-free
    return GainCertificate(K=K, P=P, lam=lam)


def verify_uniform_decay(data: DataMatrices, cert: GainCertificate,
                         sample_count: int = 200, tol: float = 1e-6,
                         seed: int = 0, radius: float = 1.0) -> bool:
    """Check the decay inequality on sampled consistent systems.

    True iff (A + B K)^T P (A + B K) <= lam P + tol I for the minimum-norm
    fit and ``sample_count - 1`` random members of the consistent set.
    """
    cs = consistent_set(data)
    for A, B in sample_consistent(cs, sample_count, radius=radius, seed=seed):
        Acl = A + B @ cert.K
        G = Acl.T @ cert.P @ Acl - cert.lam * cert.P
        _, hi = sym_eig_extremes(G)
        if hi > tol:
            return False
    return True


@dataclass(frozen=True)
class GrowthParams:
    """One-step growth envelope under arbitrary bounded inputs.

    Guarantees V_i(A_i x + B_i u) <= lambda_u V_i(x) + k |u|^2 for every mode.
    """

    lambda_u: float
    k: float

    def __post_init__(self):
        if self.lambda_u < 1.0:
            raise ValueError("growth rate below 1 is not representable")
        if self.k <= 0:
            raise ValueError("input gain must be positive")


def growth_envelope_holds(A: np.ndarray, B: np.ndarray, P: np.ndarray,
                          lambda_u: float, k: float,
                          psd_floor: float = 1e-10) -> bool:
    """Eigenvalue check of the 3x3 block growth inequality for one mode."""
    n, m = A.shape[0], B.shape[1]
    Pinv = np.linalg.inv(P)
    G = np.block([
        [Pinv, A, B],
        [A.T, lambda_u * P, np.zeros((n, m))],
        [B.T, np.zeros((m, n)), k * np.eye(m)],
    ])
    lo, _ = sym_eig_extremes(G)
    # the k block is diagonal PSD and must not inflate the zero floor
    scale = 1.0 + max(
        spectral_norm(Pinv), lambda_u * spectral_norm(P),
        spectral_norm(A), spectral_norm(B),
    )
    return lo >= -psd_floor * scale


def growth_params(modes: list[tuple[np.ndarray, np.ndarray]],
                  certs: list[GainCertificate], grid_res: float = 1e-3) -> GrowthParams:
    """Smallest admissible growth rate (>= 1) with a minimized input gain.

    Bisection over lambda_u at resolution ``grid_res``, with k minimized for
    the chosen lambda_u by a second bisection; both searches use direct
    eigenvalue checks of the block inequality. Requires the true mode
    matrices, so this is an analysis-side operation.
    """
    Ps = []
    for cert in certs:
        lo, _ = sym_eig_extremes(cert.P)
        if lo <= 0:
            raise ValueError("degenerate certificate matrix")
        Ps.append(cert.P)

    def feasible(lambda_u: float, k: float) -> bool:
        return all(
            growth_envelope_holds(A, B, P, lambda_u, k)
            for (A, B), P in zip(modes, Ps)
        )

    k_scale = max(max(spectral_norm(B) for _, B in modes) ** 2, 1.0)
    k_hi = 1e6 * k_scale

    lo, hi = 1.0, 1.0
    while not feasible(hi, k_hi):
        lo = hi
        hi *= 2.0
        if hi > 1e12:
            raise ValueError("growth inequality infeasible at any rate")
    if feasible(1.0, k_hi):
        lam_u = 1.0
    else:
        while hi - lo > grid_res:
            mid = 0.5 * (lo + hi)
            if feasible(mid, k_hi):
                hi = mid
            else:
                lo = mid
        lam_u = hi

    k_lo, k_up = 0.0, k_hi
    while k_up - k_lo > grid_res * max(k_up, 1.0):
        mid = 0.5 * (k_lo + k_up)
        if mid > 0 and feasible(lam_u, mid):
            k_up = mid
        else:
            k_lo = mid
    k = k_up * (1.0 + 1e-9)
    if not feasible(lam_u, k):
        k = k_hi
    return GrowthParams(lambda_u=lam_u, k=k)


def compute_mu(certs: list[GainCertificate]) -> float:
    """Largest spectral norm of P_i P_j^{-1} over ordered certificate pairs."""
    mu = 0.0
    for ci in certs:
        for cj in certs:
            Pj_inv = np.linalg.inv(cj.P)
            mu = max(mu, spectral_norm(ci.P @ Pj_inv))
    return float(mu)
