"""Closed-loop stability analysis: dwell/activation fits, timers, certificates.

Given a run log and the library constants, this module
  * counts detection-phase starts N(ta, tb) and detection time M(ta, tb),
  * fits the smallest offsets (N0, T0) making the average dwell-time and
    average activation-time inequalities hold over every logged interval,
  * builds the discrete timer sequences tau_d, tau_a whose stepwise
    recurrences encode those interval conditions,
  * evaluates the trade-off condition that makes the composite function
    W = U * V contract, and the resulting explicit decay-plus-offset bound
    on |x(t)|,
  * and replays the one-step contraction certificate
    W(t+1) <= a W(t) + b r over the whole log, reporting which of the three
    step classes (phase start, mid-detection, stabilization) applied.

Constants: a = lam (mu/lam)^(1/tau) (lambda_u/lam)^eta and
b = (mu/lam)^(1/tau + N0) (lambda_u/lam)^(eta + T0), with r = k u_max^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import Phase
from .errors import ConditionUnsatisfied, RecurrenceViolated
from .lmi import GainCertificate
from .linalg import sym_eig_extremes
from .simulate import RunLog

__all__ = [
    "StabilityParams",
    "params_from_library",
    "count_N",
    "count_M",
    "fit_adt",
    "fit_aat",
    "audit_adt",
    "audit_aat",
    "TimerPair",
    "build_timers",
    "condition_lhs",
    "ConditionReport",
    "check_condition",
    "iss_bound",
    "WCertificateReport",
    "w_certificate",
    "AnalysisResult",
    "analyze_log",
    "write_analysis_report",
    "write_analysis_series",
    "DEFAULT_TAU_GRID",
    "DEFAULT_ETA_GRID",
]

_EXACT_TOL = 1e-12
_REL_TOL = 1e-8


@dataclass(frozen=True)
class StabilityParams:
    """Every constant of the closed-loop analysis, with derived quantities."""

    lam: float
    lambda_u: float
    k: float
    mu: float
    tau: float
    N0: float
    eta: float
    T0: float
    u_max: float
    lam_bar: float
    lam_under: float

    def __post_init__(self):
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lam must lie in (0, 1)")
        if self.lambda_u < 1.0 or self.k <= 0.0:
            raise ValueError("growth envelope requires lambda_u >= 1, k > 0")
        if self.mu < 1.0:
            raise ValueError("mu >= 1 always (identity pair)")
        if self.tau < 1.0 or self.N0 < 1.0:
            raise ValueError("dwell fit requires tau >= 1, N0 >= 1")
        if not 0.0 <= self.eta <= 1.0 or self.T0 < 0.0:
            raise ValueError("activation fit requires eta in [0,1], T0 >= 0")
        if self.u_max <= 0.0 or self.lam_under <= 0.0 or self.lam_bar < self.lam_under:
            raise ValueError("invalid bound constants")

    @property
    def a(self) -> float:
        return self.lam * (self.mu / self.lam) ** (1.0 / self.tau) * (
            self.lambda_u / self.lam
        ) ** self.eta

    @property
    def b(self) -> float:
        return (self.mu / self.lam) ** (1.0 / self.tau + self.N0) * (
            self.lambda_u / self.lam
        ) ** (self.eta + self.T0)

    @property
    def r(self) -> float:
        return self.k * self.u_max**2

    @property
    def zeta(self) -> float:
        return math.sqrt(self.a)

    @property
    def c(self) -> float:
        return math.sqrt(self.lam_bar * self.lam * self.b / (self.lam_under * self.a))

    @property
    def r_const(self) -> float:
        if self.a >= 1.0:
            raise ConditionUnsatisfied("offset term undefined: a >= 1")
        return self.u_max * math.sqrt(
            self.b * self.k / (self.lam_under * (1.0 - self.a))
        )


def params_from_library(certs: list[GainCertificate], lambda_u: float, k: float,
                        mu: float, tau: float, N0: float, eta: float, T0: float,
                        u_max: float) -> StabilityParams:
    """Assemble StabilityParams, deriving the certificate eigenvalue extremes."""
    lows, highs = zip(*(sym_eig_extremes(c.P) for c in certs))
    return StabilityParams(
        lam=certs[0].lam, lambda_u=lambda_u, k=k, mu=mu, tau=tau, N0=N0,
        eta=eta, T0=T0, u_max=u_max, lam_bar=max(highs), lam_under=min(lows),
    )


def _check_interval(log: RunLog, ta: int, tb: int):
    if not (0 <= ta < tb <= log.horizon):
        raise ValueError(f"bad interval [{ta}, {tb}) for horizon {log.horizon}")


def count_N(log: RunLog, ta: int, tb: int) -> int:
    """Detection phases started in [ta, tb)."""
    _check_interval(log, ta, tb)
    return sum(1 for s in log.detect_starts if ta <= s < tb)


def count_M(log: RunLog, ta: int, tb: int) -> int:
    """Steps spent in detection phases over [ta, tb)."""
    _check_interval(log, ta, tb)
    return sum(1 for rec in log.steps[ta:tb] if rec.phase is Phase.DETECT)


def _start_prefix(log: RunLog) -> np.ndarray:
    starts = set(log.detect_starts)
    cnt = np.zeros(log.horizon + 1)
    for t in range(log.horizon):
        cnt[t + 1] = cnt[t] + (1 if t in starts else 0)
    return cnt


def _detect_prefix(log: RunLog) -> np.ndarray:
    cnt = np.zeros(log.horizon + 1)
    for t, rec in enumerate(log.steps):
        cnt[t + 1] = cnt[t] + (1 if rec.phase is Phase.DETECT else 0)
    return cnt


def _min_offset(prefix: np.ndarray, slope: float) -> float:
    """max over 0 <= ta < tb <= H of prefix[tb]-prefix[ta] - slope*(tb-ta)."""
    g = prefix - slope * np.arange(prefix.size)
    best = -math.inf
    run_min = math.inf
    for tb in range(1, prefix.size):
        run_min = min(run_min, g[tb - 1])
        best = max(best, g[tb] - run_min)
    return best


def fit_adt(log: RunLog, tau_grid) -> list[tuple[float, float]]:
    """Per tau, the minimal N0 (clamped to >= 1) valid on every log interval."""
    prefix = _start_prefix(log)
    out = []
    for tau in tau_grid:
        if tau < 1.0:
            raise ValueError("tau must be at least 1")
        out.append((float(tau), max(1.0, _min_offset(prefix, 1.0 / tau))))
    return out


def fit_aat(log: RunLog, eta_grid) -> list[tuple[float, float]]:
    """Per eta, the minimal T0 (clamped to >= 0) valid on every log interval."""
    prefix = _detect_prefix(log)
    out = []
    for eta in eta_grid:
        if not 0.0 <= eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        out.append((float(eta), max(0.0, _min_offset(prefix, eta))))
    return out


def audit_adt(log: RunLog, tau: float, N0: float) -> float:
    """Worst slack of the dwell inequality over all O(H^2) intervals (<= 0 ok)."""
    worst = -math.inf
    for ta in range(log.horizon):
        for tb in range(ta + 1, log.horizon + 1):
            worst = max(worst, count_N(log, ta, tb) - N0 - (tb - ta) / tau)
    return worst


def audit_aat(log: RunLog, eta: float, T0: float) -> float:
    worst = -math.inf
    for ta in range(log.horizon):
        for tb in range(ta + 1, log.horizon + 1):
            worst = max(worst, count_M(log, ta, tb) - T0 - eta * (tb - ta))
    return worst


@dataclass(frozen=True)
class TimerPair:
    """Timer sequences on 0..horizon built from the fitted interval conditions.

    tau_d stays in [0, N0], drops by 1 - 1/tau exactly at each detection
    start, and otherwise climbs by at most 1/tau. tau_a stays in [0, T0],
    drops by 1 - eta exactly during detection steps, and otherwise climbs by
    at most eta.
    """

    tau_d: np.ndarray
    tau_a: np.ndarray


def build_timers(log: RunLog, params: StabilityParams) -> TimerPair:
    """Construct the timers and verify their recurrences stepwise.

    tau_d(t) = N0 + min_{s<=t}(N(0,s) - s/tau) - (N(0,t) - t/tau), and the
    activation analogue. Raises :class:`RecurrenceViolated` if any recurrence
    or range check fails, which signals an invalid (tau, N0, eta, T0) fit.
    """
    H = log.horizon
    starts = set(log.detect_starts)
    n_prefix = _start_prefix(log)
    m_prefix = _detect_prefix(log)
    tau, eta = params.tau, params.eta

    g_d = n_prefix - np.arange(H + 1) / tau
    g_a = m_prefix - eta * np.arange(H + 1)
    tau_d = params.N0 + np.minimum.accumulate(g_d) - g_d
    tau_a = params.T0 + np.minimum.accumulate(g_a) - g_a

    slack = _EXACT_TOL
    if tau_d.min() < -slack or tau_d.max() > params.N0 + slack:
        raise RecurrenceViolated("dwell timer leaves [0, N0]; fit invalid")
    if tau_a.min() < -slack or tau_a.max() > params.T0 + slack:
        raise RecurrenceViolated("activation timer leaves [0, T0]; fit invalid")
    for t in range(H):
        d_step = tau_d[t + 1] - tau_d[t]
        if t in starts:
            if abs(d_step - (1.0 / tau - 1.0)) > _EXACT_TOL:
                raise RecurrenceViolated(f"dwell timer jump at t={t}")
        elif not -slack <= d_step <= 1.0 / tau + slack:
            raise RecurrenceViolated(f"dwell timer flow at t={t}")
        a_step = tau_a[t + 1] - tau_a[t]
        if log.steps[t].phase is Phase.DETECT:
            if abs(a_step - (eta - 1.0)) > _EXACT_TOL:
                raise RecurrenceViolated(f"activation timer jump at t={t}")
        elif not -slack <= a_step <= eta + slack:
            raise RecurrenceViolated(f"activation timer flow at t={t}")
    return TimerPair(tau_d=tau_d, tau_a=tau_a)


def condition_lhs(lam: float, lambda_u: float, mu: float,
                  tau: float, eta: float) -> float:
    """Left side of the dwell/activation trade-off inequality (< 1 required)."""
    log_lam = math.log(lam)
    return (1.0 - math.log(lambda_u) / log_lam) * eta + (
        1.0 - math.log(mu) / log_lam
    ) / tau


@dataclass(frozen=True)
class ConditionReport:
    holds: bool
    lhs: float
    a: float

    def __bool__(self) -> bool:
        return self.holds


def check_condition(params: StabilityParams) -> ConditionReport:
    """Evaluate the trade-off inequality and report the implied contraction."""
    lhs = condition_lhs(params.lam, params.lambda_u, params.mu, params.tau, params.eta)
    return ConditionReport(holds=lhs < 1.0, lhs=lhs, a=params.a)


def iss_bound(params: StabilityParams, x0_norm: float):
    """The explicit state-norm envelope t -> c a^{t/2} |x0| + r_const.

    Requires the trade-off condition (a < 1); raises
    :class:`ConditionUnsatisfied` otherwise.
    """
    if params.a >= 1.0:
        raise ConditionUnsatisfied("contraction factor a >= 1")
    c = params.c
    a = params.a
    offset = params.r_const

    def bound(t):
        return c * a ** (t / 2.0) * x0_norm + offset

    return bound


@dataclass(frozen=True)
class WStepRow:
    t: int
    case: int
    w: float
    w_next: float
    bound: float
    ok: bool


@dataclass(frozen=True)
class WCertificateReport:
    rows: tuple[WStepRow, ...]
    violations: tuple[int, ...]
    cases_seen: frozenset[int]
    u_range_ok: bool
    comparison_ok: bool
    state_lower_ok: bool
    w: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.violations

    def raise_if_violated(self):
        from .errors import CertificateViolated

        if self.violations:
            t = self.violations[0]
            case = self.rows[t].case
            raise CertificateViolated(
                f"W-step inequality fails at t={t} (case {case})", step=t, case=case,
            )


def _mode_hat(log: RunLog) -> list[int]:
    """Mode index whose certificate matrix prices the state at each 0..H.

    Active (true) mode during detection phases, detected mode during
    stabilization; at the horizon the final controller phase decides, with a
    trailing detection phase priced at the last active mode (no switch lands
    inside a detection phase on conforming runs).
    """
    hat = []
    for rec in log.steps:
        hat.append(rec.sigma_true if rec.phase is Phase.DETECT else rec.sigma_d)
    if log.final_phase is Phase.STABILIZE and log.final_sigma_d is not None:
        hat.append(log.final_sigma_d)
    else:
        hat.append(log.steps[-1].sigma_true)
    return hat


def w_certificate(log: RunLog, params: StabilityParams,
                  certs: list[GainCertificate]) -> WCertificateReport:
    """Replay the one-step inequality W(t+1) <= a W(t) + b r over the log.

    W = U * V with U = (mu/lam)^{tau_d} (lambda_u/lam)^{tau_a} and
    V = x^T P x under the mode assignment of :func:`_mode_hat`. Each step is
    classified: 1 = first instant of a detection phase, 2 = any later
    detection step, 3 = stabilization step. Violations are reported, not
    raised; on runs whose switching respects the standing assumptions there
    are none.
    """
    timers = build_timers(log, params)
    xs = log.states()
    hat = _mode_hat(log)
    H = log.horizon
    V = np.array([xs[t] @ certs[hat[t]].P @ xs[t] for t in range(H + 1)])
    U = (params.mu / params.lam) ** timers.tau_d * (
        params.lambda_u / params.lam
    ) ** timers.tau_a
    W = U * V
    a, b, r = params.a, params.b, params.r
    starts = set(log.detect_starts)

    rows = []
    violations = []
    cases = set()
    for t in range(H):
        if t in starts:
            case = 1
        elif log.steps[t].phase is Phase.DETECT:
            case = 2
        else:
            case = 3
        cases.add(case)
        bound = a * W[t] + b * r
        ok = W[t + 1] <= bound * (1.0 + _REL_TOL)
        rows.append(WStepRow(t=t, case=case, w=W[t], w_next=W[t + 1], bound=bound, ok=ok))
        if not ok:
            violations.append(t)

    u_hi = params.lam * b / a
    u_range_ok = bool(U.min() >= 1.0 - _REL_TOL and U.max() <= u_hi * (1.0 + _REL_TOL))
    if a < 1.0:
        chain = W[0] * a ** np.arange(H + 1) + b * r / (1.0 - a)
        comparison_ok = bool(np.all(W <= chain * (1.0 + _REL_TOL)))
    else:
        comparison_ok = not violations
    norms2 = np.sum(xs**2, axis=1)
    state_lower_ok = bool(
        np.all(params.lam_under * norms2 <= W * (1.0 + _REL_TOL) + _EXACT_TOL)
    )
    return WCertificateReport(
        rows=tuple(rows), violations=tuple(violations), cases_seen=frozenset(cases),
        u_range_ok=u_range_ok, comparison_ok=comparison_ok,
        state_lower_ok=state_lower_ok, w=W,
    )


# ---------------------------------------------------------------------------
# end-to-end analysis of one log
# ---------------------------------------------------------------------------

DEFAULT_TAU_GRID = (1.5, 2.0, 3.0, 4.0, 6.0, 8.0, 12.0, 16.0, 24.0, 32.0, 48.0, 64.0)
DEFAULT_ETA_GRID = tuple(round(0.025 * i, 3) for i in range(1, 41))


@dataclass
class AnalysisResult:
    params: StabilityParams
    condition: ConditionReport
    adt_fits: list[tuple[float, float]]
    aat_fits: list[tuple[float, float]]
    timers: TimerPair
    wcert: WCertificateReport
    bound_ok: bool | None
    bound_margin: float | None

    @property
    def ok(self) -> bool:
        """All audited invariants stand; when the trade-off condition holds,
        the contraction certificate and the state bound must hold too."""
        if self.condition.holds:
            return self.wcert.ok and bool(self.bound_ok)
        return True


def analyze_log(log: RunLog, certs: list[GainCertificate],
                modes, u_max: float,
                tau_grid=DEFAULT_TAU_GRID, eta_grid=DEFAULT_ETA_GRID,
                lambda_u: float | None = None, k: float | None = None) -> AnalysisResult:
    """Fit dwell/activation parameters, pick the best-margin pair, audit.

    The growth envelope (lambda_u, k) is computed from the true mode matrices
    unless supplied. Across the grid the (tau, N0) x (eta, T0) pair with the
    smallest trade-off left side wins; the certificate replay and, when the
    condition holds, the explicit state bound are evaluated for that pair.
    """
    from .lmi import compute_mu, growth_params

    if lambda_u is None or k is None:
        growth = growth_params(list(modes), list(certs))
        lambda_u = growth.lambda_u if lambda_u is None else lambda_u
        k = growth.k if k is None else k
    mu = compute_mu(list(certs))
    adt_fits = fit_adt(log, tau_grid)
    aat_fits = fit_aat(log, eta_grid)
    best = None
    for tau, n0 in adt_fits:
        for eta, t0 in aat_fits:
            lhs = condition_lhs(certs[0].lam, lambda_u, mu, tau, eta)
            if best is None or lhs < best[0]:
                best = (lhs, tau, n0, eta, t0)
    _, tau, n0, eta, t0 = best
    params = params_from_library(
        list(certs), lambda_u=lambda_u, k=k, mu=mu, tau=tau, N0=n0,
        eta=eta, T0=t0, u_max=u_max,
    )
    condition = check_condition(params)
    timers = build_timers(log, params)
    wcert = w_certificate(log, params, list(certs))
    bound_ok = None
    bound_margin = None
    if condition.holds:
        xs = log.states()
        norms = np.linalg.norm(xs, axis=1)
        bound = iss_bound(params, float(norms[0]))
        envelope = np.array([bound(t) for t in range(log.horizon + 1)])
        bound_margin = float((envelope - norms).min())
        bound_ok = bool(np.all(norms <= envelope * (1.0 + _REL_TOL)))
    return AnalysisResult(
        params=params, condition=condition, adt_fits=adt_fits, aat_fits=aat_fits,
        timers=timers, wcert=wcert, bound_ok=bound_ok, bound_margin=bound_margin,
    )


def write_analysis_report(path, result: AnalysisResult, extra: dict | None = None) -> None:
    import json
    from pathlib import Path

    p = result.params
    doc = {
        "params": {
            "lam": p.lam, "lambda_u": p.lambda_u, "k": p.k, "mu": p.mu,
            "tau": p.tau, "N0": p.N0, "eta": p.eta, "T0": p.T0,
            "u_max": p.u_max, "lam_bar": p.lam_bar, "lam_under": p.lam_under,
            "a": p.a, "b": p.b, "r": p.r, "zeta": p.zeta, "c": p.c,
            "r_const": p.r_const if p.a < 1.0 else None,
        },
        "condition": {"holds": result.condition.holds, "lhs": result.condition.lhs},
        "adt_fits": result.adt_fits,
        "aat_fits": result.aat_fits,
        "certificate": {
            "ok": result.wcert.ok,
            "violations": list(result.wcert.violations),
            "cases_seen": sorted(result.wcert.cases_seen),
            "u_range_ok": result.wcert.u_range_ok,
            "comparison_ok": result.wcert.comparison_ok,
            "state_lower_ok": result.wcert.state_lower_ok,
        },
        "bound": {"ok": result.bound_ok, "margin": result.bound_margin},
        "ok": result.ok,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_analysis_series(path, log: RunLog, result: AnalysisResult) -> None:
    """CSV time series for external plotting: |x|, bound, W, timers."""
    import csv
    from pathlib import Path

    xs = log.states()
    norms = np.linalg.norm(xs, axis=1)
    if result.condition.holds:
        bound = iss_bound(result.params, float(norms[0]))
        env = [bound(t) for t in range(log.horizon + 1)]
    else:
        env = [""] * (log.horizon + 1)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "x_norm", "bound", "w", "tau_d", "tau_a"])
        for t in range(log.horizon + 1):
            w.writerow([
                t, repr(float(norms[t])),
                env[t] if env[t] == "" else repr(float(env[t])),
                repr(float(result.wcert.w[t])),
                repr(float(result.timers.tau_d[t])),
                repr(float(result.timers.tau_a[t])),
            ])
