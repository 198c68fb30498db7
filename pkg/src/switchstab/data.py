"""State/input data matrices, consistent-set geometry, and data compatibility.

A recorded trajectory x(0..T), u(0..T-1) is held as the state block ``X``
(n x (T+1)) and the input block ``U_minus`` (m x T). The systems consistent
with the record form an affine set: the minimum-norm exact fit plus arbitrary
row perturbations drawn from the left annihilator of the stacked regressor
[X_minus; U_minus]. Two records are compatible when at least one system
explains both, which reduces to a kernel inclusion between their stacked
blocks.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, NoExactFit, NonFiniteMatrix
from .linalg import DEFAULT_TOL, Tolerance, kernel_basis, kernel_included, least_squares

__all__ = [
    "DataMatrices",
    "ConsistentSet",
    "MatchSet",
    "consistent_set",
    "sample_consistent",
    "compatible",
    "prune_matches",
    "pairwise_incompatible",
    "write_trajectory_csv",
    "read_trajectory_csv",
    "write_manifest",
    "read_manifest",
    "load_manifest_data",
]


@dataclass(frozen=True)
class DataMatrices:
    """One recorded trajectory; T = number of transitions (may be 0)."""

    X: np.ndarray
    U_minus: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        U = np.atleast_2d(np.asarray(self.U_minus, dtype=float))
        if X.shape[1] != U.shape[1] + 1:
            raise DimensionMismatch(
                f"state block has {X.shape[1]} columns, input block {U.shape[1]}; "
                "they must differ by exactly one"
            )
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(U))):
            raise NonFiniteMatrix("trajectory contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "U_minus", U)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.U_minus.shape[0]

    @property
    def T(self) -> int:
        return self.U_minus.shape[1]

    @property
    def X_plus(self) -> np.ndarray:
        return self.X[:, 1:]

    @property
    def X_minus(self) -> np.ndarray:
        return self.X[:, :-1]

    @property
    def regressor(self) -> np.ndarray:
        """Stacked [X_minus; U_minus], shape (n+m, T)."""
        return np.vstack([self.X_minus, self.U_minus])

    @classmethod
    def from_initial_state(cls, x0, m: int) -> "DataMatrices":
        x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
        return cls(X=x0, U_minus=np.zeros((m, 0)))

    def append(self, u, x_next) -> "DataMatrices":
        """New record with one more transition."""
        u = np.asarray(u, dtype=float).reshape(-1, 1)
        x_next = np.asarray(x_next, dtype=float).reshape(-1, 1)
        return DataMatrices(
            X=np.hstack([self.X, x_next]),
            U_minus=np.hstack([self.U_minus, u]),
        )


@dataclass(frozen=True)
class ConsistentSet:
    """Affine set of (A, B) pairs that exactly explain a record.

    ``nominal`` is the minimum-norm fit [A0 B0] (n x (n+m)); each column of
    ``kernel_dirs`` is an orthonormal direction w with [dA dB] = c w^T leaving
    the fit exact for any row coefficients c. The set is a singleton iff
    ``kernel_dirs`` has no columns.
    """

    nominal: np.ndarray
    kernel_dirs: np.ndarray

    @property
    def n(self) -> int:
        return self.nominal.shape[0]

    @property
    def m(self) -> int:
        return self.nominal.shape[1] - self.nominal.shape[0]

    @property
    def dim(self) -> int:
        return self.n * self.kernel_dirs.shape[1]

    @property
    def is_singleton(self) -> bool:
        return self.kernel_dirs.shape[1] == 0

    @property
    def nominal_A(self) -> np.ndarray:
        return self.nominal[:, : self.n]

    @property
    def nominal_B(self) -> np.ndarray:
        return self.nominal[:, self.n :]


@dataclass(frozen=True)
class MatchSet:
    """Modes still compatible with the online record (0-based indices)."""

    remaining: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "remaining", tuple(sorted(set(self.remaining))))

    @classmethod
    def full(cls, p: int) -> "MatchSet":
        return cls(tuple(range(p)))

    def __len__(self) -> int:
        return len(self.remaining)

    def __contains__(self, i: int) -> bool:
        return i in self.remaining


def consistent_set(data: DataMatrices, rel_tol: float = 1e-8,
                   tol: Tolerance = DEFAULT_TOL) -> ConsistentSet:
    """Minimal parameterization of all systems that explain ``data`` exactly.

    Raises :class:`NoExactFit` when the least-squares residual exceeds
    ``rel_tol * ||X_plus||`` (the record was not produced by a single linear
    system, e.g. a corrupted file).
    """
    R = data.regressor
    if data.T == 0:
        nominal = np.zeros((data.n, data.n + data.m))
        return ConsistentSet(nominal=nominal, kernel_dirs=np.eye(data.n + data.m))
    nominal = least_squares(R.T, data.X_plus.T).T
    residual = np.linalg.norm(nominal @ R - data.X_plus)
    scale = max(np.linalg.norm(data.X_plus), 1e-30)
    if residual > rel_tol * scale:
        raise NoExactFit(
            f"residual {residual:.3e} exceeds {rel_tol:.1e} * ||X_plus||"
        )
    dirs = kernel_basis(R.T, tol)  # left annihilator of the regressor
    return ConsistentSet(nominal=nominal, kernel_dirs=dirs)


def sample_consistent(cs: ConsistentSet, count: int, radius: float = 1.0,
                      seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Deterministic samples from the consistent set; sample 0 is the nominal."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    n = cs.n
    d = cs.kernel_dirs.shape[1]
    out = []
    for i in range(count):
        if i == 0 or d == 0:
            AB = cs.nominal
        else:
            C = radius * rng.standard_normal((n, d))
            AB = cs.nominal + C @ cs.kernel_dirs.T
        out.append((AB[:, :n].copy(), AB[:, n:].copy()))
    return out


def compatible(d1: DataMatrices, d2: DataMatrices,
               tol: Tolerance = DEFAULT_TOL) -> bool:
    """True iff one system explains both records.

    Equivalent to the kernel of the side-by-side stacked regressors being
    contained in the kernel of the side-by-side successor blocks. Each
    transition column is normalized first: the predicate is exactly invariant
    under per-column scaling, and online records taken near the origin would
    otherwise drown under the initialization columns in the rank cutoff.
    """
    if d1.n != d2.n or d1.m != d2.m:
        raise DimensionMismatch("records have different state/input dimensions")
    reg = np.hstack([d1.regressor, d2.regressor])
    succ = np.hstack([d1.X_plus, d2.X_plus])
    if reg.shape[1] == 0:
        return True
    norms = np.linalg.norm(np.vstack([reg, succ]), axis=0)
    norms[norms == 0.0] = 1.0  # an all-zero transition constrains nothing
    return kernel_included(reg / norms, succ / norms, tol)


def prune_matches(ms: MatchSet, init: list[DataMatrices],
                  online: DataMatrices, tol: Tolerance = DEFAULT_TOL) -> MatchSet:
    """Drop every remaining mode whose record is incompatible with ``online``.

    A record with zero transitions constrains nothing, so the match set is
    returned unchanged in that case. With noiseless data the generating mode
    is never removed. Emptiness is left to the caller to detect.
    """
    if online.T == 0:
        return ms
    keep = tuple(i for i in ms.remaining if compatible(init[i], online, tol))
    return MatchSet(keep)


def pairwise_incompatible(init: list[DataMatrices],
                          tol: Tolerance = DEFAULT_TOL) -> bool:
    """True iff every pair of distinct records is incompatible (vacuous for p=1)."""
    p = len(init)
    for i in range(p):
        for j in range(i + 1, p):
            if compatible(init[i], init[j], tol):
                return False
    return True


# ---------------------------------------------------------------------------
# trajectory files: CSV with header t,x1..xn,u1..um; inputs empty on last row
# ---------------------------------------------------------------------------

def write_trajectory_csv(path, data: DataMatrices) -> None:
    path = Path(path)
    n, m, T = data.n, data.m, data.T
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(T + 1):
            row = [t] + [repr(float(v)) for v in data.X[:, t]]
            if t < T:
                row += [repr(float(v)) for v in data.U_minus[:, t]]
            else:
                row += [""] * m
            w.writerow(row)


def read_trajectory_csv(path) -> DataMatrices:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    n = sum(1 for name in header if name.startswith("x"))
    m = sum(1 for name in header if name.startswith("u"))
    body = rows[1:]
    X = np.array([[float(r[1 + i]) for r in body] for i in range(n)])
    U = np.array(
        [[float(r[1 + n + j]) for r in body[:-1]] for j in range(m)]
    ).reshape(m, len(body) - 1)
    return DataMatrices(X=X, U_minus=U)


def write_manifest(path, files: dict[int, str], seed=None) -> None:
    """JSON manifest binding mode index -> trajectory file (paths relative)."""
    path = Path(path)
    doc = {"modes": {str(k): str(v) for k, v in sorted(files.items())}}
    if seed is not None:
        doc["seed"] = seed
    path.write_text(json.dumps(doc, indent=2) + "\n")


def read_manifest(path) -> dict[int, Path]:
    path = Path(path)
    doc = json.loads(path.read_text())
    base = path.parent
    return {int(k): base / v for k, v in doc["modes"].items()}


def load_manifest_data(path) -> list[DataMatrices]:
    """Load per-mode records in mode order 0..p-1."""
    files = read_manifest(path)
    return [read_trajectory_csv(files[i]) for i in sorted(files)]
