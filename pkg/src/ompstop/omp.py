"""Orthogonal matching pursuit in the empirical inner product.

The path is built incrementally: each step selects the column with maximal
normalized empirical correlation with the current residual, orthonormalizes
it against the previously selected directions and subtracts the projection
of the residual.  Everything is measured in the empirical geometry
``<a, b>_n = mean(a * b)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "ContractError",
    "NoCandidateError",
    "DegenerateColumnError",
    "MissingTruthError",
    "Dataset",
    "OmpPath",
    "PathDiagnostics",
    "Fit",
    "empirical_inner",
    "empirical_norm",
    "select_next",
    "start_path",
    "advance",
    "run_path",
    "coefficients_at",
    "fitted_values",
    "diagnostics",
    "residual_drops",
    "population_risk",
    "load_csv",
]

DEGENERACY_RTOL = 1e-12
INTERCEPT_NAME = "(intercept)"


class ContractError(ValueError):
    """Raised when inputs violate an operation's preconditions."""


class NoCandidateError(ContractError):
    pass


class DegenerateColumnError(ArithmeticError):
    """The selected column lies (numerically) in the span of earlier ones."""

    def __init__(self, index: int, ratio: float):
        super().__init__(f"column {index} is degenerate (relative norm {ratio:.3e})")
        self.index = index
        self.ratio = ratio


class MissingTruthError(ContractError):
    pass


def empirical_inner(a, b) -> float:
    """Return ``n^{-1} sum_i a_i b_i``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ContractError("empty vectors")
    return float(a @ b) / a.size


def empirical_norm(a) -> float:
    return float(np.sqrt(empirical_inner(a, a)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Design, response and optional ground truth.

    Parameters
    ----------
    X : (n, p) array
        Covariates, one column per variable.
    Y : (n,) array
        Response.
    beta_star, epsilon, f_star_values : arrays, optional
        Simulation truth.  ``f_star_values`` defaults to ``X @ beta_star``
        and ``epsilon`` to ``Y - f_star_values`` when one of them is missing.
    gamma : (p, p) array, optional
        Population covariance of the rows of ``X``.
    intercept : bool
        Prepend a constant column to the design used by the path.
    names : sequence of str, optional
        Column names of ``X``.
    """

    X: np.ndarray
    Y: np.ndarray
    beta_star: np.ndarray | None = None
    epsilon: np.ndarray | None = None
    f_star_values: np.ndarray | None = None
    gamma: np.ndarray | None = None
    intercept: bool = False
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        X = np.ascontiguousarray(self.X, dtype=float)
        Y = np.ascontiguousarray(self.Y, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise ContractError(f"X must be a non-empty matrix, got shape {X.shape}")
        if Y.shape != (X.shape[0],):
            raise ContractError(f"Y has shape {Y.shape}, expected ({X.shape[0]},)")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise ContractError("non-finite entries in X or Y")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)

        f, eps = self.f_star_values, self.epsilon
        if self.beta_star is not None:
            beta = np.asarray(self.beta_star, dtype=float)
            if beta.shape != (X.shape[1],):
                raise ContractError("beta_star length must equal p")
            object.__setattr__(self, "beta_star", beta)
            if f is None:
                f = X @ beta
        if f is not None and eps is None:
            eps = Y - np.asarray(f, dtype=float)
        elif eps is not None and f is None:
            f = Y - np.asarray(eps, dtype=float)
        if f is not None:
            f = np.asarray(f, dtype=float)
            eps = np.asarray(eps, dtype=float)
            if f.shape != Y.shape or eps.shape != Y.shape:
                raise ContractError("truth vectors must have length n")
            scale = max(1.0, float(np.max(np.abs(Y))))
            if np.max(np.abs(f + eps - Y)) > 1e-10 * scale:
                raise ContractError("f_star_values + epsilon != Y")
            object.__setattr__(self, "f_star_values", f)
            object.__setattr__(self, "epsilon", eps)

        if self.gamma is not None:
            g = np.asarray(self.gamma, dtype=float)
            if g.shape != (X.shape[1], X.shape[1]):
                raise ContractError("gamma must be p x p")
            if np.max(np.abs(g - g.T)) > 1e-12:
                raise ContractError("gamma is not symmetric")
            object.__setattr__(self, "gamma", g)
        if self.names is not None:
            if len(self.names) != X.shape[1]:
                raise ContractError("names must match the number of columns")
            object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def has_truth(self) -> bool:
        return self.f_star_values is not None

    @cached_property
    def design(self) -> np.ndarray:
        """Matrix the path runs on (with the constant column first if requested)."""
        if not self.intercept:
            return self.X
        return np.ascontiguousarray(np.hstack([np.ones((self.n, 1)), self.X]))

    @property
    def n_columns(self) -> int:
        return self.p + int(self.intercept)

    @cached_property
    def column_norms(self) -> np.ndarray:
        d = self.design
        return np.sqrt(np.einsum("ij,ij->j", d, d) / self.n)

    @cached_property
    def column_names(self) -> tuple[str, ...]:
        names = self.names or tuple(f"x{j + 1}" for j in range(self.p))
        return ((INTERCEPT_NAME,) if self.intercept else ()) + tuple(names)

    @cached_property
    def eps_norm_sq(self) -> float:
        if self.epsilon is None:
            raise MissingTruthError("dataset carries no noise vector")
        return float(self.epsilon @ self.epsilon) / self.n


def select_next(residual, X, excluded=(), column_norms=None) -> int:
    """Index of the column maximizing ``|<residual, X_j / ||X_j||_n>_n|``.

    Ties go to the smallest index; zero columns and ``excluded`` indices are
    never returned.
    """
    X = np.asarray(X, dtype=float)
    residual = np.asarray(residual, dtype=float)
    n = X.shape[0]
    if residual.shape != (n,):
        raise ContractError("residual length must equal n")
    if column_norms is None:
        column_norms = np.sqrt(np.einsum("ij,ij->j", X, X) / n)
    score = _scores(residual @ X, column_norms, n)
    if len(excluded):
        score[np.fromiter(excluded, dtype=int)] = -1.0
    j = int(np.argmax(score))
    if score[j] < 0:
        raise NoCandidateError("no eligible column left")
    return j


def _scores(corr: np.ndarray, column_norms: np.ndarray, n: int) -> np.ndarray:
    score = np.full(corr.shape, -1.0)
    ok = column_norms > 0
    score[ok] = np.abs(corr[ok]) / (n * column_norms[ok])
    return score


class _Buffer:
    """Append-only storage shared between successive paths of one run."""

    def __init__(self, n: int, capacity: int):
        self.q = np.empty((capacity, n))
        self.r = np.zeros((capacity, capacity))
        self.filled = 0

    @property
    def capacity(self) -> int:
        return self.q.shape[0]

    def fork(self, m: int, capacity: int) -> "_Buffer":
        new = _Buffer(self.q.shape[1], capacity)
        new.q[:m] = self.q[:m]
        new.r[:m, :m] = self.r[:m, :m]
        new.filled = m
        return new


@dataclass(frozen=True, eq=False)
class OmpPath:
    """Greedy trajectory after ``m = len(selected)`` steps.

    ``r_sq[k]`` is the squared empirical residual norm after ``k`` steps,
    ``proj[k]`` the coefficient ``<residual_k, q_{k+1}>_n``; ``q_basis`` holds
    the empirically orthonormal directions and ``r_factor`` the triangular
    factor linking them to the selected columns.
    """

    selected: tuple[int, ...]
    r_sq: np.ndarray
    proj: np.ndarray
    residual: np.ndarray
    n: int
    p: int
    zero_correlation_steps: tuple[int, ...] = ()
    stop_reason: str | None = None
    _buf: _Buffer = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return len(self.selected)

    def __len__(self) -> int:
        return self.m

    @property
    def q_basis(self) -> np.ndarray:
        return self._buf.q[: self.m]

    @property
    def r_factor(self) -> np.ndarray:
        return self._buf.r[: self.m, : self.m]

    @property
    def max_length(self) -> int:
        return min(self.n, self.p)


def start_path(dataset: Dataset, capacity: int | None = None) -> OmpPath:
    """The empty path: ``F^(0) = 0`` and ``r_0^2 = ||Y||_n^2``."""
    n, p = dataset.n, dataset.n_columns
    cap = min(n, p) if capacity is None else max(1, min(capacity, n, p))
    Y = dataset.Y
    return OmpPath(
        selected=(),
        r_sq=np.array([float(Y @ Y) / n]),
        proj=np.empty(0),
        residual=Y.copy(),
        n=n,
        p=p,
        _buf=_Buffer(n, cap),
    )


def _new_direction(Q: np.ndarray, x: np.ndarray, j: int, col_norm: float):
    """Classical Gram-Schmidt with one re-orthogonalization pass.

    Returns the unit (empirical norm) direction, the projection coefficients
    on ``Q`` and the norm of the orthogonal remainder.
    """
    n = x.size
    v = x.copy()
    h = np.zeros(Q.shape[0])
    if Q.shape[0]:
        for _ in range(2):
            c = Q @ v / n
            v -= c @ Q
            h += c
    v_norm = float(np.sqrt(v @ v / n))
    if col_norm == 0 or v_norm <= DEGENERACY_RTOL * col_norm:
        raise DegenerateColumnError(j, v_norm / col_norm if col_norm else 0.0)
    return v / v_norm, h, v_norm


def advance(path: OmpPath, dataset: Dataset) -> OmpPath:
    """One OMP step; returns the extended path and leaves ``path`` intact.

    Raises
    ------
    DegenerateColumnError
        If the chosen column has (numerically) no component outside the span
        of the current directions.
    """
    m, n = path.m, path.n
    if m >= path.max_length:
        raise ContractError(f"path already has the maximal length {path.max_length}")
    X = dataset.design
    j = select_next(path.residual, X, path.selected, dataset.column_norms)
    flagged = path.zero_correlation_steps
    if path.r_sq[-1] > 0 and abs(path.residual @ X[:, j]) == 0.0:
        flagged = flagged + (m,)

    buf = path._buf
    if buf.filled > m or buf.capacity <= m:
        # a sibling already wrote past this path, or out of room
        cap = buf.capacity if buf.capacity > m else min(2 * buf.capacity, path.max_length)
        buf = buf.fork(m, cap)

    q, h, v_norm = _new_direction(buf.q[:m], X[:, j], j, dataset.column_norms[j])
    buf.q[m] = q
    buf.r[:m, m] = h
    buf.r[m, m] = v_norm
    buf.filled = m + 1

    a = float(path.residual @ q) / n
    residual = path.residual - a * q
    r_next = max(path.r_sq[-1] - a * a, 0.0)
    return OmpPath(
        selected=path.selected + (j,),
        r_sq=np.append(path.r_sq, r_next),
        proj=np.append(path.proj, a),
        residual=residual,
        n=n,
        p=path.p,
        zero_correlation_steps=flagged,
        _buf=buf,
    )


class _Builder:
    """Mutable fast path used by :func:`run_path`; produces the same numbers as
    repeated :func:`advance` calls without the per-step array copies."""

    def __init__(self, dataset: Dataset, capacity: int):
        self.ds = dataset
        self.start = start_path(dataset, capacity)
        self.buf = self.start._buf
        self.residual = self.start.residual
        self.selected: list[int] = []
        self.r_sq = [float(self.start.r_sq[0])]
        self.proj: list[float] = []
        self.flagged: list[int] = []
        self.excluded = np.zeros(dataset.n_columns, dtype=bool)
        self.stop_reason: str | None = None

    def step(self) -> None:
        ds, buf, n = self.ds, self.buf, self.ds.n
        m = len(self.selected)
        X = ds.design
        corr = self.residual @ X
        score = _scores(corr, ds.column_norms, n)
        score[self.excluded] = -1.0
        j = int(np.argmax(score))
        if score[j] < 0:
            raise NoCandidateError("no eligible column left")
        if self.r_sq[-1] > 0 and corr[j] == 0.0:
            self.flagged.append(m)
        q, h, v_norm = _new_direction(buf.q[:m], X[:, j], j, ds.column_norms[j])
        buf.q[m] = q
        buf.r[:m, m] = h
        buf.r[m, m] = v_norm
        buf.filled = m + 1
        a = float(self.residual @ q) / n
        self.residual = self.residual - a * q
        self.r_sq.append(max(self.r_sq[-1] - a * a, 0.0))
        self.proj.append(a)
        self.selected.append(j)
        self.excluded[j] = True

    def freeze(self) -> OmpPath:
        return OmpPath(
            selected=tuple(self.selected),
            r_sq=np.asarray(self.r_sq),
            proj=np.asarray(self.proj),
            residual=self.residual,
            n=self.ds.n,
            p=self.ds.n_columns,
            zero_correlation_steps=tuple(self.flagged),
            stop_reason=self.stop_reason,
            _buf=self.buf,
        )


def run_path(dataset: Dataset, m_max: int, *, recompute: bool = False, until=None) -> OmpPath:
    """Run OMP for up to ``m_max`` steps.

    A degenerate step ends the path early; the cause is kept in
    ``stop_reason``.  ``until(m, r_sq_m)`` may stop the run as soon as it
    returns true (used for sequential stopping, where later iterations are
    never computed).  With ``recompute`` the residual norms are recomputed
    from the final basis instead of the incremental updates.
    """
    limit = min(dataset.n, dataset.n_columns)
    if m_max > limit:
        raise ContractError(f"m_max={m_max} exceeds min(n, p)={limit}")
    b = _Builder(dataset, m_max)
    if until is not None and until(0, b.r_sq[0]):
        b.stop_reason = "rule"
        return b.freeze()
    while len(b.selected) < m_max:
        try:
            b.step()
        except DegenerateColumnError as exc:
            b.stop_reason = f"degenerate: {exc}"
            break
        except NoCandidateError:
            b.stop_reason = "no candidate"
            break
        if until is not None and until(len(b.selected), b.r_sq[-1]):
            b.stop_reason = "rule"
            break
    path = b.freeze()
    if recompute:
        path = _recomputed(path, dataset)
    return path


def _recomputed(path: OmpPath, dataset: Dataset) -> OmpPath:
    Q = path.q_basis
    coef = Q @ dataset.Y / dataset.n
    fits = np.vstack([np.zeros(dataset.n), np.cumsum(coef[:, None] * Q, axis=0)])
    resid = dataset.Y[None, :] - fits
    r_sq = np.einsum("ij,ij->i", resid, resid) / dataset.n
    return OmpPath(
        selected=path.selected,
        r_sq=r_sq,
        proj=coef,
        residual=resid[-1],
        n=path.n,
        p=path.p,
        zero_correlation_steps=path.zero_correlation_steps,
        stop_reason=path.stop_reason,
        _buf=path._buf,
    )


class Fit(NamedTuple):
    beta: np.ndarray
    intercept: float


def coefficients_at(path: OmpPath, m: int, dataset: Dataset) -> Fit:
    """Least-squares coefficients on the first ``m`` selected columns."""
    if not 0 <= m <= path.m:
        raise ContractError(f"m={m} outside 0..{path.m}")
    full = np.zeros(dataset.n_columns)
    if m:
        sol = solve_triangular(path.r_factor[:m, :m], path.proj[:m], lower=False)
        full[list(path.selected[:m])] = sol
    if dataset.intercept:
        return Fit(full[1:], float(full[0]))
    return Fit(full, 0.0)


def fitted_values(path: OmpPath, m: int) -> np.ndarray:
    """``F^(m)``, the projection of ``Y`` onto the first ``m`` directions."""
    if not 0 <= m <= path.m:
        raise ContractError(f"m={m} outside 0..{path.m}")
    return path.proj[:m] @ path.q_basis[:m]


@dataclass(frozen=True)
class PathDiagnostics:
    """Per-iteration oracle quantities, indexed by ``m = 0..M``."""

    b_sq: np.ndarray
    s: np.ndarray
    c: np.ndarray
    emp_risk: np.ndarray
    eps_norm_sq: float
    delta_r_sq: np.ndarray
    flagged_steps: tuple[int, ...] = ()

    @property
    def delta_s(self) -> np.ndarray:
        """``s_m - s_{m-1}`` for ``m >= 1`` (entry 0 is 0)."""
        return np.diff(self.s, prepend=self.s[0])

    def __len__(self) -> int:
        return len(self.b_sq)


def residual_drops(r_sq: np.ndarray) -> np.ndarray:
    """Decrease ``r_{m-1}^2 - r_m^2`` of the residual norm (entry 0 is 0)."""
    r_sq = np.asarray(r_sq)
    return -np.diff(r_sq, prepend=r_sq[0])


def diagnostics(path: OmpPath, dataset: Dataset) -> PathDiagnostics:
    """Bias, stochastic error, cross term and risk along the whole path."""
    if not dataset.has_truth:
        raise MissingTruthError("diagnostics need f_star_values and epsilon")
    n = dataset.n
    f, eps = dataset.f_star_values, dataset.epsilon
    Q = path.q_basis
    a = Q @ f / n
    e = Q @ eps / n
    f_sq = float(f @ f) / n
    fe = float(f @ eps) / n
    b_sq = np.maximum(f_sq - np.concatenate([[0.0], np.cumsum(a * a)]), 0.0)
    s = np.concatenate([[0.0], np.cumsum(e * e)])
    c = fe - np.concatenate([[0.0], np.cumsum(a * e)])
    return PathDiagnostics(
        b_sq=b_sq,
        s=s,
        c=c,
        emp_risk=b_sq + s,
        eps_norm_sq=float(eps @ eps) / n,
        delta_r_sq=residual_drops(path.r_sq),
        flagged_steps=path.zero_correlation_steps,
    )


def population_risk(beta_hat, beta_star, gamma) -> float:
    """``(beta_hat - beta_star)^T Gamma (beta_hat - beta_star)``.

    ``gamma`` may be a dense matrix or any object with a ``quad`` method
    (see :class:`ompstop.simulation.BandedCovariance`).
    """
    d = np.asarray(beta_hat, dtype=float) - np.asarray(beta_star, dtype=float)
    if hasattr(gamma, "quad"):
        if d.shape != (gamma.p,):
            raise ContractError("dimension mismatch")
        return max(float(gamma.quad(d)), 0.0)
    g = np.asarray(gamma, dtype=float)
    if d.ndim != 1 or g.shape != (d.size, d.size):
        raise ContractError(f"dimension mismatch: {d.shape} vs {g.shape}")
    return max(float(d @ g @ d), 0.0)


def load_csv(path, *, intercept: bool = False) -> Dataset:
    """Read a dataset: header row, response in the first column.

    Columns named ``f_star`` or ``epsilon`` are treated as simulation truth
    rather than covariates.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ContractError(f"{path}: need a header and at least one data row")
    header, body = rows[0], rows[1:]
    try:
        data = np.array([[float(v) for v in row] for row in body])
    except ValueError as exc:
        raise ContractError(f"{path}: {exc}") from None
    if data.shape[1] != len(header) or data.shape[1] < 2:
        raise ContractError(f"{path}: ragged rows or no covariates")
    truth = {name: data[:, k] for k, name in enumerate(header) if name in ("f_star", "epsilon")}
    cols = [k for k, name in enumerate(header) if k > 0 and name not in truth]
    return Dataset(
        X=data[:, cols],
        Y=data[:, 0],
        f_star_values=truth.get("f_star"),
        epsilon=truth.get("epsilon"),
        intercept=intercept,
        names=tuple(header[k] for k in cols),
    )

