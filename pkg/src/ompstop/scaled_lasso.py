"""Lasso by cyclic coordinate descent, the Scaled Lasso and a CV baseline.

The Lasso objective is ``||Y - X b||^2 / (2n) + lam * ||b||_1``.  The Scaled
Lasso jointly minimizes

    L(b, sigma) = ||Y - X b||^2 / (2 n sigma) + sigma / 2 + lambda0 * ||b||_1

by alternating a closed-form scale update with a warm-started Lasso solve
at penalty ``sigma * lambda0``.  Its minimizing ``sigma^2`` estimates the
empirical noise level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from .omp import ContractError, Dataset


@dataclass(frozen=True)
class LassoConfig:
    lam: float
    tol: float = 1e-8
    max_sweeps: int = 10_000

    def __post_init__(self):
        if not self.lam > 0:
            raise ContractError("lambda must be positive")
        if not self.tol > 0:
            raise ContractError("tol must be positive")


class LassoResult(NamedTuple):
    beta: np.ndarray
    intercept: float
    sweeps: int
    converged: bool
    kkt: float


@numba.njit(cache=True)
def _sweep(X, col_sq, r, beta, lam, idx, n):
    worst = 0.0
    for j in idx:
        cs = col_sq[j]
        if cs == 0.0:
            continue
        g = 0.0
        for i in range(n):
            g += X[i, j] * r[i]
        z = beta[j] * cs + g / n
        if z > lam:
            new = (z - lam) / cs
        elif z < -lam:
            new = (z + lam) / cs
        else:
            new = 0.0
        d = new - beta[j]
        if d != 0.0:
            for i in range(n):
                r[i] -= d * X[i, j]
            beta[j] = new
            step = abs(d) * cs
            if step > worst:
                worst = step
    return worst


@numba.njit(cache=True)
def _kkt(X, r, beta, lam, n):
    p = X.shape[1]
    worst = 0.0
    g = np.zeros(p)
    for j in range(p):
        s = 0.0
        for i in range(n):
            s += X[i, j] * r[i]
        g[j] = s / n
        if beta[j] > 0.0:
            v = abs(g[j] - lam)
        elif beta[j] < 0.0:
            v = abs(g[j] + lam)
        else:
            v = abs(g[j]) - lam
        if v > worst:
            worst = v
    return worst, g


@numba.njit(cache=True)
def _cd(X, y, lam, beta, col_sq, tol, max_sweeps):
    n, p = X.shape
    r = y.copy()
    for j in range(p):
        if beta[j] != 0.0:
            for i in range(n):
                r[i] -= beta[j] * X[i, j]
    all_idx = np.arange(p)
    sweeps = 0
    kkt = np.inf
    while sweeps < max_sweeps:
        _sweep(X, col_sq, r, beta, lam, all_idx, n)
        sweeps += 1
        active = np.flatnonzero(beta)
        while sweeps < max_sweeps and active.size > 0:
            worst = _sweep(X, col_sq, r, beta, lam, active, n)
            sweeps += 1
            if worst <= 0.1 * tol:
                break
        kkt, g = _kkt(X, r, beta, lam, n)
        if kkt <= tol:
            return beta, sweeps, True, kkt
    return beta, sweeps, False, kkt


def _center(X: np.ndarray, y: np.ndarray):
    xm = X.mean(axis=0)
    ym = float(y.mean())
    return X - xm, y - ym, xm, ym


def lasso_objective(X: np.ndarray, y: np.ndarray, beta: np.ndarray, lam: float) -> float:
    r = y - X @ beta
    return float(r @ r) / (2 * len(y)) + lam * float(np.abs(beta).sum())


def solve_lasso(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    *,
    tol: float = 1e-8,
    max_sweeps: int = 10_000,
    warm_start: np.ndarray | None = None,
    col_sq: np.ndarray | None = None,
) -> LassoResult:
    """Coordinate descent on raw arrays (no intercept)."""
    if not lam > 0:
        raise ContractError("lambda must be positive")
    Xf = np.asfortranarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = Xf.shape
    if col_sq is None:
        col_sq = np.einsum("ij,ij->j", Xf, Xf) / n
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=float)
    if beta.shape != (p,):
        raise ContractError("warm start has the wrong length")
    beta, sweeps, ok, kkt = _cd(Xf, y, float(lam), beta, col_sq, float(tol), int(max_sweeps))
    return LassoResult(beta, 0.0, int(sweeps), bool(ok), float(kkt))


def lasso_cd(dataset: Dataset, cfg: LassoConfig, warm_start: np.ndarray | None = None) -> LassoResult:
    """Lasso fit of ``dataset``; an intercept, if requested, is left unpenalized."""
    X, y = dataset.X, dataset.Y
    if dataset.intercept:
        X, y, xm, ym = _center(X, y)
    res = solve_lasso(X, y, cfg.lam, tol=cfg.tol, max_sweeps=cfg.max_sweeps, warm_start=warm_start)
    if dataset.intercept:
        return res._replace(intercept=ym - float(xm @ res.beta))
    return res


@dataclass
class ScaledLassoResult:
    beta_hat: np.ndarray
    sigma_hat: float
    lambda0: float
    iterations: int
    converged: bool
    intercept: float = 0.0
    degenerate: bool = False
    objective_trace: list[float] = field(default_factory=list, repr=False)

    @property
    def sigma_hat_sq(self) -> float:
        return self.sigma_hat**2


def scaled_lasso_objective(X, y, beta, sigma, lambda0) -> float:
    r = y - X @ beta
    return float(r @ r) / (2 * len(y) * sigma) + sigma / 2 + lambda0 * float(np.abs(beta).sum())


def scaled_lasso(
    dataset: Dataset,
    lambda0: float,
    *,
    tol: float = 1e-8,
    max_iter: int = 500,
    max_sweeps: int = 10_000,
) -> ScaledLassoResult:
    """Alternating minimization of the Scaled Lasso objective.

    The problem is solved for ``Y / ||Y||_n`` and mapped back, so the result
    is exactly scale-equivariant and tolerances are relative to the size of
    the response.
    """
    if not lambda0 > 0:
        raise ContractError("lambda0 must be positive")
    X, y = dataset.X, dataset.Y
    if dataset.intercept:
        X, y, xm, ym = _center(X, y)
    n, p = X.shape
    scale = math.sqrt(float(y @ y) / n)
    if scale == 0.0:
        return ScaledLassoResult(np.zeros(p), 1e-300, lambda0, 0, True,
                                 intercept=float(dataset.Y.mean()) if dataset.intercept else 0.0,
                                 degenerate=True)
    yn = y / scale
    Xf = np.asfortranarray(X)
    col_sq = np.einsum("ij,ij->j", Xf, Xf) / n
    floor = 1e-10
    beta = np.zeros(p)
    sigma = max(math.sqrt(float(yn @ yn) / n), floor)
    trace = [scaled_lasso_objective(Xf, yn, beta, sigma, lambda0)]
    converged = False
    it = 0
    inner_ok = True
    while it < max_iter:
        it += 1
        res = solve_lasso(Xf, yn, sigma * lambda0, tol=tol, max_sweeps=max_sweeps,
                          warm_start=beta, col_sq=col_sq)
        beta = res.beta
        inner_ok = inner_ok and res.converged
        trace.append(scaled_lasso_objective(Xf, yn, beta, sigma, lambda0))
        r = yn - Xf @ beta
        new_sigma = max(math.sqrt(float(r @ r) / n), floor)
        trace.append(scaled_lasso_objective(Xf, yn, beta, new_sigma, lambda0))
        done = abs(new_sigma - sigma) <= tol * max(1.0, sigma)
        sigma = new_sigma
        if done:
            converged = inner_ok
            break
    beta_hat = beta * scale
    intercept = ym - float(xm @ beta_hat) if dataset.intercept else 0.0
    return ScaledLassoResult(
        beta_hat=beta_hat,
        sigma_hat=sigma * scale,
        lambda0=lambda0,
        iterations=it,
        converged=converged,
        intercept=intercept,
        objective_trace=[v * scale for v in trace],
    )


def default_lambda0(n: int, p: int, factor: float = 1.0) -> float:
    """``sqrt(factor * log(p) / n)``."""
    if not factor > 0:
        raise ContractError("factor must be positive")
    return math.sqrt(factor * math.log(p) / n)


class LassoCvResult(NamedTuple):
    beta: np.ndarray
    intercept: float
    lam: float
    lambda_grid: np.ndarray
    cv_error: np.ndarray


def default_lambda_grid(X: np.ndarray, y: np.ndarray, size: int = 100, ratio: float = 1e-3) -> np.ndarray:
    lam_max = float(np.max(np.abs(X.T @ y))) / len(y)
    if lam_max == 0:
        lam_max = 1.0
    return np.geomspace(lam_max, ratio * lam_max, size)


def fold_assignment(n: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Contiguous blocks of a seeded permutation; entry ``i`` is the fold of row ``i``."""
    if folds < 2:
        raise ContractError("need at least 2 folds")
    if n // folds < 2:
        raise ContractError(f"{folds} folds leave fewer than 2 observations per fold")
    perm = rng.permutation(n)
    out = np.empty(n, dtype=int)
    for k, block in enumerate(np.array_split(perm, folds)):
        out[block] = k
    return out


def lasso_cv(
    dataset: Dataset,
    folds: int = 5,
    lambda_grid: np.ndarray | None = None,
    *,
    rng: np.random.Generator | int | None = 0,
    tol: float = 1e-8,
) -> LassoCvResult:
    """K-fold cross-validated Lasso; refits on all data at the chosen penalty."""
    rng = np.random.default_rng(rng)
    X, y = dataset.X, dataset.Y
    n = dataset.n
    if lambda_grid is None:
        Xc, yc = (_center(X, y)[:2] if dataset.intercept else (X, y))
        lambda_grid = default_lambda_grid(Xc, yc)
    grid = np.sort(np.asarray(lambda_grid, dtype=float))[::-1]
    if grid.size == 0 or np.any(grid <= 0):
        raise ContractError("lambda grid must be non-empty and positive")
    fold = fold_assignment(n, folds, rng)
    err = np.zeros(grid.size)
    for k in range(folds):
        tr, te = fold != k, fold == k
        Xtr, ytr = X[tr], y[tr]
        if dataset.intercept:
            Xtr, ytr, xm, ym = _center(Xtr, ytr)
        Xf = np.asfortranarray(Xtr)
        col_sq = np.einsum("ij,ij->j", Xf, Xf) / Xf.shape[0]
        beta = np.zeros(dataset.p)
        for g, lam in enumerate(grid):
            beta = solve_lasso(Xf, ytr, lam, tol=tol, warm_start=beta, col_sq=col_sq).beta
            pred = X[te] @ beta
            if dataset.intercept:
                pred += ym - xm @ beta
            err[g] += float(np.sum((y[te] - pred) ** 2))
    err /= n
    best = int(np.argmin(err))
    res = lasso_cd(dataset, LassoConfig(grid[best], tol=tol))
    return LassoCvResult(res.beta, res.intercept, float(grid[best]), grid, err)
