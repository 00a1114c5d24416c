"""Iteration-selection rules for an OMP path.

Sequential rules (the residual discrepancy time and the two-step rule) only
look at residual norms up to the stopping point.  The exhaustive rule
(HDAIC) and the oracles need the whole path, the oracles additionally need
ground truth through :class:`~ompstop.omp.PathDiagnostics`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .omp import ContractError, Dataset, OmpPath, PathDiagnostics, run_path

RULE_NAMES = (
    "tau-true-noise",
    "tau-estimated-noise",
    "two-step",
    "hdaic",
    "oracle-classical",
    "oracle-balanced",
)


@dataclass(frozen=True)
class StoppingConfig:
    """Constants of the selection rules.

    ``sigma_hat_sq`` is the noise-level estimate in the threshold, ``c_tau``
    the slope of the iteration-dependent part of the threshold.  All
    logarithms are natural.
    """

    sigma_hat_sq: float
    n: int
    p: int
    c_tau: float = 0.0
    c_aic: float = 2.0
    c_hdaic: float = 2.0
    m_max: int | None = None

    def __post_init__(self):
        if self.n < 1 or self.p < 1:
            raise ContractError("n and p must be positive")
        if self.sigma_hat_sq < 0 or self.c_tau < 0:
            raise ContractError("sigma_hat_sq and c_tau must be non-negative")
        if self.c_aic <= 0 or self.c_hdaic <= 0:
            raise ContractError("c_aic and c_hdaic must be positive")
        if self.m_max is None:
            object.__setattr__(self, "m_max", default_m_max(self.n, self.p))
        if not 0 <= self.m_max <= min(self.n, self.p):
            raise ContractError(f"m_max={self.m_max} outside 0..min(n, p)")

    @property
    def log_p(self) -> float:
        return math.log(self.p)


def default_m_max(n: int, p: int) -> int:
    return max(min(n, p) // 2, 1)


def default_hdaic_cap(n: int, p: int) -> int:
    """``floor(sqrt(n / log p))``, at least 1."""
    return max(int(math.floor(math.sqrt(n / math.log(p)))), 1) if p > 1 else 1


class Selection(NamedTuple):
    m: int
    capped: bool = False


def threshold(m, cfg: StoppingConfig):
    """``kappa_m = sigma_hat^2 + C_tau * m * log(p) / n`` (vectorized in ``m``)."""
    m_arr = np.asarray(m, dtype=float)
    if np.any(m_arr < 0):
        raise ContractError("m must be non-negative")
    kappa = cfg.sigma_hat_sq + cfg.c_tau * m_arr * cfg.log_p / cfg.n
    return float(kappa) if kappa.ndim == 0 else kappa


def _first(mask: np.ndarray) -> int | None:
    hits = np.flatnonzero(mask)
    return int(hits[0]) if hits.size else None


def tau(path: OmpPath | np.ndarray, cfg: StoppingConfig) -> Selection:
    """First ``m`` with ``r_m^2 <= kappa_m``; ``capped`` if none up to ``m_max``.

    Accepts a path or its array of residual norms.
    """
    r_sq = np.asarray(path.r_sq if isinstance(path, OmpPath) else path)
    top = min(cfg.m_max, len(r_sq) - 1)
    m = np.arange(top + 1)
    hit = _first(r_sq[: top + 1] <= threshold(m, cfg))
    if hit is None:
        return Selection(top, True)
    return Selection(hit, False)


def stop_sequentially(dataset: Dataset, cfg: StoppingConfig) -> tuple[OmpPath, Selection]:
    """Run OMP only until the discrepancy rule fires.

    This is the computational point of the rule: no iteration after the
    stopping time is ever computed.
    """
    path = run_path(dataset, cfg.m_max, until=lambda m, r: r <= threshold(m, cfg))
    sel = tau(path, cfg)
    return path, sel


def classical_oracle(diag: PathDiagnostics, m_max: int | None = None) -> int:
    risk = diag.emp_risk if m_max is None else diag.emp_risk[: m_max + 1]
    return int(np.argmin(risk))


def balanced_oracle(diag: PathDiagnostics, m_max: int | None = None) -> Selection:
    """First ``m`` with ``b_m^2 <= s_m``."""
    top = len(diag.b_sq) - 1 if m_max is None else min(m_max, len(diag.b_sq) - 1)
    hit = _first(diag.b_sq[: top + 1] <= diag.s[: top + 1])
    if hit is None:
        return Selection(top, True)
    return Selection(hit, False)


def aic(path: OmpPath | np.ndarray, m, cfg: StoppingConfig):
    """``r_m^2 + C_AIC * m * log(p) / n``."""
    r_sq = np.asarray(path.r_sq if isinstance(path, OmpPath) else path)
    return r_sq[m] + cfg.c_aic * np.asarray(m) * cfg.log_p / cfg.n


def two_step(path: OmpPath | np.ndarray, cfg: StoppingConfig, tau_m: int | None = None) -> int:
    """Minimize AIC over ``m <= tau``; smallest index on ties."""
    if tau_m is None:
        tau_m = tau(path, cfg).m
    m = np.arange(tau_m + 1)
    return int(np.argmin(aic(path, m, cfg)))


def hdaic_values(r_sq: np.ndarray, cfg: StoppingConfig) -> np.ndarray:
    m = np.arange(len(r_sq))
    return r_sq * (1.0 + cfg.c_hdaic * m * cfg.log_p / cfg.n)


def hdaic(path: OmpPath | np.ndarray, cfg: StoppingConfig, m_cap: int | None = None) -> int:
    """Minimize ``r_m^2 (1 + C_HDAIC m log(p) / n)`` over ``0 <= m <= m_cap``.

    ``m_cap`` defaults to :func:`default_hdaic_cap`.
    """
    r_sq = np.asarray(path.r_sq if isinstance(path, OmpPath) else path)
    if m_cap is None:
        m_cap = default_hdaic_cap(cfg.n, cfg.p)
    if m_cap > len(r_sq) - 1:
        raise ContractError(f"m_cap={m_cap} exceeds path length {len(r_sq) - 1}")
    return int(np.argmin(hdaic_values(r_sq[: m_cap + 1], cfg)))


@dataclass(frozen=True)
class Sparsity:
    """Declared sparsity class: ``kind`` is ``"s"`` or ``"gamma"``."""

    kind: str
    value: float

    def __post_init__(self):
        if self.kind == "s":
            if self.value < 0:
                raise ContractError("s must be non-negative")
        elif self.kind == "gamma":
            if self.value < 1:
                raise ContractError("gamma must be >= 1")
        else:
            raise ContractError(f"unknown sparsity kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Sparsity":
        kind, _, val = text.partition(":")
        return cls(kind.strip(), float(val))


def rate_target(sparsity: Sparsity, n: int, p: int, sigma_bar_sq: float = 1.0, rho_sq: float = 1.0) -> float:
    """Minimax rate ``R(s, gamma)`` for the declared sparsity class."""
    log_p = math.log(p)
    if sparsity.kind == "s":
        return sigma_bar_sq * sparsity.value * log_p / n
    return ((sigma_bar_sq + rho_sq**2) * log_p / n) ** (1.0 - 1.0 / (2.0 * sparsity.value))


def rate_optimal_index(
    sparsity: Sparsity, n: int, p: int, sigma_bar_sq: float = 1.0, rho_sq: float = 1.0, c_supp: float = 1.0
) -> int:
    """Balancing index ``m*``: ``C_supp * s`` or ``(n / ((sigma^2 + rho^4) log p))^(1/(2 gamma))``."""
    if sparsity.kind == "s":
        return int(math.ceil(c_supp * sparsity.value))
    base = n / ((sigma_bar_sq + rho_sq**2) * math.log(p))
    return int(math.ceil(base ** (1.0 / (2.0 * sparsity.value))))


@dataclass(frozen=True)
class OracleReport:
    m_classical: int
    m_balanced: int
    risk_at_classical: float
    risk_at_balanced: float
    balanced_capped: bool = False
    m_star: int | None = None


def oracle_report(diag: PathDiagnostics, m_max: int | None = None, m_star: int | None = None) -> OracleReport:
    mo = classical_oracle(diag, m_max)
    mb = balanced_oracle(diag, m_max)
    return OracleReport(
        m_classical=mo,
        m_balanced=mb.m,
        risk_at_classical=float(diag.emp_risk[mo]),
        risk_at_balanced=float(diag.emp_risk[mb.m]),
        balanced_capped=mb.capped,
        m_star=m_star,
    )
