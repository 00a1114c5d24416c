"""Executable versions of the deterministic identities and of the
high-probability bounds, with declared tolerances.

Deterministic checks must hold on every run up to floating point slack.
Probabilistic checks count violations over (run, iteration) pairs and pass
when the violation fraction stays below a declared allowance; the
constants (``C = 8``, allowances 5 % and 10 %, band factor 10) are
calibration choices of this package, not sharp constants.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .omp import OmpPath, PathDiagnostics
from .stopping import Sparsity, StoppingConfig, balanced_oracle, rate_target, tau, threshold

IDENTITY_TOL = 1e-8
INEQUALITY_SLACK = 1e-10
M_LIMIT = 50


@dataclass
class CheckReport:
    name: str
    instances: int
    max_abs_violation: float
    max_rel_violation: float
    violation_fraction: float
    tolerance: float
    passed: bool
    deterministic: bool
    note: str = ""
    secondary: dict | None = field(default=None)

    def to_dict(self) -> dict:
        return asdict(self)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        kind = "deterministic" if self.deterministic else "probabilistic"
        return (
            f"{status} {self.name} ({kind}): instances={self.instances} "
            f"max_violation={self.max_abs_violation:.3e} fraction={self.violation_fraction:.4f} "
            f"tol={self.tolerance:g}"
        )


def _report(name, violations, scale, tol, deterministic, *, fraction_tol=None, note="", secondary=None):
    v = np.asarray(violations, dtype=float)
    if v.size == 0:
        return CheckReport(name, 0, 0.0, 0.0, 0.0, tol, True, deterministic, note or "nothing to check", secondary)
    pos = np.maximum(v, 0.0)
    rel = pos / scale
    if deterministic:
        frac = float(np.mean(rel > tol))
        passed = bool(np.max(rel) <= tol)
    else:
        # round-off slack only; the fraction allowance is the statistical tolerance
        frac = float(np.mean(rel > tol))
        passed = frac <= fraction_tol
    return CheckReport(
        name=name,
        instances=int(v.size),
        max_abs_violation=float(np.max(pos)),
        max_rel_violation=float(np.max(rel)),
        violation_fraction=frac,
        tolerance=tol if deterministic else fraction_tol,
        passed=passed,
        deterministic=deterministic,
        note=note,
        secondary=secondary,
    )


def check_residual_decomposition(r_sq, diag: PathDiagnostics) -> CheckReport:
    """``r_m^2 = b_m^2 + 2 c_m + ||eps||_n^2 - s_m`` for every ``m``.

    Violations are relative to ``max(1, ||Y||_n^2)``.
    """
    r_sq = np.asarray(r_sq.r_sq if isinstance(r_sq, OmpPath) else r_sq)
    k = min(len(r_sq), len(diag))
    rhs = diag.b_sq[:k] + 2 * diag.c[:k] + diag.eps_norm_sq - diag.s[:k]
    scale = max(1.0, float(r_sq[0]))
    return _report("residual_decomposition", np.abs(r_sq[:k] - rhs), scale, IDENTITY_TOL, True)


def check_balanced_oracle(diag: PathDiagnostics) -> CheckReport:
    """Risk at the balanced oracle is at most twice the best risk plus the
    last increment of the stochastic error."""
    sel = balanced_oracle(diag)
    if sel.capped and not diag.b_sq[sel.m] <= diag.s[sel.m]:
        return _report("balanced_oracle", [], 1.0, INEQUALITY_SLACK, True, note="no crossing on the path")
    mb = sel.m
    ds = diag.s[mb] - diag.s[mb - 1] if mb > 0 else 0.0
    lhs = diag.emp_risk[mb]
    rhs = 2 * float(np.min(diag.emp_risk)) + ds
    return _report("balanced_oracle", [lhs - rhs], 1.0, INEQUALITY_SLACK, True)


def norm_comparison_terms(path: OmpPath, diag: PathDiagnostics, cfg: StoppingConfig, m: int, tau_sel=None):
    """Left and right side of the empirical norm comparison at probe ``m``.

    Uses the decrease ``r_{tau-1}^2 - r_tau^2`` as the discretization error and
    the threshold in force at ``tau`` (for ``tau < m``) or ``tau - 1``
    (for ``tau > m``).
    """
    t = tau(path, cfg) if tau_sel is None else tau_sel
    tm = t.m
    lo, hi = sorted((tm, m))
    lhs = float(np.sum(path.proj[lo:hi] ** 2))
    eps_sq = diag.eps_norm_sq
    rhs = diag.emp_risk[m] + 2 * abs(diag.c[m])
    if tm < m:
        rhs += threshold(tm, cfg) - eps_sq
    elif tm > m:
        drop = path.r_sq[tm - 1] - path.r_sq[tm]
        rhs += eps_sq + drop - threshold(tm - 1, cfg)
    return lhs, rhs


def check_norm_comparison(path: OmpPath, diag: PathDiagnostics, cfg: StoppingConfig, m_probe=None) -> CheckReport:
    """Deterministic comparison of ``F^(tau)`` with ``F^(m)``.

    ``m_probe`` may be an int, an iterable of ints or ``None`` (all ``m`` on
    the path).  When ``tau`` is capped only probes below it are meaningful.
    """
    t = tau(path, cfg)
    top = min(path.m, len(diag) - 1)
    if m_probe is None:
        probes = range(top + 1)
    elif isinstance(m_probe, (int, np.integer)):
        probes = [int(m_probe)]
    else:
        probes = list(m_probe)
    probes = [m for m in probes if m <= top and not (t.capped and m > t.m)]
    viol = []
    for m in probes:
        lhs, rhs = norm_comparison_terms(path, diag, cfg, m, t)
        viol.append(lhs - rhs)
    scale = max(1.0, float(path.r_sq[0]))
    return _report("norm_comparison", viol, scale, INEQUALITY_SLACK, True,
                   note="tau capped" if t.capped else "")


def _data_scale(diags: Sequence[PathDiagnostics]) -> float:
    """Magnitude of ``||f*||_n^2 + ||eps||_n^2``, the scale of every path quantity."""
    return max([1.0] + [float(d.b_sq[0] + d.eps_norm_sq) for d in diags])


def check_cross_term_bound(
    diags: Sequence[PathDiagnostics],
    sigma_bar_sq: float,
    n: int,
    p: int,
    *,
    allowance: float = 0.05,
    m_limit: int = M_LIMIT,
) -> CheckReport:
    """``|c_m| <= b_m sqrt(4 sigma^2 (m+1) log p / n)`` over ``m <= m_limit``.

    The residual-drop bound ``r_{m-1}^2 - r_m^2 <= 2 b_{m-1}^2 + 8 sigma^2 m log p / n``
    is reported as a secondary series.
    """
    log_p = math.log(p)
    viol, viol2 = [], []
    for d in diags:
        k = min(len(d), m_limit + 1)
        m = np.arange(k)
        bound = np.sqrt(d.b_sq[:k]) * np.sqrt(4 * sigma_bar_sq * (m + 1) * log_p / n)
        viol.append(np.abs(d.c[:k]) - bound)
        if k > 1:
            drop = d.delta_r_sq[1:k]
            bound2 = 2 * d.b_sq[: k - 1] + 8 * sigma_bar_sq * m[1:] * log_p / n
            viol2.append(drop - bound2)
    v2 = np.concatenate(viol2) if viol2 else np.zeros(0)
    secondary = {
        "name": "residual_drop_bound",
        "instances": int(v2.size),
        "violation_fraction": float(np.mean(v2 > INEQUALITY_SLACK * _data_scale(diags))) if v2.size else 0.0,
    }
    v = np.concatenate(viol) if viol else np.zeros(0)
    return _report("cross_term_bound", v, _data_scale(diags), INEQUALITY_SLACK, False, fraction_tol=allowance, secondary=secondary,
                   note="allowance 5% is a finite-sample calibration")


def check_stochastic_error_bound(
    diags: Sequence[PathDiagnostics],
    sigma_bar_sq: float,
    n: int,
    p: int,
    C: float = 8.0,
    *,
    allowance: float = 0.05,
    m_limit: int = M_LIMIT,
) -> CheckReport:
    """``s_m <= C sigma^2 m log p / n`` over ``m <= m_limit``."""
    log_p = math.log(p)
    viol = []
    for d in diags:
        k = min(len(d), m_limit + 1)
        m = np.arange(k)
        viol.append(d.s[:k] - C * sigma_bar_sq * m * log_p / n)
    v = np.concatenate(viol) if viol else np.zeros(0)
    return _report("stochastic_error_bound", v, _data_scale(diags), INEQUALITY_SLACK, False, fraction_tol=allowance,
                   note=f"C={C:g} is a calibration constant")


def check_noise_estimation(
    estimates: Iterable[tuple[float, float]],
    sparsity: Sparsity,
    n: int,
    p: int,
    *,
    sigma_bar_sq: float = 1.0,
    rho_sq: float = 1.0,
    band: float = 10.0,
    allowance: float = 0.10,
) -> CheckReport:
    """Fraction of runs with ``|sigma_hat^2 - ||eps||_n^2| > band * R(s, gamma)``.

    ``estimates`` yields ``(sigma_hat_sq, eps_norm_sq)`` pairs.
    """
    pairs = np.asarray(list(estimates), dtype=float).reshape(-1, 2)
    rate = rate_target(sparsity, n, p, sigma_bar_sq, rho_sq)
    viol = np.abs(pairs[:, 0] - pairs[:, 1]) - band * rate
    return _report("noise_estimation", viol, 1.0, 0.0, False, fraction_tol=allowance,
                   note=f"band {band:g} x rate {rate:.4g}")
