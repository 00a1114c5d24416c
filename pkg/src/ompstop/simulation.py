"""Synthetic experiments: signals, designs, responses and the Monte Carlo loop.

A replication builds one dataset, runs a single OMP path to ``m_max`` and
evaluates every selection rule on that shared path.  Wall-clock cost of the
sequential rules is measured separately by re-running OMP only up to their
stopping point, so the reported seconds reflect what a user of that rule
would pay.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.linalg import cholesky_banded

from . import checks
from .omp import (
    ContractError,
    Dataset,
    PathDiagnostics,
    coefficients_at,
    diagnostics,
    population_risk,
    run_path,
)
from .scaled_lasso import default_lambda0, default_lambda_grid, lasso_cv, scaled_lasso
from .stopping import (
    Sparsity,
    StoppingConfig,
    default_m_max,
    hdaic,
    oracle_report,
    stop_sequentially,
    tau,
    two_step,
)

SIGNAL_KINDS = ("g3", "g2", "g1", "s15", "s60", "s90")
CLASSIFICATION_RESCALE = {"g3": 0.03, "g2": 0.03, "g1": 0.1, "s15": 0.1, "s60": 0.1, "s90": 0.1}
TRACE_LENGTH = 51


class InvalidDesignError(ContractError):
    pass


# ---------------------------------------------------------------- signals


@dataclass(frozen=True)
class SignalSpec:
    kind: str
    l1_target: float = 10.0
    rescale_factor: float | None = None

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ContractError(f"unknown signal {self.kind!r}; expected one of {SIGNAL_KINDS}")

    @classmethod
    def classification(cls, kind: str) -> "SignalSpec":
        return cls(kind, rescale_factor=CLASSIFICATION_RESCALE[kind])


def build_signal(spec: SignalSpec, p: int) -> np.ndarray:
    """Coefficient vector, normalized to ``l1_target`` and then rescaled if asked.

    ``sK`` signals have three blocks of ``K/3`` coefficients equal to 1, 0.5
    and 0.25; ``gG`` signals decay like ``j^-G``.
    """
    if spec.kind.startswith("s"):
        s = int(spec.kind[1:])
        if p < s:
            raise ContractError(f"signal {spec.kind} needs p >= {s}")
        block = s // 3
        beta = np.zeros(p)
        beta[:block] = 1.0
        beta[block : 2 * block] = 0.5
        beta[2 * block : s] = 0.25
    else:
        if p < 1:
            raise ContractError("p must be positive")
        beta = np.arange(1, p + 1, dtype=float) ** -float(spec.kind[1:])
    beta *= spec.l1_target / beta.sum()
    if spec.rescale_factor is not None:
        beta *= spec.rescale_factor
    return beta


def declared_sparsity(kind: str) -> Sparsity:
    if kind.startswith("s"):
        return Sparsity("s", float(kind[1:]))
    return Sparsity("gamma", float(kind[1:]))


# ---------------------------------------------------------------- designs


class IdentityCovariance:
    def __init__(self, p: int):
        self.p = p

    def dense(self) -> np.ndarray:
        return np.eye(self.p)

    def quad(self, d: np.ndarray) -> float:
        return float(d @ d)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.p))


class BandedCovariance:
    """Toeplitz covariance with 1 on the diagonal, ``a`` and ``b`` on the first
    two off-diagonals.  Sampling uses the banded Cholesky factor, so it costs
    O(n p) instead of O(n p^2)."""

    def __init__(self, p: int, a: float = 0.4, b: float = 0.1):
        self.p, self.a, self.b = p, float(a), float(b)
        ab = np.zeros((3, p))
        ab[0] = 1.0
        ab[1, : p - 1] = self.a
        ab[2, : p - 2] = self.b
        try:
            self.chol = cholesky_banded(ab, lower=True)
        except np.linalg.LinAlgError as exc:
            raise InvalidDesignError(f"banded({a}, {b}) is not positive definite") from exc

    def dense(self) -> np.ndarray:
        g = np.eye(self.p)
        idx = np.arange(self.p)
        g[idx[:-1], idx[:-1] + 1] = g[idx[:-1] + 1, idx[:-1]] = self.a
        g[idx[:-2], idx[:-2] + 2] = g[idx[:-2] + 2, idx[:-2]] = self.b
        return g

    def quad(self, d: np.ndarray) -> float:
        return float(d @ d + 2 * self.a * (d[:-1] @ d[1:]) + 2 * self.b * (d[:-2] @ d[2:]))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # rows x = L z; the lower factor has bandwidth 2 (row-wise storage in chol)
        z = rng.standard_normal((n, self.p))
        L = self.chol
        x = z * L[0]
        x[:, 1:] += z[:, :-1] * L[1, :-1]
        x[:, 2:] += z[:, :-2] * L[2, :-2]
        return x


@dataclass(frozen=True)
class DesignSpec:
    n: int
    p: int
    kind: str = "uncorrelated"
    a: float = 0.4
    b: float = 0.1

    def __post_init__(self):
        if self.kind not in ("uncorrelated", "banded"):
            raise ContractError(f"unknown design kind {self.kind!r}")
        if self.n < 1 or self.p < 1:
            raise ContractError("n and p must be positive")

    def covariance(self):
        if self.kind == "uncorrelated":
            return IdentityCovariance(self.p)
        return BandedCovariance(self.p, self.a, self.b)


def sample_design(spec: DesignSpec, rng: np.random.Generator, cov=None) -> np.ndarray:
    """Rows i.i.d. ``N(0, Gamma)``."""
    cov = spec.covariance() if cov is None else cov
    return cov.sample(spec.n, rng)


# ---------------------------------------------------------------- responses


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "gaussian"
    sigma_sq: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "classification"):
            raise ContractError(f"unknown noise kind {self.kind!r}")
        if self.kind == "gaussian" and self.sigma_sq < 0:
            raise ContractError("sigma_sq must be non-negative")

    @property
    def sigma_bar_sq(self) -> float:
        """Subgaussian parameter of the noise (1/4 for centered Bernoulli)."""
        return self.sigma_sq if self.kind == "gaussian" else 0.25


def sample_response(X: np.ndarray, beta_star: np.ndarray, noise: NoiseSpec, rng: np.random.Generator):
    """Return ``(Y, epsilon, f_star_values)``.

    Classification: ``f*`` is the clamped probability ``clip(0.5 + X beta, 0, 1)``,
    labels are Bernoulli(f*) and ``epsilon = Y - f*``.
    """
    lin = X @ beta_star
    if noise.kind == "gaussian":
        eps = math.sqrt(noise.sigma_sq) * rng.standard_normal(X.shape[0])
        return lin + eps, eps, lin
    f = np.clip(0.5 + lin, 0.0, 1.0)
    y = (rng.random(X.shape[0]) < f).astype(float)
    return y, y - f, f


# ---------------------------------------------------------------- metrics


def relative_efficiency(diag: PathDiagnostics | np.ndarray, m_hat: int | None = None, risk: float | None = None) -> float:
    """``min_m ||F^(m) - f*||_n / ||F^(m_hat) - f*||_n``.

    Pass ``risk`` instead of ``m_hat`` to compare an estimator off the path.
    """
    emp = diag.emp_risk if isinstance(diag, PathDiagnostics) else np.asarray(diag)
    best = float(np.min(emp))
    sel = float(emp[m_hat]) if risk is None else float(risk)
    if sel <= 0.0:
        return 1.0
    return math.sqrt(max(best, 0.0) / sel)


# ---------------------------------------------------------------- experiments

DEFAULT_RULE_PARAMS: dict[str, dict[str, Any]] = {
    "tau-true-noise": {"c_tau": 0.0},
    "tau-estimated-noise": {"c_tau": 0.0, "lambda0_factor": 1.0},
    "two-step": {"c_tau": 0.0, "lambda0_factor": 0.5, "c_aic": 2.0},
    "hdaic": {"c_hdaic": 2.0, "m_cap": None},
    "oracle-classical": {},
    "oracle-balanced": {},
    "lasso-cv": {"folds": 5, "grid_size": 100},
}


@dataclass(frozen=True)
class RuleSpec:
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in DEFAULT_RULE_PARAMS:
            raise ContractError(f"unknown rule {self.name!r}; valid: {sorted(DEFAULT_RULE_PARAMS)}")
        unknown = set(self.params) - set(DEFAULT_RULE_PARAMS[self.name])
        if unknown:
            raise ContractError(f"rule {self.name}: unknown params {sorted(unknown)}")

    def get(self, key: str):
        return self.params.get(key, DEFAULT_RULE_PARAMS[self.name][key])

    @property
    def label(self) -> str:
        """Method label; parameters that differ from the defaults are appended."""
        extra = [f"{k}={v}" for k, v in sorted(self.params.items()) if v != DEFAULT_RULE_PARAMS[self.name][k]]
        return self.name + (f"[{','.join(extra)}]" if extra else "")


REFERENCE_RULES = (
    RuleSpec("tau-true-noise"),
    RuleSpec("tau-estimated-noise"),
    RuleSpec("two-step"),
    RuleSpec("hdaic"),
    RuleSpec("oracle-classical"),
    RuleSpec("oracle-balanced"),
)


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything that determines a Monte Carlo experiment."""

    signal: SignalSpec
    design: DesignSpec
    noise: NoiseSpec = NoiseSpec()
    runs: int = 100
    seed: int = 0
    rules: tuple[RuleSpec, ...] = REFERENCE_RULES
    m_max: int | None = None
    timing: bool = True
    debug_asserts: bool = False
    keep_traces: bool = False

    def __post_init__(self):
        if self.runs < 1:
            raise ContractError("runs must be >= 1")
        if self.m_max is None:
            object.__setattr__(self, "m_max", default_m_max(self.design.n, self.design.p))
        if not 1 <= self.m_max <= min(self.design.n, self.design.p):
            raise ContractError(f"m_max={self.m_max} outside 1..min(n, p)")
        labels = [r.label for r in self.rules]
        if len(set(labels)) != len(labels):
            raise ContractError("duplicate rules")

    @property
    def intercept(self) -> bool:
        return self.noise.kind == "classification"


@dataclass
class MethodResult:
    method: str
    selected_m: int
    emp_risk: float
    pop_risk: float
    rel_efficiency: float
    dev_from_oracle: int
    sigma_hat_sq: float
    noise_abs_err: float
    seconds: float
    capped: bool = False


@dataclass
class RunResult:
    run_id: int
    m_classical: int
    m_balanced: int
    eps_norm_sq: float
    path_length: int
    methods: list[MethodResult]
    # diagnostics are truncated to TRACE_LENGTH entries, residual norms are kept whole
    trace: PathDiagnostics | None = None
    r_sq_trace: np.ndarray | None = None
    checks: list[checks.CheckReport] = field(default_factory=list)
    stop_reason: str | None = None

    def method(self, label: str) -> MethodResult:
        for m in self.methods:
            if m.method == label:
                return m
        raise KeyError(label)


@dataclass
class RunFailure:
    run_id: int
    error: str


def run_seeds(master_seed: int, run_index: int) -> list[np.random.SeedSequence]:
    """Independent streams for (design, noise, cv) of one replication."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(run_index,)).spawn(3)


def make_dataset(spec: ExperimentSpec, run_index: int, cov=None) -> Dataset:
    s_design, s_noise, _ = run_seeds(spec.seed, run_index)
    beta = build_signal(spec.signal, spec.design.p)
    cov = spec.design.covariance() if cov is None else cov
    X = sample_design(spec.design, np.random.default_rng(s_design), cov)
    Y, eps, f = sample_response(X, beta, spec.noise, np.random.default_rng(s_noise))
    return Dataset(X=X, Y=Y, beta_star=beta, epsilon=eps, f_star_values=f, intercept=spec.intercept)


class _Clock:
    def __init__(self, enabled: bool):
        self.enabled = enabled

    def __call__(self, fn, *args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        return out, (time.perf_counter() - t0 if self.enabled else 0.0)


def run_once(spec: ExperimentSpec, run_index: int, cov=None) -> RunResult:
    """One replication: dataset, shared path, every rule, metrics."""
    clock = _Clock(spec.timing)
    cov = spec.design.covariance() if cov is None else cov
    ds = make_dataset(spec, run_index, cov)
    n, p = ds.n, ds.p
    m_max = spec.m_max

    path, t_path = clock(run_path, ds, m_max)
    diag, t_diag = clock(diagnostics, path, ds)
    top = path.m
    oracles = oracle_report(diag)
    m_o = oracles.m_classical
    eps_sq = diag.eps_norm_sq
    pop_known = spec.noise.kind == "gaussian"

    def pop(m: int) -> float:
        if not pop_known:
            return float("nan")
        return population_risk(coefficients_at(path, m, ds).beta, ds.beta_star, cov)

    def record(label, m, sigma_sq, seconds, capped=False) -> MethodResult:
        return MethodResult(
            method=label,
            selected_m=int(m),
            emp_risk=float(diag.emp_risk[m]),
            pop_risk=pop(m),
            rel_efficiency=relative_efficiency(diag, m),
            dev_from_oracle=int(m) - m_o,
            sigma_hat_sq=sigma_sq,
            noise_abs_err=abs(sigma_sq - eps_sq) if not math.isnan(sigma_sq) else float("nan"),
            seconds=seconds,
            capped=capped,
        )

    lasso_cache: dict[float, tuple] = {}

    def noise_estimate(factor: float):
        if factor not in lasso_cache:
            lam0 = default_lambda0(n, p, factor)
            lasso_cache[factor] = clock(scaled_lasso, ds, lam0)
        return lasso_cache[factor]

    def cfg_for(rule: RuleSpec, sigma_sq: float) -> StoppingConfig:
        return StoppingConfig(
            sigma_hat_sq=sigma_sq,
            n=n,
            p=p,
            c_tau=float(rule.params.get("c_tau", 0.0)),
            c_aic=float(rule.params.get("c_aic", 2.0)),
            c_hdaic=float(rule.params.get("c_hdaic", 2.0)),
            m_max=min(m_max, top),
        )

    results: list[MethodResult] = []
    run_checks: list[checks.CheckReport] = []
    for rule in spec.rules:
        name = rule.name
        if name in ("tau-true-noise", "tau-estimated-noise", "two-step"):
            if name == "tau-true-noise":
                sigma_sq, t_noise = eps_sq, 0.0
            else:
                sl, t_noise = noise_estimate(float(rule.get("lambda0_factor")))
                sigma_sq = sl.sigma_hat_sq
            cfg = cfg_for(rule, sigma_sq)
            sel = tau(path, cfg)
            (seq_path, seq_sel), t_seq = clock(stop_sequentially, ds, cfg)
            if spec.debug_asserts and (seq_sel.m != sel.m or seq_path.selected != path.selected[: seq_path.m]):
                raise AssertionError(f"{rule.label}: sequential run disagrees with the shared path")
            m = sel.m
            t_extra = 0.0
            if name == "two-step":
                m, t_extra = clock(two_step, seq_path, cfg, seq_sel.m)
            results.append(record(rule.label, m, sigma_sq, t_noise + t_seq + t_extra, sel.capped))
            if spec.debug_asserts:
                run_checks.append(checks.check_norm_comparison(path, diag, cfg))
        elif name == "hdaic":
            cfg = cfg_for(rule, eps_sq)
            cap = rule.get("m_cap")
            cap = top if cap is None else min(int(cap), top)
            m, t_crit = clock(hdaic, path, cfg, cap)
            results.append(record(rule.label, m, float("nan"), t_path + t_crit))
        elif name == "oracle-classical":
            results.append(record(rule.label, m_o, float("nan"), t_path + t_diag))
        elif name == "oracle-balanced":
            results.append(
                record(rule.label, oracles.m_balanced, float("nan"), t_path + t_diag, oracles.balanced_capped)
            )
        elif name == "lasso-cv":
            s_cv = run_seeds(spec.seed, run_index)[2]
            grid_size = int(rule.get("grid_size"))
            Xg, yg = ds.X, ds.Y
            if ds.intercept:
                Xg, yg = Xg - Xg.mean(axis=0), yg - yg.mean()
            grid = default_lambda_grid(Xg, yg, grid_size)
            cv, t_cv = clock(lasso_cv, ds, int(rule.get("folds")), grid, rng=np.random.default_rng(s_cv), tol=1e-6)
            fit = ds.X @ cv.beta + cv.intercept
            risk = float(np.mean((fit - ds.f_star_values) ** 2))
            results.append(
                MethodResult(
                    method=rule.label,
                    selected_m=int(np.count_nonzero(cv.beta)),
                    emp_risk=risk,
                    pop_risk=population_risk(cv.beta, ds.beta_star, cov) if pop_known else float("nan"),
                    rel_efficiency=relative_efficiency(diag, risk=risk),
                    dev_from_oracle=int(np.count_nonzero(cv.beta)) - m_o,
                    sigma_hat_sq=float("nan"),
                    noise_abs_err=float("nan"),
                    seconds=t_cv,
                )
            )

    if spec.debug_asserts:
        run_checks.append(checks.check_residual_decomposition(path.r_sq, diag))
        run_checks.append(checks.check_balanced_oracle(diag))
        bad = [c for c in run_checks if not c.passed]
        if bad:
            raise AssertionError("; ".join(f"{c.name}: max violation {c.max_abs_violation:.3e}" for c in bad))

    k = min(TRACE_LENGTH, len(diag))
    trace = r_trace = None
    if spec.keep_traces:
        trace = PathDiagnostics(
            b_sq=diag.b_sq[:k].copy(),
            s=diag.s[:k].copy(),
            c=diag.c[:k].copy(),
            emp_risk=diag.emp_risk[:k].copy(),
            eps_norm_sq=diag.eps_norm_sq,
            delta_r_sq=diag.delta_r_sq[:k].copy(),
        )
        r_trace = path.r_sq.copy()
    return RunResult(
        run_id=run_index,
        m_classical=m_o,
        m_balanced=oracles.m_balanced,
        eps_norm_sq=eps_sq,
        path_length=top,
        methods=results,
        trace=trace,
        r_sq_trace=r_trace,
        checks=run_checks,
        stop_reason=path.stop_reason,
    )


def _safe_run(spec: ExperimentSpec, run_index: int, cov=None):
    try:
        return run_once(spec, run_index, cov)
    except Exception as exc:  # recorded, never retried
        return RunFailure(run_index, f"{type(exc).__name__}: {exc}")


def _worker(args):
    spec, run_index = args
    return _safe_run(spec, run_index)


@dataclass
class McSummary:
    spec: ExperimentSpec
    runs: list[RunResult]
    failures: list[RunFailure]

    @property
    def methods(self) -> list[str]:
        return [r.label for r in self.spec.rules]

    def values(self, method: str, attr: str) -> np.ndarray:
        return np.array([getattr(r.method(method), attr) for r in self.runs])

    def oracle_values(self, attr: str) -> np.ndarray:
        return np.array([getattr(r, attr) for r in self.runs])

    def median(self, method: str, attr: str = "selected_m") -> float:
        return float(np.median(self.values(method, attr)))

    def deviations(self, method: str) -> np.ndarray:
        return self.values(method, "dev_from_oracle")

    def to_dict(self) -> dict:
        """JSON-ready medians and quartiles per method."""
        out: dict[str, Any] = {
            "runs": len(self.runs),
            "failed": [{"run_id": f.run_id, "error": f.error} for f in self.failures],
            "oracles": {},
            "methods": {},
        }
        if not self.runs:
            return out
        for attr in ("m_classical", "m_balanced", "eps_norm_sq"):
            out["oracles"][attr] = _quartiles(self.oracle_values(attr))
        attrs = ["selected_m", "rel_efficiency", "emp_risk", "pop_risk", "dev_from_oracle", "noise_abs_err"]
        if self.spec.timing:
            attrs.append("seconds")
        for method in self.methods:
            entry = {a: _quartiles(self.values(method, a)) for a in attrs}
            if self.spec.timing:
                entry["total_seconds"] = float(np.sum(self.values(method, "seconds")))
            out["methods"][method] = entry
        return out


def _quartiles(x: np.ndarray) -> dict:
    x = np.asarray(x, dtype=float)
    x = x[~np.isnan(x)]
    if x.size == 0:
        return {"median": None, "q1": None, "q3": None}
    q1, med, q3 = np.quantile(x, [0.25, 0.5, 0.75])
    return {"median": float(med), "q1": float(q1), "q3": float(q3)}


def _warm_up() -> None:
    rng = np.random.default_rng(0)
    X = rng.standard_normal((8, 3))
    scaled_lasso(Dataset(X, X[:, 0] + 0.1 * rng.standard_normal(8)), 0.1)


def monte_carlo(spec: ExperimentSpec, workers: int = 1) -> McSummary:
    """Run ``spec.runs`` replications; the result does not depend on ``workers``."""
    _warm_up()
    indices = range(spec.runs)
    if workers <= 1:
        cov = spec.design.covariance()
        outcomes = [_safe_run(spec, i, cov) for i in indices]
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_warm_up) as pool:
            outcomes = list(pool.map(_worker, [(spec, i) for i in indices]))
    runs = [o for o in outcomes if isinstance(o, RunResult)]
    failures = [o for o in outcomes if isinstance(o, RunFailure)]
    if not runs:
        raise RuntimeError(f"all {spec.runs} runs failed; first error: {failures[0].error}")
    return McSummary(spec, runs, failures)


CSV_COLUMNS = (
    "run_id",
    "method",
    "selected_m",
    "emp_risk",
    "pop_risk",
    "rel_efficiency",
    "dev_from_oracle",
    "sigma_hat_sq",
    "noise_abs_err",
    "seconds",
)


def fmt(x) -> str:
    """Round-trip decimal formatting (17 significant digits) for floats."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.17g}"


def csv_rows(summary: McSummary) -> list[list[str]]:
    rows = [list(CSV_COLUMNS)]
    for run in summary.runs:
        for m in run.methods:
            rows.append([str(run.run_id), m.method] + [fmt(getattr(m, c)) for c in CSV_COLUMNS[2:]])
    return rows


def summary_table(summary: McSummary) -> str:
    lines = [f"{'method':<40} {'median m':>9} {'median eff':>11} {'seconds':>9}"]
    for method in summary.methods:
        secs = float(np.sum(summary.values(method, "seconds")))
        lines.append(
            f"{method:<40} {summary.median(method):>9.1f} "
            f"{summary.median(method, 'rel_efficiency'):>11.3f} {secs:>9.2f}"
        )
    return "\n".join(lines)


def reference_spec(signal: str, *, runs: int = 100, seed: int = 2024, n: int = 1000, p: int = 1000,
               rules: Sequence[RuleSpec] = REFERENCE_RULES, **kwargs) -> ExperimentSpec:
    """The uncorrelated Gaussian regression study at ``n = p = 1000``."""
    return ExperimentSpec(
        signal=SignalSpec(signal),
        design=DesignSpec(n, p),
        noise=NoiseSpec("gaussian", 1.0),
        runs=runs,
        seed=seed,
        rules=tuple(rules),
        **kwargs,
    )


def classification_spec(signal: str, *, runs: int = 100, seed: int = 2024, n: int = 1000, p: int = 1000,
                        rules: Sequence[RuleSpec] | None = None, **kwargs) -> ExperimentSpec:
    """Bernoulli labels on the banded design, intercept column added."""
    if rules is None:
        rules = (
            RuleSpec("tau-estimated-noise"),
            RuleSpec("two-step", {"c_aic": 0.5}),
            RuleSpec("hdaic", {"c_hdaic": 0.5}),
            RuleSpec("oracle-classical"),
            RuleSpec("oracle-balanced"),
        )
    return ExperimentSpec(
        signal=SignalSpec.classification(signal),
        design=DesignSpec(n, p, "banded", 0.4, 0.1),
        noise=NoiseSpec("classification"),
        runs=runs,
        seed=seed,
        rules=tuple(rules),
        **kwargs,
    )
