"""Command-line interface.

Subcommands::

    ompstop simulate --config F --out DIR [--workers N] [--debug-asserts]
    ompstop fit --data F --rule NAME [--param K=V ...]
    ompstop noise-estimate --data F [--lambda0-factor X]
    ompstop check --config F

Configuration errors exit with status 2 and a ``file:line: message``
diagnostic; nothing is written in that case.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from dataclasses import replace
from typing import Any

import numpy as np

from . import checks
from .omp import ContractError, Dataset, coefficients_at, diagnostics, load_csv, run_path
from .scaled_lasso import default_lambda0, scaled_lasso
from .simulation import (
    DEFAULT_RULE_PARAMS,
    SIGNAL_KINDS,
    DesignSpec,
    ExperimentSpec,
    McSummary,
    NoiseSpec,
    RuleSpec,
    SignalSpec,
    csv_rows,
    declared_sparsity,
    make_dataset,
    monte_carlo,
    summary_table,
)
from .stopping import (
    RULE_NAMES,
    StoppingConfig,
    default_hdaic_cap,
    default_m_max,
    hdaic,
    oracle_report,
    stop_sequentially,
    two_step,
)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(Exception):
    """Invalid configuration; ``line`` points into the source file when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


# ---------------------------------------------------------------- config

TOP_KEYS = {"signal", "design", "noise", "n", "p", "runs", "seed", "rules", "m_max", "timing", "keep_traces"}
REQUIRED_KEYS = {"signal", "n", "p"}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _expect(cond: bool, msg: str, text: str, key: str):
    if not cond:
        raise ConfigError(msg, _line_of(text, key))


def _check_keys(obj: dict, allowed: set, where: str, text: str):
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}; allowed: {sorted(allowed)}", _line_of(text, key))


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def parse_experiment(text: str) -> ExperimentSpec:
    """Validate a JSON experiment description and build the spec.

    Raises
    ------
    ConfigError
        On malformed JSON, unknown or missing keys, or bad values.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(raw, dict):
        raise ConfigError("top level must be an object", 1)
    _check_keys(raw, TOP_KEYS, "config", text)
    missing = REQUIRED_KEYS - set(raw)
    if missing:
        raise ConfigError(f"missing required keys {sorted(missing)}", 1)

    n, p = raw["n"], raw["p"]
    _expect(_is_int(n) and n >= 1, "n must be a positive integer", text, "n")
    _expect(_is_int(p) and p >= 1, "p must be a positive integer", text, "p")

    sig = raw["signal"]
    if isinstance(sig, str):
        sig = {"kind": sig}
    _expect(isinstance(sig, dict), "signal must be a string or an object", text, "signal")
    _check_keys(sig, {"kind", "l1_target", "rescale_factor"}, "signal", text)
    _expect(sig.get("kind") in SIGNAL_KINDS, f"signal kind must be one of {list(SIGNAL_KINDS)}", text, "signal")

    design = raw.get("design", {"kind": "uncorrelated"})
    _expect(isinstance(design, dict), "design must be an object", text, "design")
    _check_keys(design, {"kind", "a", "b"}, "design", text)

    noise = raw.get("noise", {"kind": "gaussian", "sigma_sq": 1.0})
    if isinstance(noise, str):
        noise = {"kind": noise}
    _expect(isinstance(noise, dict), "noise must be a string or an object", text, "noise")
    _check_keys(noise, {"kind", "sigma_sq"}, "noise", text)

    rules_raw = raw.get("rules", [{"name": r} for r in RULE_NAMES])
    _expect(isinstance(rules_raw, list) and rules_raw, "rules must be a non-empty list", text, "rules")
    rules = []
    for r in rules_raw:
        if isinstance(r, str):
            r = {"name": r}
        _expect(isinstance(r, dict) and "name" in r, "each rule needs a name", text, "rules")
        _check_keys(r, {"name", "params"}, "rule", text)
        name = r["name"]
        if name not in DEFAULT_RULE_PARAMS:
            raise ConfigError(f"unknown rule {name!r}; valid: {sorted(DEFAULT_RULE_PARAMS)}", _line_of(text, "name"))
        params = r.get("params", {})
        _expect(isinstance(params, dict), "rule params must be an object", text, "params")
        _check_keys(params, set(DEFAULT_RULE_PARAMS[name]), f"params of {name}", text)
        for k, v in params.items():
            _expect(v is None or _is_num(v), f"parameter {k} must be a number", text, k)
        rules.append(RuleSpec(name, dict(params)))

    for key in ("runs", "seed", "m_max"):
        if key in raw and raw[key] is not None:
            _expect(_is_int(raw[key]) and raw[key] >= 0, f"{key} must be a non-negative integer", text, key)
    for key in ("timing", "keep_traces"):
        if key in raw:
            _expect(isinstance(raw[key], bool), f"{key} must be true or false", text, key)

    try:
        spec = ExperimentSpec(
            signal=SignalSpec(**sig),
            design=DesignSpec(n, p, **design),
            noise=NoiseSpec(**noise),
            runs=raw.get("runs", 100),
            seed=raw.get("seed", 0),
            rules=tuple(rules),
            m_max=raw.get("m_max"),
            timing=raw.get("timing", True),
            keep_traces=raw.get("keep_traces", False),
        )
        spec.design.covariance()  # surfaces an indefinite banded design before any compute
    except (ContractError, TypeError) as exc:
        raise ConfigError(str(exc), 1) from None
    return spec


def load_experiment(path: str) -> ExperimentSpec:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None) from None
    return parse_experiment(text)


def _config_error(path: str, exc: ConfigError) -> int:
    loc = f"{path}:{exc.line}" if exc.line is not None else path
    print(f"{loc}: error: {exc}", file=sys.stderr)
    return EXIT_USAGE


# ---------------------------------------------------------------- simulate


def write_outputs(summary: McSummary, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "runs.csv"), "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(csv_rows(summary))
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_simulate(args) -> int:
    try:
        spec = load_experiment(args.config)
    except ConfigError as exc:
        return _config_error(args.config, exc)
    if args.debug_asserts:
        spec = replace(spec, debug_asserts=True)
    try:
        summary = monte_carlo(spec, workers=args.workers)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    write_outputs(summary, args.out)
    print(summary_table(summary))
    if summary.failures:
        print(f"{len(summary.failures)} of {spec.runs} runs failed; see summary.json", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- fit

FIT_PARAMS = {
    "tau-true-noise": {"c_tau", "m_max"},
    "tau-estimated-noise": {"c_tau", "lambda0_factor", "m_max"},
    "two-step": {"c_tau", "lambda0_factor", "c_aic", "m_max"},
    "hdaic": {"c_hdaic", "m_cap", "m_max"},
    "oracle-classical": {"m_max"},
    "oracle-balanced": {"m_max"},
}


def _parse_params(items: list[str], rule: str) -> dict[str, float]:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise ContractError(f"--param expects K=V, got {item!r}")
        if key not in FIT_PARAMS[rule]:
            raise ContractError(f"rule {rule} has no parameter {key!r}; allowed: {sorted(FIT_PARAMS[rule])}")
        try:
            out[key] = float(val)
        except ValueError:
            raise ContractError(f"parameter {key} must be numeric, got {val!r}") from None
    return out


def fit_report(ds: Dataset, rule: str, params: dict[str, float]) -> dict[str, Any]:
    """Run one selection rule on a dataset and collect the JSON report."""
    n, p = ds.n, ds.n_columns
    m_max = int(params.get("m_max", default_m_max(n, p)))
    report: dict[str, Any] = {"rule": rule}
    if rule.startswith("oracle") and not ds.has_truth:
        raise ContractError("oracle requires ground truth (f_star or epsilon columns)")
    if rule == "tau-true-noise" and not ds.has_truth:
        raise ContractError("tau-true-noise requires ground truth (an epsilon column)")

    def cfg(sigma_sq: float) -> StoppingConfig:
        return StoppingConfig(
            sigma_hat_sq=sigma_sq,
            n=n,
            p=p,
            c_tau=params.get("c_tau", 0.0),
            c_aic=params.get("c_aic", 2.0),
            c_hdaic=params.get("c_hdaic", 2.0),
            m_max=m_max,
        )

    capped = False
    if rule in ("tau-true-noise", "tau-estimated-noise", "two-step"):
        if rule == "tau-true-noise":
            sigma_sq = ds.eps_norm_sq
        else:
            factor = params.get("lambda0_factor", 1.0 if rule == "tau-estimated-noise" else 0.5)
            sl = scaled_lasso(ds, default_lambda0(n, ds.p, factor))
            sigma_sq = sl.sigma_hat_sq
            report["lambda0"] = sl.lambda0
            report["scaled_lasso_converged"] = sl.converged
        report["sigma_hat_sq"] = sigma_sq
        c = cfg(sigma_sq)
        path, sel = stop_sequentially(ds, c)
        report["tau"] = sel.m
        capped = sel.capped
        m = two_step(path, c, sel.m) if rule == "two-step" else sel.m
    elif rule == "hdaic":
        path = run_path(ds, m_max)
        cap = int(params.get("m_cap", default_hdaic_cap(n, p)))
        m = hdaic(path, cfg(0.0), min(cap, path.m))
    else:
        path = run_path(ds, m_max)
        rep = oracle_report(diagnostics(path, ds))
        if rule == "oracle-classical":
            m = rep.m_classical
        else:
            m, capped = rep.m_balanced, rep.balanced_capped
    fit = coefficients_at(path, m, ds)
    names = ds.column_names
    cols = path.selected[:m]
    report.update(
        selected_m=int(m),
        capped=bool(capped),
        selected_columns=[names[j] for j in cols],
        coefficients={names[j]: float(fit.beta[j - int(ds.intercept)]) for j in cols if not (ds.intercept and j == 0)},
        intercept=float(fit.intercept),
        r_sq=[float(v) for v in path.r_sq],
    )
    return report


def _load_data(path: str, intercept: bool) -> Dataset:
    try:
        return load_csv(path, intercept=intercept)
    except OSError as exc:
        raise ContractError(f"cannot read {path}: {exc.strerror}") from None


def cmd_fit(args) -> int:
    if args.rule not in FIT_PARAMS:
        print(f"error: unknown rule {args.rule!r}; valid rules: {', '.join(RULE_NAMES)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        params = _parse_params(args.param, args.rule)
        ds = _load_data(args.data, args.intercept)
        report = fit_report(ds, args.rule, params)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_noise_estimate(args) -> int:
    try:
        ds = _load_data(args.data, args.intercept)
        lam0 = default_lambda0(ds.n, ds.p, args.lambda0_factor)
        res = scaled_lasso(ds, lam0)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out = {
        "sigma_hat_sq": res.sigma_hat_sq,
        "sigma_hat": res.sigma_hat,
        "lambda0": lam0,
        "iterations": res.iterations,
        "converged": res.converged,
        "nonzero": int(np.count_nonzero(res.beta_hat)),
    }
    if ds.epsilon is not None:
        out["eps_norm_sq"] = ds.eps_norm_sq
        out["abs_error"] = abs(res.sigma_hat_sq - ds.eps_norm_sq)
    print(json.dumps(out, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- check


def run_checks(spec: ExperimentSpec, *, inject_corruption: bool = False) -> list[checks.CheckReport]:
    """Deterministic checks on every run and the probabilistic suites over all runs.

    ``inject_corruption`` perturbs the residual norms before the
    decomposition check; it exists so the failure path can be tested.
    """
    cov = spec.design.covariance()
    n, p = spec.design.n, spec.design.p
    sbar = spec.noise.sigma_bar_sq
    lam0 = default_lambda0(n, p)
    decomp, balanced, comparison, diags, pairs = [], [], [], [], []
    for run_index in range(spec.runs):
        ds = make_dataset(spec, run_index, cov)
        path = run_path(ds, spec.m_max)
        diag = diagnostics(path, ds)
        r_sq = path.r_sq.copy()
        if inject_corruption and r_sq.size > 1:
            r_sq[1] += 1e-3 * max(1.0, r_sq[0])
        decomp.append(checks.check_residual_decomposition(r_sq, diag))
        balanced.append(checks.check_balanced_oracle(diag))
        cfg = StoppingConfig(diag.eps_norm_sq, ds.n, ds.n_columns, m_max=path.m)
        comparison.append(checks.check_norm_comparison(path, diag, cfg, range(min(path.m, checks.M_LIMIT) + 1)))
        diags.append(diag)
        pairs.append((scaled_lasso(ds, lam0).sigma_hat_sq, diag.eps_norm_sq))
    return [
        _merge("residual_decomposition", decomp),
        _merge("balanced_oracle", balanced),
        _merge("norm_comparison", comparison),
        checks.check_cross_term_bound(diags, sbar, n, p),
        checks.check_stochastic_error_bound(diags, sbar, n, p),
        checks.check_noise_estimation(pairs, declared_sparsity(spec.signal.kind), n, p, sigma_bar_sq=sbar),
    ]


def _merge(name: str, parts: list[checks.CheckReport]) -> checks.CheckReport:
    total = sum(p.instances for p in parts)
    bad = sum(p.violation_fraction * p.instances for p in parts)
    return checks.CheckReport(
        name=name,
        instances=total,
        max_abs_violation=max((p.max_abs_violation for p in parts), default=0.0),
        max_rel_violation=max((p.max_rel_violation for p in parts), default=0.0),
        violation_fraction=bad / total if total else 0.0,
        tolerance=parts[0].tolerance if parts else 0.0,
        passed=all(p.passed for p in parts),
        deterministic=True,
        note=f"{len(parts)} runs",
    )


def cmd_check(args) -> int:
    try:
        spec = load_experiment(args.config)
    except ConfigError as exc:
        return _config_error(args.config, exc)
    reports = run_checks(spec, inject_corruption=args.inject_corruption)
    print(json.dumps([r.to_dict() for r in reports], indent=2, default=_json_default))
    for r in reports:
        if not r.passed and not r.deterministic:
            print(f"warning: {r.line()}", file=sys.stderr)
        elif not r.passed:
            print(f"error: {r.line()}", file=sys.stderr)
    return EXIT_FAIL if any(r.deterministic and not r.passed for r in reports) else EXIT_OK


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o))


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ompstop", description="Early stopping for orthogonal matching pursuit.")
    sub = parser.add_subparsers(dest="command", required=True)
    default_workers = os.cpu_count() or 1

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=default_workers)
    s.add_argument("--debug-asserts", action="store_true")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="select an iteration on a CSV dataset")
    f.add_argument("--data", required=True)
    f.add_argument("--rule", required=True)
    f.add_argument("--param", action="append", default=[], metavar="K=V")
    f.add_argument("--intercept", action="store_true", help="add an unpenalized constant column")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("noise-estimate", help="Scaled Lasso noise level of a CSV dataset")
    e.add_argument("--data", required=True)
    e.add_argument("--lambda0-factor", type=float, default=1.0)
    e.add_argument("--intercept", action="store_true")
    e.set_defaults(func=cmd_noise_estimate)

    c = sub.add_parser("check", help="run the identity and bound checks")
    c.add_argument("--config", required=True)
    c.add_argument("--inject-corruption", action="store_true", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
