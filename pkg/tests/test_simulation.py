import math

import numpy as np
import pytest

from ompstop.omp import ContractError, PathDiagnostics
from ompstop.simulation import (
    SIGNAL_KINDS,
    BandedCovariance,
    DesignSpec,
    ExperimentSpec,
    InvalidDesignError,
    NoiseSpec,
    RuleSpec,
    SignalSpec,
    build_signal,
    classification_spec,
    csv_rows,
    fmt,
    make_dataset,
    monte_carlo,
    relative_efficiency,
    run_once,
    sample_design,
    sample_response,
)
from ompstop.stopping import StoppingConfig, tau

SMALL = dict(signal=SignalSpec("g2"), design=DesignSpec(50, 100), runs=3, seed=5, m_max=25, timing=False)


# ---------------------------------------------------------------- signals


@pytest.mark.parametrize("kind", SIGNAL_KINDS)
def test_signal_l1_norm(kind):
    beta = build_signal(SignalSpec(kind), 1000)
    assert abs(np.abs(beta).sum() - 10.0) < 1e-10
    assert np.all(np.diff(beta) <= 0)


def test_s15_blocks():
    beta = build_signal(SignalSpec("s15"), 100)
    assert beta[0] == pytest.approx(10 / 8.75)
    assert beta[5] == pytest.approx(0.5 * 10 / 8.75)
    assert beta[14] == pytest.approx(0.25 * 10 / 8.75)
    assert np.all(beta[15:] == 0)
    assert np.count_nonzero(build_signal(SignalSpec("s90"), 100)) == 90


def test_g1_decreasing():
    beta = build_signal(SignalSpec("g1"), 50)
    np.testing.assert_allclose(beta[0] / beta[1:], np.arange(2, 51))


def test_classification_rescale():
    beta = build_signal(SignalSpec.classification("g2"), 1000)
    assert np.abs(beta).sum() == pytest.approx(0.3)
    with pytest.raises(ContractError):
        build_signal(SignalSpec("s90"), 60)
    with pytest.raises(ContractError):
        SignalSpec("g4")


# ---------------------------------------------------------------- designs


def test_uncorrelated_design(rng):
    X = sample_design(DesignSpec(10_000, 2), rng)
    assert abs(np.mean(X[:, 0] * X[:, 1])) < 0.05


def test_banded_design_lags(rng):
    cov = BandedCovariance(6, 0.4, 0.1)
    X = cov.sample(10_000, rng)
    G = cov.dense()
    for lag, target in ((0, 1.0), (1, 0.4), (2, 0.1)):
        prods = X[:, : 6 - lag] * X[:, lag:]
        est = prods.mean()
        se = prods.std() / math.sqrt(prods.size)
        assert abs(est - target) < max(3 * se * math.sqrt(6), 0.05)
        assert G[0, lag] == target
    assert G[0, 3] == 0


def test_banded_validity():
    BandedCovariance(50, 0.3, 0.3)
    with pytest.raises(InvalidDesignError):
        BandedCovariance(50, 0.7, 0.4)
    with pytest.raises(ContractError):
        DesignSpec(10, 10, "toeplitz")


# ---------------------------------------------------------------- responses


def test_noiseless_gaussian(rng):
    X = rng.standard_normal((20, 5))
    beta = np.ones(5)
    Y, eps, f = sample_response(X, beta, NoiseSpec("gaussian", 0.0), rng)
    np.testing.assert_array_equal(Y, f)
    assert np.all(eps == 0)


def test_classification_zero_signal(rng):
    X = rng.standard_normal((2000, 5))
    Y, eps, f = sample_response(X, np.zeros(5), NoiseSpec("classification"), rng)
    assert np.all(f == 0.5)
    assert set(np.unique(eps)) <= {-0.5, 0.5}
    assert set(np.unique(Y)) <= {0.0, 1.0}


def test_classification_noise_centered_and_bounded(rng):
    n = 100_000
    X = rng.standard_normal((n, 3))
    Y, eps, f = sample_response(X, np.array([0.3, -0.2, 0.1]), NoiseSpec("classification"), rng)
    assert np.all(np.abs(eps) <= 1)
    assert np.all((f >= 0) & (f <= 1))
    assert abs(eps.mean()) <= 3 * eps.std() / math.sqrt(n)


def test_noise_spec_contracts():
    with pytest.raises(ContractError):
        NoiseSpec("gaussian", -1.0)
    with pytest.raises(ContractError):
        NoiseSpec("poisson")
    assert NoiseSpec("classification").sigma_bar_sq == 0.25


# ---------------------------------------------------------------- metrics


def _diag(emp):
    z = np.zeros(len(emp))
    return PathDiagnostics(b_sq=z, s=z, c=z, emp_risk=np.asarray(emp, float), eps_norm_sq=0.0, delta_r_sq=z)


def test_relative_efficiency():
    d = _diag([4.0, 1.0, 4.0])
    assert relative_efficiency(d, 1) == 1.0
    assert relative_efficiency(d, 0) == pytest.approx(0.5)
    assert relative_efficiency(_diag([0.0, 0.0]), 1) == 1.0
    assert relative_efficiency(d, risk=16.0) == pytest.approx(0.25)


# ---------------------------------------------------------------- experiments


def test_rule_spec():
    assert RuleSpec("two-step").label == "two-step"
    assert RuleSpec("two-step", {"c_aic": 0.5}).label == "two-step[c_aic=0.5]"
    with pytest.raises(ContractError):
        RuleSpec("nope")
    with pytest.raises(ContractError):
        RuleSpec("hdaic", {"c_tau": 1})
    with pytest.raises(ContractError):
        ExperimentSpec(**{**SMALL, "rules": (RuleSpec("hdaic"), RuleSpec("hdaic"))})


def test_run_once_deterministic():
    spec = ExperimentSpec(**SMALL)
    a, b = run_once(spec, 2), run_once(spec, 2)
    # repr is round-trip exact for floats and treats nan as equal to itself
    assert repr(a.methods) == repr(b.methods)
    assert a.m_classical == b.m_classical


def test_run_once_tau_matches_rederivation():
    spec = ExperimentSpec(**SMALL, keep_traces=True)
    run = run_once(spec, 0)
    ds = make_dataset(spec, 0)
    kappa = ds.eps_norm_sq
    r_sq = run.r_sq_trace
    expected = next(m for m, r in enumerate(r_sq) if r <= kappa)
    assert run.method("tau-true-noise").selected_m == expected
    cfg = StoppingConfig(kappa, 50, 100, m_max=25)
    assert tau(r_sq, cfg).m == expected


def test_run_once_metrics_consistent():
    run = run_once(ExperimentSpec(**SMALL), 1)
    oracle = run.method("oracle-classical")
    assert oracle.rel_efficiency == 1.0
    assert oracle.dev_from_oracle == 0
    for m in run.methods:
        assert 0 < m.rel_efficiency <= 1.0
        assert m.dev_from_oracle == m.selected_m - run.m_classical
    est = run.method("tau-estimated-noise")
    assert est.noise_abs_err == pytest.approx(abs(est.sigma_hat_sq - run.eps_norm_sq))


def test_monte_carlo_workers_identical():
    spec = ExperimentSpec(**{**SMALL, "runs": 4})
    one = monte_carlo(spec, workers=1)
    two = monte_carlo(spec, workers=2)
    assert csv_rows(one) == csv_rows(two)
    assert one.to_dict() == two.to_dict()


def test_monte_carlo_single_run_summary():
    spec = ExperimentSpec(**{**SMALL, "runs": 1})
    summary = monte_carlo(spec)
    run = run_once(spec, 0)
    assert repr(summary.runs[0].methods) == repr(run.methods)
    assert summary.median("tau-true-noise") == run.method("tau-true-noise").selected_m
    assert len(summary.deviations("two-step")) == 1


def test_monte_carlo_all_fail(monkeypatch):
    import ompstop.simulation as sim

    def boom(*a, **k):
        raise ContractError("broken")

    monkeypatch.setattr(sim, "run_once", boom)
    with pytest.raises(RuntimeError, match="all 2 runs failed"):
        sim.monte_carlo(ExperimentSpec(**{**SMALL, "runs": 2}))


def test_failed_run_is_recorded(monkeypatch):
    import ompstop.simulation as sim

    real = sim.run_once

    def flaky(spec, i, cov=None):
        if i == 1:
            raise ArithmeticError("bad luck")
        return real(spec, i, cov)

    monkeypatch.setattr(sim, "run_once", flaky)
    summary = sim.monte_carlo(ExperimentSpec(**SMALL))
    assert [f.run_id for f in summary.failures] == [1]
    assert len(summary.runs) == 2
    assert summary.to_dict()["failed"][0]["error"].startswith("ArithmeticError")


def test_debug_asserts_and_lasso_cv():
    rules = (RuleSpec("tau-true-noise"), RuleSpec("two-step"), RuleSpec("lasso-cv", {"grid_size": 20}))
    spec = ExperimentSpec(**{**SMALL, "runs": 2, "rules": rules, "debug_asserts": True})
    summary = monte_carlo(spec)
    assert not summary.failures
    assert all(c.passed for r in summary.runs for c in r.checks)
    assert np.all(summary.values("lasso-cv[grid_size=20]", "selected_m") >= 0)


def test_classification_run_with_intercept():
    spec = classification_spec("s15", runs=1, n=120, p=150, m_max=30, debug_asserts=True)
    assert spec.intercept
    run = run_once(spec, 0)
    assert math.isnan(run.method("oracle-classical").pop_risk)


def test_fmt_round_trip():
    x = 0.1 + 0.2
    assert float(fmt(x)) == x
    assert fmt(3) == "3"
    assert fmt(float("nan")) == "nan"
    assert fmt(True) == "1"
