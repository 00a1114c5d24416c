import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_dataset
from oracles import naive_omp, projection_terms
from ompstop.omp import (
    ContractError,
    Dataset,
    DegenerateColumnError,
    MissingTruthError,
    NoCandidateError,
    advance,
    coefficients_at,
    diagnostics,
    empirical_inner,
    empirical_norm,
    fitted_values,
    load_csv,
    population_risk,
    run_path,
    select_next,
    start_path,
)
from ompstop.simulation import BandedCovariance


def orthonormal_design(rng, n, p):
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return q * np.sqrt(n)  # empirical norm 1


# ---------------------------------------------------------------- inner product


def test_empirical_inner_zero_and_ones():
    b = np.arange(5.0)
    assert empirical_inner(np.zeros(5), b) == 0.0
    for n in (1, 3, 17):
        assert empirical_inner(np.ones(n), np.ones(n)) == pytest.approx(1.0)


def test_empirical_inner_matches_loop(rng):
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    total = 0.0
    for x, y in zip(a, b):
        total += x * y
    assert abs(empirical_inner(a, b) - total / 7) < 1e-14
    assert empirical_norm(a) == pytest.approx(np.sqrt(total_sq(a) / 7))


def total_sq(a):
    return sum(x * x for x in a)


def test_empirical_inner_length_mismatch():
    with pytest.raises(ContractError):
        empirical_inner(np.ones(3), np.ones(4))


# ---------------------------------------------------------------- dataset


def test_dataset_truth_consistency():
    X = np.eye(3)
    with pytest.raises(ContractError):
        Dataset(X, np.ones(3), f_star_values=np.zeros(3), epsilon=np.zeros(3))
    ds = Dataset(X, np.array([1.0, 2.0, 3.0]), beta_star=np.array([1.0, 2.0, 2.0]))
    np.testing.assert_allclose(ds.epsilon, [0, 0, 1])


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(X=np.ones((3, 2)), Y=np.ones(4)),
        dict(X=np.array([[np.nan, 1.0]]), Y=np.ones(1)),
        dict(X=np.ones((2, 2)), Y=np.ones(2), gamma=np.array([[1.0, 0.5], [0.4, 1.0]])),
        dict(X=np.ones((2, 2)), Y=np.ones(2), beta_star=np.ones(3)),
    ],
)
def test_dataset_rejects_bad_input(kwargs):
    with pytest.raises(ContractError):
        Dataset(**kwargs)


def test_diagnostics_need_truth(rng):
    ds = Dataset(rng.standard_normal((10, 4)), rng.standard_normal(10))
    with pytest.raises(MissingTruthError):
        diagnostics(run_path(ds, 2), ds)


# ---------------------------------------------------------------- selection


def test_select_perfect_correlation(rng):
    X = orthonormal_design(rng, 20, 6)
    assert select_next(X[:, 3].copy(), X) == 3


def test_select_only_correlated_column(rng):
    X = orthonormal_design(rng, 20, 6)
    assert select_next(0.3 * X[:, 1], X) == 1


def test_select_matches_brute_force(rng):
    for _ in range(20):
        X, r = rng.standard_normal((10, 6)), rng.standard_normal(10)
        scores = [abs(np.mean(r * X[:, j])) / np.sqrt(np.mean(X[:, j] ** 2)) for j in range(6)]
        assert select_next(r, X) == int(np.argmax(scores))


def test_select_tie_break_and_exclusion():
    X = np.ones((4, 3))
    assert select_next(np.ones(4), X) == 0
    assert select_next(np.ones(4), X, excluded=[0]) == 1
    with pytest.raises(NoCandidateError):
        select_next(np.ones(4), X, excluded=[0, 1, 2])
    with pytest.raises(NoCandidateError):
        select_next(np.ones(4), np.zeros((4, 2)))


# ---------------------------------------------------------------- path


def test_single_step_projection(rng):
    X = orthonormal_design(rng, 16, 4)
    Y = 2.0 * X[:, 0]
    ds = Dataset(X, Y)
    path = advance(start_path(ds), ds)
    assert path.selected == (0,)
    expected = np.mean(Y**2) - np.mean(Y * X[:, 0]) ** 2
    assert path.r_sq[1] == pytest.approx(expected, abs=1e-12)
    assert abs(np.mean(path.residual * X[:, 0])) < 1e-12


def test_advance_is_functional(rng):
    ds = random_dataset(rng, 12, 5)
    p0 = start_path(ds)
    p1 = advance(p0, ds)
    p2a = advance(p1, ds)
    p2b = advance(p1, ds)
    assert p0.m == 0 and p1.m == 1
    assert p2a.selected == p2b.selected
    np.testing.assert_array_equal(p2a.q_basis, p2b.q_basis)
    np.testing.assert_array_equal(p1.q_basis, p2a.q_basis[:1])


def test_advance_matches_run_path(rng):
    ds = random_dataset(rng, 12, 5)
    path = start_path(ds)
    for _ in range(5):
        path = advance(path, ds)
    fast = run_path(ds, 5)
    assert path.selected == fast.selected
    np.testing.assert_allclose(path.r_sq, fast.r_sq, atol=1e-14)
    with pytest.raises(ContractError):
        advance(path, ds)


def test_advance_normal_equations_oracle(rng):
    ds = random_dataset(rng, 12, 5)
    sel, r_sq = naive_omp(ds.X, ds.Y, 5)
    path = run_path(ds, 5)
    assert list(path.selected) == sel
    np.testing.assert_allclose(path.r_sq, r_sq, atol=1e-8)


def test_full_rank_drives_residual_to_zero(rng):
    ds = random_dataset(rng, 10, 14)
    path = run_path(ds, 10)
    assert path.r_sq[-1] <= 1e-10 * path.r_sq[0]


def test_zero_response():
    X = np.random.default_rng(0).standard_normal((8, 5))
    path = run_path(Dataset(X, np.zeros(8)), 4)
    assert path.selected == (0, 1, 2, 3)
    assert np.all(path.r_sq == 0)


def test_exact_recovery_orthogonal_design(rng):
    X = orthonormal_design(rng, 30, 10)
    beta = np.zeros(10)
    beta[[2, 5, 7]] = [3.0, -2.0, 1.0]
    path = run_path(Dataset(X, X @ beta), 3)
    assert set(path.selected) == {2, 5, 7}
    assert path.r_sq[3] <= 1e-10


def test_degenerate_column_ends_path(rng):
    X = rng.standard_normal((10, 3))
    X = np.column_stack([X, X[:, 0] + X[:, 1]])
    Y = X[:, 3] + 0.01 * rng.standard_normal(10)
    path = run_path(Dataset(X, Y), 4)
    assert path.m < 4
    assert path.stop_reason.startswith("degenerate")
    ds = Dataset(X, Y)
    p = start_path(ds)
    with pytest.raises(DegenerateColumnError):
        for _ in range(4):
            p = advance(p, ds)


def test_zero_correlation_flagged():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])
    path = run_path(Dataset(X, np.array([0.0, 0.0, 1.0])), 2)
    assert path.zero_correlation_steps == (0, 1)


def test_recompute_mode_agrees(rng):
    ds = random_dataset(rng, 40, 60)
    a = run_path(ds, 30)
    b = run_path(ds, 30, recompute=True)
    np.testing.assert_allclose(a.r_sq, b.r_sq, atol=1e-10)


def test_m_max_contract(rng):
    ds = random_dataset(rng, 5, 8)
    with pytest.raises(ContractError):
        run_path(ds, 6)


@settings(max_examples=40, deadline=None)
@given(
    n=st.integers(5, 30),
    p=st.integers(2, 20),
    seed=st.integers(0, 2**31),
    scale=st.floats(0.1, 100),
)
def test_path_invariants(n, p, seed, scale):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n, p)
    m_max = min(n - 1, p)
    path = run_path(ds, m_max)
    assert len(set(path.selected)) == path.m
    assert np.all(np.diff(path.r_sq) <= 1e-12 * path.r_sq[0])
    Q = path.q_basis
    np.testing.assert_allclose(Q @ Q.T / n, np.eye(path.m), atol=1e-8)
    # sequence of drops equals the squared projections
    np.testing.assert_allclose(path.r_sq[0] - path.r_sq[1:], np.cumsum(path.proj**2), atol=1e-10 * path.r_sq[0])
    # scaling the response does not change the selection
    scaled = run_path(Dataset(ds.X, scale * ds.Y), m_max)
    if not path.zero_correlation_steps:
        assert scaled.selected == path.selected
        np.testing.assert_allclose(scaled.r_sq, scale**2 * path.r_sq, rtol=1e-8, atol=1e-12 * scale**2)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_column_rescaling_invariance(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, 20, 10)
    weights = rng.uniform(0.2, 5.0, 10)
    a = run_path(ds, 8)
    b = run_path(Dataset(ds.X * weights, ds.Y), 8)
    assert a.selected == b.selected


# ---------------------------------------------------------------- coefficients


def test_coefficients_zero_and_orthonormal(rng):
    X = orthonormal_design(rng, 20, 5)
    Y = rng.standard_normal(20)
    ds = Dataset(X, Y)
    path = run_path(ds, 3)
    assert np.all(coefficients_at(path, 0, ds).beta == 0)
    beta = coefficients_at(path, 1, ds).beta
    j = path.selected[0]
    assert beta[j] == pytest.approx(np.mean(Y * X[:, j]))
    assert np.count_nonzero(beta) == 1


def test_coefficients_pseudo_inverse(rng):
    ds = random_dataset(rng, 15, 8)
    path = run_path(ds, 6)
    fit = coefficients_at(path, 4, ds)
    sel = list(path.selected[:4])
    ref = np.linalg.pinv(ds.X[:, sel]) @ ds.Y
    np.testing.assert_allclose(fit.beta[sel], ref, atol=1e-8)
    np.testing.assert_allclose(ds.X @ fit.beta, fitted_values(path, 4), atol=1e-8 * np.sqrt(path.r_sq[0]))
    with pytest.raises(ContractError):
        coefficients_at(path, 7, ds)


def test_intercept_column(rng):
    X = rng.standard_normal((30, 4))
    Y = 5.0 + X[:, 1] + 0.1 * rng.standard_normal(30)
    ds = Dataset(X, Y, intercept=True)
    path = run_path(ds, 3)
    assert path.selected[0] == 0
    assert ds.column_names[0] == "(intercept)"
    fit = coefficients_at(path, 2, ds)
    assert fit.intercept == pytest.approx(5.0, abs=0.2)
    assert fit.beta.shape == (4,)


# ---------------------------------------------------------------- diagnostics


def test_diagnostics_against_projection_oracle(rng):
    ds = random_dataset(rng, 40, 25, k=5)
    path = run_path(ds, 15)
    d = diagnostics(path, ds)
    b_sq, s, c = projection_terms(ds.X, list(path.selected), ds.f_star_values, ds.epsilon)
    np.testing.assert_allclose(d.b_sq, b_sq, atol=1e-8)
    np.testing.assert_allclose(d.s, s, atol=1e-8)
    np.testing.assert_allclose(d.c, c, atol=1e-8)
    fits = [fitted_values(path, m) for m in range(16)]
    risk = [np.mean((F - ds.f_star_values) ** 2) for F in fits]
    np.testing.assert_allclose(d.emp_risk, risk, atol=1e-8)


def test_diagnostics_at_zero(rng):
    ds = random_dataset(rng, 20, 10)
    d = diagnostics(run_path(ds, 4), ds)
    f, e = ds.f_star_values, ds.epsilon
    assert d.b_sq[0] == pytest.approx(np.mean(f * f))
    assert d.s[0] == 0
    assert d.c[0] == pytest.approx(np.mean(f * e))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(6, 40), p=st.integers(2, 30), seed=st.integers(0, 2**31), sigma=st.floats(0.0, 3.0))
def test_decomposition_and_monotonicity(n, p, seed, sigma):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n, p, sigma=sigma)
    path = run_path(ds, min(n - 1, p))
    d = diagnostics(path, ds)
    scale = max(1.0, path.r_sq[0])
    assert np.all(np.diff(d.b_sq) <= 1e-10 * scale)
    assert np.all(np.diff(d.s) >= -1e-10 * scale)
    np.testing.assert_allclose(d.emp_risk, d.b_sq + d.s, atol=1e-8 * scale)
    np.testing.assert_allclose(path.r_sq, d.b_sq + 2 * d.c + d.eps_norm_sq - d.s, atol=1e-8 * scale)


# ---------------------------------------------------------------- population risk


def test_population_risk_basics(rng):
    b = rng.standard_normal(6)
    assert population_risk(b, b, np.eye(6)) == 0
    c = rng.standard_normal(6)
    assert population_risk(b, c, np.eye(6)) == pytest.approx(np.sum((b - c) ** 2))
    with pytest.raises(ContractError):
        population_risk(b, c, np.eye(5))


def test_population_risk_banded_monte_carlo(rng):
    p = 8
    cov = BandedCovariance(p, 0.4, 0.1)
    b_hat, b_star = rng.standard_normal(p), rng.standard_normal(p)
    exact = population_risk(b_hat, b_star, cov.dense())
    assert population_risk(b_hat, b_star, cov) == pytest.approx(exact)
    X = cov.sample(100_000, rng)
    sq = (X @ (b_hat - b_star)) ** 2
    assert abs(sq.mean() - exact) <= 3 * sq.std() / np.sqrt(len(sq))


# ---------------------------------------------------------------- csv


def test_load_csv_truth_columns(tmp_path):
    f = tmp_path / "d.csv"
    f.write_text("y,a,b,epsilon\n1.0,1.0,0.0,0.5\n2.0,0.0,1.0,0.25\n3.0,1.0,1.0,0.0\n")
    ds = load_csv(f)
    assert ds.names == ("a", "b")
    np.testing.assert_allclose(ds.f_star_values, [0.5, 1.75, 3.0])
    bad = tmp_path / "bad.csv"
    bad.write_text("y,a\n1.0,x\n")
    with pytest.raises(ContractError):
        load_csv(bad)
