import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cubethin import control_variates as cvm
from cubethin import samplers
from cubethin.control_variates import Chain, ControlVariateMatrix
from cubethin.errors import DimensionMismatch, MissingScores, RankDeficient


def gaussian_chain(d=3, N=2000, seed=0, rho=0.3):
    rng = np.random.default_rng(seed)
    mu = rng.normal(size=d)
    Sigma = samplers.random_spd(d, rng) + np.eye(d)
    return mu, Sigma, samplers.gaussian_ar_chain(mu, Sigma, N, rng, rho=rho)


# ---- Chain --------------------------------------------------------------------


def test_chain_validates_shapes():
    with pytest.raises(DimensionMismatch):
        Chain(np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        Chain(np.array([[np.nan, 0.0]]))
    c = Chain(np.arange(4.0))
    assert (c.N, c.d, c.has_scores) == (4, 1, False)


def test_chain_after_burnin():
    c = Chain(np.arange(10.0).reshape(5, 2), np.ones((5, 2)))
    post = c.after_burnin(2)
    assert post.N == 3 and np.array_equal(post.states[0], [4.0, 5.0])
    with pytest.raises(ValueError):
        c.after_burnin(5)


# ---- score control variates ---------------------------------------------------------


def test_score_cv_full_single_state():
    cv = cvm.score_cv_full(Chain([[0.0]], [[0.0]]))
    assert cv.values.tolist() == [[0.0, 1.0]]


def test_score_cv_full_standard_normal_value():
    cv = cvm.score_cv_full(Chain([[2.0]], [[-2.0]]))
    assert cv.values.tolist() == [[-2.0, -3.0]]


def test_score_cv_full_column_count_and_order():
    x = np.array([[1.0, 2.0]])
    s = np.array([[3.0, 5.0]])
    cv = cvm.score_cv_full(Chain(x, s))
    assert cv.J == 6
    # s0, s1, 1 + x0 s0, x0 s1, x1 s0, 1 + x1 s1
    assert cv.values[0].tolist() == [3.0, 5.0, 4.0, 5.0, 6.0, 11.0]


def test_score_cv_diagonal_counts():
    for d, J in [(1, 2), (4, 8), (10, 20)]:
        ch = Chain(np.ones((3, d)), np.ones((3, d)))
        assert cvm.score_cv_diagonal(ch).J == J


def test_score_cv_diagonal_equals_full_in_one_dimension():
    _, _, ch = gaussian_chain(d=1, N=50)
    assert np.array_equal(cvm.score_cv_diagonal(ch).values, cvm.score_cv_full(ch).values)


def test_score_cv_needs_scores():
    with pytest.raises(MissingScores):
        cvm.score_cv_full(Chain(np.ones((3, 2))))
    with pytest.raises(MissingScores):
        cvm.score_cv_diagonal(Chain(np.ones((3, 2))))


def test_redundant_columns_detected():
    _, _, ch = gaussian_chain(d=4, N=500)
    cv = cvm.score_cv_full(ch)
    # for a Gaussian the antisymmetric parts x_i s_j - x_j s_i are linear in the rest
    assert cv.rank == 4 + 4 * 4 - 4 * 3 // 2
    assert not cv.is_full_rank
    assert cv.reduced().is_full_rank


# ---- weights -------------------------------------------------------------------------


def test_weights_two_points():
    ws = cvm.cv_weights(ControlVariateMatrix([[1.0], [0.0], [0.5]]))
    h = np.array([1.0, 0.0, 0.5])
    assert ws.weights.sum() == pytest.approx(1.0)
    assert ws.weights @ h == pytest.approx(0.0, abs=1e-14)


def test_weights_match_closed_form():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(40, 3))
    H = np.column_stack([np.ones(40), h])
    e1 = np.zeros(4)
    e1[0] = 1.0
    ref = H @ np.linalg.solve(H.T @ H, e1)
    assert np.allclose(cvm.cv_weights(ControlVariateMatrix(h)).weights, ref, atol=1e-12)


def test_weights_reject_zero_column_via_consistency():
    h = np.column_stack([np.random.default_rng(0).normal(size=20), np.zeros(20)])
    # a zero column is trivially satisfied; a constant nonzero column is not
    cvm.cv_weights(ControlVariateMatrix(h))
    h[:, 1] = 1.0
    with pytest.raises(RankDeficient):
        cvm.cv_weights(ControlVariateMatrix(h))


def test_weights_raise_mode_on_redundant():
    x = np.random.default_rng(0).normal(size=30)
    cv = ControlVariateMatrix(np.column_stack([x, 2 * x]))
    with pytest.raises(RankDeficient):
        cvm.cv_weights(cv, on_redundant="raise")
    ws = cvm.cv_weights(cv)
    assert np.abs(ws.constraint_residuals()).max() < 1e-12


def test_weights_too_few_states():
    with pytest.raises(RankDeficient):
        cvm.cv_weights(ControlVariateMatrix([[1.0, 2.0], [0.0, 1.0]]))


def test_gaussian_weights_reproduce_moments():
    mu, Sigma, ch = gaussian_chain(d=3, N=3000, seed=5)
    ws = cvm.cv_weights(cvm.score_cv_full(ch))
    X = ch.states
    assert np.allclose(ws.weights @ X, mu, atol=1e-6)
    second = (X * ws.weights[:, None]).T @ X
    assert np.allclose(second, Sigma + np.outer(mu, mu), atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_weights_invariants(J, seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(J + 3, 60))
    h = rng.normal(size=(N, J)) * rng.choice([1e-3, 1.0, 1e4], size=J)
    ws = cvm.cv_weights(ControlVariateMatrix(h))
    assert abs(ws.weights.sum() - 1.0) <= 1e-10
    assert np.abs(ws.constraint_residuals()).max() <= 1e-8
    # adding CV columns to f leaves the estimate unchanged
    f = rng.normal(size=N)
    beta = rng.normal(size=J)
    a = cvm.weighted_estimate(ws, f)
    b = cvm.weighted_estimate(ws, f + h @ beta)
    assert b == pytest.approx(a, abs=1e-8 * (1 + np.abs(h @ beta).max()))


def test_weighted_estimate_examples():
    _, _, ch = gaussian_chain(N=400)
    cv = cvm.score_cv_full(ch)
    ws = cvm.cv_weights(cv)
    assert cvm.weighted_estimate(ws, np.full(ch.N, 3.5)) == pytest.approx(3.5)
    assert cvm.weighted_estimate(ws, cv.values[:, 0]) == pytest.approx(0.0, abs=1e-9)
    with pytest.raises(DimensionMismatch):
        cvm.weighted_estimate(ws, np.ones(3))


def test_weighted_estimate_equals_ols_intercept():
    rng = np.random.default_rng(8)
    h = rng.normal(size=(80, 2))
    f = rng.normal(size=80) + h @ [0.5, -1.0]
    ws = cvm.cv_weights(ControlVariateMatrix(h))
    H = np.column_stack([np.ones(80), h])
    gamma = np.linalg.solve(H.T @ H, H.T @ f)
    assert cvm.weighted_estimate(ws, f) == pytest.approx(gamma[0], abs=1e-12)


def test_iid_weights_remove_variance_in_span():
    rng = np.random.default_rng(9)
    ests = []
    for _ in range(20):
        x = rng.normal(size=200)
        s = -x
        ch = Chain(x[:, None], s[:, None])
        ws = cvm.cv_weights(cvm.score_cv_full(ch))
        ests.append(cvm.weighted_estimate(ws, 2.0 + 3.0 * s))
    assert np.std(ests) < 1e-10


# ---- beta -----------------------------------------------------------------------------


def test_beta_exact_fit():
    rng = np.random.default_rng(10)
    h = rng.normal(size=(50, 3))
    assert np.allclose(cvm.beta_ols(ControlVariateMatrix(h), 3.0 * h[:, 0]), [3.0, 0.0, 0.0])


def test_beta_orthogonal_is_zero():
    h = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    f = np.array([1.0, 1.0, -1.0, -1.0])
    assert np.allclose(cvm.beta_ols(ControlVariateMatrix(h), f), [0.0], atol=1e-14)


def test_beta_matches_normal_equations():
    rng = np.random.default_rng(11)
    h = rng.normal(size=(100, 2))
    f = rng.normal(size=100)
    H = np.column_stack([np.ones(100), h])
    ref = np.linalg.solve(H.T @ H, H.T @ f)[1:]
    assert np.allclose(cvm.beta_ols(ControlVariateMatrix(h), f), ref, atol=1e-10)


# ---- Gibbs control variates ------------------------------------------------------------


def test_gibbs_cv_fixed_point_is_zero():
    target = samplers.TruncatedNormalTarget([0.5, 1.0], [[1.0, 0.3], [0.3, 2.0]])
    # find x* with truncated conditional means equal to x*, by iteration
    x = np.array([1.0, 1.0])
    for _ in range(500):
        x = samplers.truncnorm_mean(target.cond_means(x[None])[0], target.cond_sd)
    ch = Chain(np.tile(x, (5, 1)))
    for form in ("increment", "state"):
        assert np.abs(cvm.gibbs_cv_truncnorm(ch, target.mu, target.Sigma, form=form).values).max() < 1e-10


def test_gibbs_cv_shape_and_first_row():
    target = samplers.random_truncnorm_target(10, 1)
    ch = samplers.truncnorm_gibbs(target, 100, 2).to_chain()
    cv = cvm.gibbs_cv_truncnorm(ch, target.mu, target.Sigma)
    assert cv.J == 10 and not cv.values[0].any()
    with pytest.raises(DimensionMismatch):
        cvm.gibbs_cv_truncnorm(ch, target.mu[:3], target.Sigma[:3, :3])


@pytest.mark.parametrize("form", ["increment", "state"])
def test_gibbs_cv_mean_zero(form):
    target = samplers.random_truncnorm_target(3, 4)
    ch = samplers.truncnorm_gibbs(target, 100_000, 5).to_chain()
    v = cvm.gibbs_cv_truncnorm(ch, target.mu, target.Sigma, form=form).values[1000:]
    # batch means handle the autocorrelation of the state form
    batches = v[: len(v) // 50 * 50].reshape(50, -1, v.shape[1]).mean(axis=1)
    se = batches.std(axis=0, ddof=1) / np.sqrt(50)
    assert np.all(np.abs(v.mean(axis=0)) <= 4 * se)
