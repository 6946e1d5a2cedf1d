import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ceib.baselines import BaselineEstimate, knn_ace, logistic_ace, ols1, ols2
from ceib.data import make_dataset


def _linear(n=400, seed=0, effect=3.0, noise=0.0, hetero=0.0):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(n, 2)), rng.normal(size=(n, 1))
    t = rng.integers(0, 2, n)
    y = 1.0 + x1 @ [0.5, -1.0] + 2.0 * x2[:, 0] + t * (effect + hetero * x1[:, 0]) + noise * rng.normal(size=n)
    return make_dataset(x1, x2, t, y)


def test_ols1_exact_recovery():
    ds = _linear()
    assert ols1(ds).ace == pytest.approx(3.0, abs=1e-8)


def test_ols2_exact_recovery_with_heterogeneity():
    ds = _linear(hetero=1.5)
    est = ols2(ds, ds)
    assert est.ace == pytest.approx(3.0 + 1.5 * ds.x1[:, 0].mean(), abs=1e-8)
    assert not est.diagnostics["arm0_rank_deficient"]


def test_ols2_needs_both_arms():
    ds = make_dataset(np.zeros((4, 1)), np.zeros((4, 0)), [0, 0, 0, 0], [1.0, 2, 3, 4])
    with pytest.raises(ValueError, match="arm 1"):
        ols2(ds, ds)


def test_rank_deficiency_flagged():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 1))
    ds = make_dataset(np.hstack([x, x]), np.zeros((50, 0)), rng.integers(0, 2, 50), rng.normal(size=50))
    assert ols1(ds).diagnostics["rank_deficient"]


def test_null_effect_monte_carlo():
    ests = [ols1(_linear(n=200, seed=s, effect=0.0, noise=1.0)).ace for s in range(200)]
    assert abs(np.mean(ests)) < 3 * np.std(ests, ddof=1) / np.sqrt(len(ests))


def test_knn_duplicated_rows():
    # each unit appears once per arm with outcome t
    x = np.repeat(np.arange(10.0)[:, None], 2, axis=0)
    t = np.tile([0, 1], 10)
    ds = make_dataset(x, np.zeros((20, 0)), t, t.astype(float))
    assert knn_ace(ds, ds, k_neighbors=1).ace == 1.0


def test_knn_k_equals_arm_size_is_difference_in_means():
    rng = np.random.default_rng(2)
    n = 60
    t = np.r_[np.zeros(30), np.ones(30)].astype(int)
    ds = make_dataset(rng.normal(size=(n, 2)), np.zeros((n, 0)), t, rng.normal(size=n))
    other = make_dataset(rng.normal(size=(10, 2)), np.zeros((10, 0)), rng.integers(0, 2, 10), np.zeros(10))
    est = knn_ace(ds, other, k_neighbors=30)
    assert est.ace == pytest.approx(ds.y[t == 1].mean() - ds.y[t == 0].mean(), abs=1e-12)


def test_knn_too_few_neighbours():
    ds = _linear(n=8)
    with pytest.raises(ValueError, match="fewer than"):
        knn_ace(ds, ds, k_neighbors=50)


def test_logistic_saturated_separable_effect():
    rng = np.random.default_rng(3)
    n = 400
    t = rng.integers(0, 2, n)
    ds = make_dataset(rng.normal(size=(n, 2)), np.zeros((n, 0)), t, t.astype(float))
    est = logistic_ace(ds, ds)
    assert est.ace >= 0.95
    assert est.diagnostics["train_accuracy"] == 1.0


def test_logistic_requires_binary_outcome():
    with pytest.raises(ValueError, match="binary"):
        logistic_ace(_linear(), _linear())


def test_non_finite_estimate_rejected():
    with pytest.raises(ValueError, match="non-finite"):
        BaselineEstimate("x", float("nan"))


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 10), b=st.floats(-10, 10), seed=st.integers(0, 1000))
def test_affine_equivariance(a, b, seed):
    ds = _linear(n=120, seed=seed, noise=1.0, hetero=0.7)
    scaled = make_dataset(ds.x1, ds.x2, ds.t, a * ds.y + b)
    for fn in (lambda d: ols1(d), lambda d: ols2(d, d), lambda d: knn_ace(d, d)):
        assert fn(scaled).ace == pytest.approx(a * fn(ds).ace, rel=1e-8, abs=1e-8)


def test_permutation_invariance():
    ds = _linear(n=150, noise=1.0, hetero=0.5)
    perm = np.random.default_rng(9).permutation(ds.n)
    p = ds.subset(perm)
    assert ols1(p).ace == pytest.approx(ols1(ds).ace, rel=1e-10)
    assert ols2(p, p).ace == pytest.approx(ols2(ds, ds).ace, rel=1e-10)
    # distinct continuous covariates, so no neighbour ties
    assert knn_ace(p, p).ace == pytest.approx(knn_ace(ds, ds).ace, rel=1e-12)
