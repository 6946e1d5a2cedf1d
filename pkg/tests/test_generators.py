import math

import numpy as np
import pytest

from ceib.data import DataError, Regime
from ceib.generators import (LinearGaussianConfig, TwinsSimConfig, gen_linear_gaussian,
                             gen_twins_style, load_ihdp, load_ihdp_replicates, true_ace)


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def test_identical_arms_zero_ace():
    cfg = LinearGaussianConfig(beta0=[1.0, -0.5], beta1=[1.0, -0.5], n=500, seed=1)
    assert true_ace(gen_linear_gaussian(cfg)) == 0.0


def test_randomized_regime_decorrelates_treatment():
    ds = gen_linear_gaussian(LinearGaussianConfig(n=10_000, regime="randomized", seed=3))
    z = ds.meta["confounder"]
    for j in range(z.shape[1]):
        assert abs(np.corrcoef(ds.t, z[:, j])[0, 1]) < 0.05
    assert ds.regime is Regime.RANDOMIZED
    assert abs(ds.t.mean() - 0.5) < 3 / math.sqrt(ds.n)


def test_observational_regime_is_confounded():
    ds = gen_linear_gaussian(LinearGaussianConfig(n=5000, seed=3))
    assert np.corrcoef(ds.t, ds.meta["confounder"][:, 0])[0, 1] > 0.2


def test_closed_form_ace_matches_monte_carlo():
    # independent Monte Carlo of E[(beta1 - beta0).z + intercept gap] with 1e6 draws
    rng = np.random.default_rng(12345)
    z = rng.standard_normal((1_000_000, 2))
    diff = np.array([2.0, 2.0]) - np.array([1.0, 1.0])
    mc_zero = float((z @ diff).mean())
    mc_two = float((z @ diff + 2.0).mean())
    assert abs(mc_zero - LinearGaussianConfig().closed_form_ace()) < 0.01
    assert abs(mc_two - LinearGaussianConfig(intercept1=2.0).closed_form_ace()) < 0.01


def test_true_ace_converges_to_closed_form():
    cfg = LinearGaussianConfig(n=100_000, intercept1=2.0, seed=9)
    assert abs(true_ace(gen_linear_gaussian(cfg)) - 2.0) < 0.02


def test_linear_gaussian_reproducible():
    a = gen_linear_gaussian(LinearGaussianConfig(n=300, seed=4))
    b = gen_linear_gaussian(LinearGaussianConfig(n=300, seed=4))
    for f in ("x1", "x2", "t", "y", "ground_truth"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_linear_gaussian_shapes_and_attribute():
    ds = gen_linear_gaussian(LinearGaussianConfig(n=400, p1=5, p2=3, attribute_bins=3, seed=0))
    assert (ds.p1, ds.p2) == (5, 3)
    sev = ds.attributes["severity"]
    assert set(np.unique(sev)) == {0, 1, 2}
    z0 = ds.meta["confounder"][:, 0]
    # bins are ordered in the first confounder
    assert z0[sev == 0].max() < z0[sev == 2].min()


def test_linear_gaussian_config_validation():
    with pytest.raises(DataError):
        LinearGaussianConfig(A1=[[1.0, 0.0]], p1=2)
    with pytest.raises(DataError):
        LinearGaussianConfig(outcome_sd=-1.0)


def test_twins_noiseless_proxies_decode_z():
    cfg = TwinsSimConfig(n=500, flip_prob=0.0, seed=2)
    ds = gen_twins_style(cfg)
    x = _full_x(ds, cfg)
    z = ds.attributes["gestation"]
    prox = x[:, cfg.p_extra:]
    for r in range(cfg.replications):
        block = prox[:, 10 * r:10 * (r + 1)]
        np.testing.assert_array_equal(block.argmax(1), z)
        np.testing.assert_array_equal(block.sum(1), np.ones(cfg.n))


def _full_x(ds, cfg):
    width = ds.p1 + ds.p2
    x = np.empty((ds.n, width))
    mask = np.zeros(width, dtype=bool)
    mask[list(cfg.x2_columns)] = True
    x[:, mask] = ds.x2
    x[:, ~mask] = ds.x1
    return x


def test_twins_proxies_binary_with_flips():
    cfg = TwinsSimConfig(n=2000, flip_prob=0.15, seed=5)
    ds = gen_twins_style(cfg)
    prox = _full_x(ds, cfg)[:, cfg.p_extra:]
    assert set(np.unique(prox)) == {0.0, 1.0}
    z = ds.attributes["gestation"]
    clean = np.tile(np.eye(10)[z], (1, 3))
    assert abs((prox != clean).mean() - 0.15) < 0.01
    assert ds.p2 == 3 and ds.p1 == cfg.p_extra + 30 - 3


def test_twins_treatment_confounded_by_z():
    cfg = TwinsSimConfig(n=20_000, seed=1)
    ds = gen_twins_style(cfg)
    w_h = ds.meta["w_h"]
    z = ds.attributes["gestation"]
    assert abs(w_h - 5.0) < 1.5
    # x = 0 propensities at the extremes of z, straight from the formula
    p9, p0 = _sig(w_h * (0.9 - 0.1)), _sig(w_h * (0.0 - 0.1))
    assert p9 > 0.95 and p0 < 0.45
    assert ds.t[z == 9].mean() > ds.t[z == 0].mean() + 0.4


def test_twins_exact_ace_enumeration():
    # (a, b, c) = (2, 1, -2): average over the ten gestation buckets
    expected = sum(_sig(2 * z / 10 + 1 - 2) - _sig(2 * z / 10 - 2) for z in range(10)) / 10
    assert TwinsSimConfig().exact_ace() == pytest.approx(expected, abs=1e-14)
    ds = gen_twins_style(TwinsSimConfig(n=50_000, seed=0))
    assert abs(true_ace(ds) - expected) < 0.005


def test_twins_outcome_follows_factual_arm():
    ds = gen_twins_style(TwinsSimConfig(n=20_000, seed=0))
    mu_f = np.where(ds.t == 1, ds.mu1, ds.mu0)
    assert ds.binary_outcome
    assert abs(ds.y.mean() - mu_f.mean()) < 3 * math.sqrt(0.25 / ds.n)


def test_twins_flip_prob_validated():
    with pytest.raises(DataError):
        TwinsSimConfig(flip_prob=0.5)


def test_twins_reproducible():
    a = gen_twins_style(TwinsSimConfig(n=200, seed=8))
    b = gen_twins_style(TwinsSimConfig(n=200, seed=8))
    np.testing.assert_array_equal(a.x1, b.x1)
    np.testing.assert_array_equal(a.y, b.y)


def _write_ihdp(path, n_cov=25, header=False, n=747, treated=139):
    rng = np.random.default_rng(0)
    t = np.r_[np.ones(treated), np.zeros(n - treated)]
    mu0 = rng.normal(size=n)
    mu1 = mu0 + 4.0
    cols = [t, mu0 + rng.normal(size=n), mu1, mu0, mu1] + [rng.normal(size=n) for _ in range(n_cov)]
    arr = np.column_stack(cols)
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(["treatment", "y_factual", "y_cfactual", "mu0", "mu1"]
                              + [f"x{i + 1}" for i in range(n_cov)]) + "\n")
        for row in arr:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return arr


@pytest.mark.parametrize("header", [False, True])
def test_load_ihdp(tmp_path, header):
    arr = _write_ihdp(tmp_path / "ihdp_npci_1.csv", header=header)
    ds = load_ihdp(tmp_path / "ihdp_npci_1.csv")
    assert ds.n == 747 and ds.t.sum() == 139
    assert (ds.p1, ds.p2) == (22, 3)
    np.testing.assert_array_equal(ds.x2, arr[:, 5:][:, [8, 9, 10]])
    assert true_ace(ds) == pytest.approx(np.mean(arr[:, 4] - arr[:, 3]))


def test_load_ihdp_wrong_width(tmp_path):
    _write_ihdp(tmp_path / "bad.csv", n_cov=24)
    with pytest.raises(DataError, match="expected 25 covariates"):
        load_ihdp(tmp_path / "bad.csv")


def test_load_ihdp_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="treatment, y_factual"):
        load_ihdp(tmp_path / "nope.csv")


def test_load_ihdp_replicates_sorted(tmp_path):
    for i in (1, 2, 10):
        _write_ihdp(tmp_path / f"ihdp_npci_{i}.csv", n=20, treated=5)
    reps = load_ihdp_replicates(tmp_path)
    assert [r.meta["source"].rsplit("_", 1)[-1] for r in reps] == ["1.csv", "2.csv", "10.csv"]


def test_true_ace_requires_ground_truth():
    from ceib.data import make_dataset

    ds = make_dataset(np.zeros((2, 1)), np.zeros((2, 0)), [0, 1], [0.0, 1.0])
    with pytest.raises(DataError):
        true_ace(ds)
