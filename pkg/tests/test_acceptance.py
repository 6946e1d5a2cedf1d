"""End-to-end acceptance checks A1-A9.

Each test prints one ``A<k> PASS|FAIL|SKIPPED`` line. These train real
models and take about thirteen minutes on a single CPU core. IHDP (A7) runs
only when replicate files are present in ``$CEIB_IHDP_DIR`` (default
``data/ihdp`` under the repository root).
"""

import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch
from scipy.stats import spearmanr

from ceib.baselines import ols1, ols2
from ceib.data import SplitSpec, make_dataset, split_dataset, standardize
from ceib.estimation import cluster_composition_report, max_total_variation
from ceib.generators import (LinearGaussianConfig, TwinsSimConfig, gen_linear_gaussian,
                             gen_twins_style, load_ihdp_replicates, true_ace)
from ceib.info import estimate_izt, estimate_izy
from ceib.model import CEIBModel, ModelConfig
from ceib.objective import TrainConfig, batch_tensors, draw_noise, evaluate_loss, loss, train
from ceib.pipeline import ceib_estimates, errors, fit_ceib

IHDP_DIR = Path(os.environ.get("CEIB_IHDP_DIR", Path(__file__).resolve().parents[1] / "data" / "ihdp"))

# x1 sees only the first confounder, x2 only the second
A6_GENERATOR = dict(p1=3, p2=3, intercept1=2.0,
                    A1=[[1.0, 0.0]] * 3, A2=[[0.0, 1.0]] * 3)
A9_MIN_SHARE = 0.05


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


def _report(request, crit, ok, detail):
    line = f"{crit} {'PASS' if ok else 'FAIL'}: {detail}"
    tr = request.config.pluginmanager.getplugin("terminalreporter")
    if tr is not None:
        tr.write_line("")
        tr.write_line(line)
    else:
        print(line)
    assert ok, line


@pytest.fixture(scope="module")
def observational_fits():
    """A1 setup, reused by the observational half of A2 and by A9."""
    fits = []
    for seed in range(5):
        ds = gen_linear_gaussian(LinearGaussianConfig(n=2000, dz=2, intercept1=2.0, attribute_bins=4,
                                                      seed=seed))
        t0 = time.perf_counter()
        fit = fit_ceib(ds, TrainConfig(seed=seed))
        fits.append((fit, time.perf_counter() - t0))
    return fits


def test_a1_oracle_ace_recovery(request, observational_fits):
    errs, secs = [], []
    for fit, elapsed in observational_fits:
        errs.append(abs(ceib_estimates(fit, "test")["full"] - 2.0))
        secs.append(elapsed)
    mean = float(np.mean(errs))
    ok = mean <= 0.15 and max(secs) <= 300
    _report(request, "A1", ok, f"mean |ACE_hat - 2| = {mean:.4f} over 5 seeds (gate <= 0.15); "
                               f"per-seed errors {np.round(errs, 4).tolist()}; "
                               f"slowest seed {max(secs):.0f}s (gate <= 300s)")


def test_a2_randomization_signature(request, observational_fits):
    obs = [estimate_izt(fit.model, fit.std["val"]) for fit, _ in observational_fits]
    rnd = []
    for seed in range(3):
        ds = gen_linear_gaussian(LinearGaussianConfig(n=2000, dz=2, intercept1=2.0, regime="randomized",
                                                      seed=seed))
        fit = fit_ceib(ds, TrainConfig(seed=seed))
        rnd.append(estimate_izt(fit.model, fit.std["val"]))
    ok = max(rnd) <= 0.05 and min(obs) >= 0.1
    _report(request, "A2", ok, f"randomized I(Z;T) per seed {np.round(rnd, 4).tolist()} (gate <= 0.05); "
                               f"observational {np.round(obs, 4).tolist()} (gate >= 0.1)")


def test_a3_exact_linear_baselines(request):
    cfg = LinearGaussianConfig(n=500, covariate_sd=0.0, outcome_sd=0.0, beta0=[1.0, -0.5],
                               beta1=[1.0, -0.5], intercept0=0.5, intercept1=2.5, seed=11)
    ds = gen_linear_gaussian(cfg)
    truth = true_ace(ds)
    e1 = abs(ols1(ds).ace - truth)
    e2 = abs(ols2(ds, ds).ace - truth)
    ok = truth == pytest.approx(2.0, abs=1e-12) and e1 <= 1e-8 and e2 <= 1e-8
    _report(request, "A3", ok, f"OLS-1 error {e1:.2e}, OLS-2 error {e2:.2e} (gate <= 1e-8)")


def test_a4_gradient_correctness(request):
    rng = np.random.default_rng(0)
    n = 8
    ds = make_dataset(rng.normal(size=(n, 2)), rng.normal(size=(n, 2)), rng.integers(0, 2, n),
                      rng.normal(size=n))
    model = CEIBModel(ModelConfig(p1=2, p2=2, k1=2, d1=1, k2=2, d2=1, hidden=6, seed=0))
    g = torch.Generator().manual_seed(1)
    with torch.no_grad():
        # zero-initialised output layers would leave many gradients at exactly zero
        for p in model.parameters():
            p.add_(0.5 * torch.randn(p.shape, generator=g, dtype=torch.float64))
    batch = batch_tensors(ds)
    noise = draw_noise(model, n, torch.Generator().manual_seed(2))
    total, _ = loss(model, batch, 5.0, 0.5, noise=noise)
    total.backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in model.parameters()])
    numeric = []
    h = 1e-6
    with torch.no_grad():
        for p in model.parameters():
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + h
                up = loss(model, batch, 5.0, 0.5, noise=noise)[1].total
                flat[i] = old - h
                dn = loss(model, batch, 5.0, 0.5, noise=noise)[1].total
                flat[i] = old
                numeric.append((up - dn) / (2 * h))
    numeric = torch.tensor(numeric, dtype=torch.float64)
    # relative to the gradient's scale, so near-zero entries do not divide by zero
    rel = float(((analytic - numeric).abs() / analytic.abs().max()).max())
    _report(request, "A4", rel <= 1e-4, f"max relative error {rel:.2e} over {numeric.numel()} "
                                        "parameters (gate <= 1e-4)")


def _lg_split(seed, n=1000):
    ds = gen_linear_gaussian(LinearGaussianConfig(n=n, dz=2, intercept1=2.0, seed=seed))
    tr, va, _ = split_dataset(ds, SplitSpec(seed=seed))
    _, (tr, va) = standardize(tr, va)
    return tr, va


def test_a5_collapse_and_curve_shape(request):
    cfg = TrainConfig(lam=0.0, epochs=400, seed=0)
    tr, va = _lg_split(0)
    model, _ = train(tr, va, ModelConfig(p1=tr.p1, p2=tr.p2, seed=0), cfg)
    parts = evaluate_loss(model, va, 0.0, cfg.temp_end, 2, 1.0)
    kl = parts.kl1 + parts.kl2

    lams = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0]
    seeds = [0, 1, 2]
    izy = np.zeros((len(seeds), len(lams)))
    for i, seed in enumerate(seeds):
        tr, va = _lg_split(seed)
        for j, lam in enumerate(lams):
            m, _ = train(tr, va, ModelConfig(p1=tr.p1, p2=tr.p2, seed=seed),
                         TrainConfig(lam=lam, epochs=200, seed=seed))
            izy[i, j] = estimate_izy(m, va)
    curve = izy.mean(0)
    rho = float(spearmanr(lams, curve).statistic)
    ok = kl <= 0.01 and rho >= 0.8
    _report(request, "A5", ok, f"lambda=0 kl1+kl2 = {kl:.2e} nats (gate <= 0.01); "
                               f"seed-averaged I(Z;Y) {np.round(curve, 3).tolist()} over lambda {lams}, "
                               f"Spearman {rho:.3f} (gate >= 0.8)")


def test_a6_partial_covariate_value(request):
    full, part, base, wins = [], [], [], 0
    for seed in range(10):
        ds = gen_linear_gaussian(LinearGaussianConfig(n=2000, seed=seed, **A6_GENERATOR))
        fit = fit_ceib(ds, TrainConfig(seed=seed))
        e = errors(fit, "test", mask_fraction=0.5, mask_seed=seed, methods=("ols2",))
        full.append(e["CEIB"])
        part.append(e["CEIB-partial"])
        base.append(e["ols2"])
        wins += e["CEIB-partial"] < e["ols2"]
    ratio = float(np.mean(part) / np.mean(full))
    ok = ratio <= 2.0 and wins >= 7
    _report(request, "A6", ok, f"mean errors: CEIB full {np.mean(full):.4f}, CEIB partial {np.mean(part):.4f}, "
                               f"OLS-2 mean-imputed {np.mean(base):.4f}; partial/full = {ratio:.2f} "
                               f"(gate <= 2); partial beats OLS-2 on {wins}/10 seeds (gate >= 7)")


def test_a7_ihdp(request):
    files = sorted(IHDP_DIR.glob("ihdp_npci_*.csv")) if IHDP_DIR.is_dir() else []
    if len(files) < 10:
        line = f"A7 SKIPPED: IHDP replicate files not found in {IHDP_DIR} (set CEIB_IHDP_DIR)"
        tr = request.config.pluginmanager.getplugin("terminalreporter")
        if tr is not None:
            tr.write_line("")
            tr.write_line(line)
        pytest.skip(line)
    errs = []
    for i, ds in enumerate(load_ihdp_replicates(IHDP_DIR)[:10]):
        fit = fit_ceib(ds, TrainConfig(seed=i))
        errs.append(errors(fit, "test", methods=())["CEIB"])
    mean = float(np.mean(errs))
    _report(request, "A7", mean <= 0.5, f"out-of-sample mean eps_ACE {mean:.3f} over 10 replicates "
                                        "(gate <= 0.5)")


def test_a8_twins_ordering(request):
    ceib, lr = [], []
    for seed in range(10):
        ds = gen_twins_style(TwinsSimConfig(flip_prob=0.15, seed=seed))
        fit = fit_ceib(ds, TrainConfig(seed=seed))
        e = errors(fit, "test", methods=("lr",))
        ceib.append(e["CEIB"])
        lr.append(e["lr"])
    ok = np.mean(ceib) <= np.mean(lr)
    _report(request, "A8", ok, f"mean |ACE error| CEIB {np.mean(ceib):.4f} vs LR {np.mean(lr):.4f} "
                               "over 10 seeds at flip probability 0.15 (gate CEIB <= LR)")


def test_a9_cluster_structure(request, observational_fits):
    tvs = []
    for fit, _ in observational_fits:
        rep = cluster_composition_report(fit.clusters, "severity")
        tvs.append(max_total_variation(rep, min_share=A9_MIN_SHARE))
    mean = float(np.mean(tvs))
    _report(request, "A9", mean >= 0.1, f"seed-averaged max total variation {mean:.3f} over clusters "
                                        f"holding >= {A9_MIN_SHARE:.0%} of units (gate >= 0.1); "
                                        f"per seed {np.round(tvs, 3).tolist()}")
