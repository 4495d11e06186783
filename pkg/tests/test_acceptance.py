"""End-to-end acceptance checks, one test per criterion.

Each test prints a line ``criterion K: PASS|FAIL ...`` (collected into the
terminal summary) and then asserts the criterion at its stated tolerance.
The whole module takes on the order of an hour on one core.
"""

import math

import numpy as np
import pytest

from gcnsbm import bayes_optimal as bo
from gcnsbm import closed_form as cf
from gcnsbm import simulator as sim
from gcnsbm import state_evolution as se
from gcnsbm.core import DataParams, GcnParams, Loss, loss_eval, sample_mc
from gcnsbm.potentials import argmax_out, prox_loss, psi_out
from gcnsbm.presets import C_SIM, LOSSES, R_FIG1, get_preset

from test_potentials import random_input, zoom_grid_argmax
from test_simulator import dense_rescaled, small_dataset

pytestmark = pytest.mark.slow

MC_FULL = 1_000_000


@pytest.fixture
def report(request):
    def emit(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.acceptance_lines.append(line)
        return ok
    return emit


@pytest.fixture(scope="module")
def mc_full():
    return sample_mc(MC_FULL, 0)


def zoom_grid_argmax_1d(f, lo=-10.0, hi=10.0, points=2001, levels=4):
    center, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    for _ in range(levels):
        x = center + np.linspace(-half, half, points)
        center = x[np.argmax(f(x))]
        half = 4 * (x[1] - x[0])
    return center


def sim_grid():
    return [GcnParams(loss=l, r=r, c=c) for l in LOSSES for r in R_FIG1 for c in C_SIM]


# ---------------------------------------------------------------- 1

def test_theory_matches_simulation(report, mc_full):
    panel = get_preset("fig1-top").panels[0]
    dp = panel.data.with_(d=30.0)
    gps = sim_grid()
    cfg = se.SolveConfig(mc_count=MC_FULL)
    theory = [se.predict(dp, gp, cfg, mc_full) for gp in gps]
    sims = sim.simulate(dp, gps, 10_000, range(10))
    hits, worst = 0, (0.0, None)
    for gp, pred, summ in zip(gps, theory, sims):
        z = abs(summ.mean["acc_test"] - pred.metrics.acc_test) / summ.sem["acc_test"]
        hits += z <= 3
        if z > worst[0]:
            worst = (z, gp)
    frac = hits / len(gps)
    ok = frac >= 0.95 and all(p.fixed_point.converged for p in theory)
    report(1, ok, f"{hits}/{len(gps)} grid points within 3 SE ({frac:.1%}); "
                  f"largest deviation {worst[0]:.2f} SE at {worst[1]}")
    assert ok


# ---------------------------------------------------------------- 2

def test_state_evolution_matches_large_r_closed_form(report, mc_full):
    cfg = se.SolveConfig(mc_count=MC_FULL)
    lams = [0.5, 1.0, 1.5, 2.0, 2.5]
    cs = [0.0, 0.5, 1.0, 1.5, 2.0]
    worst = {}
    for model in ("csbm", "glm_sbm"):
        base = DataParams(model, alpha=4, rho=0.1, mu=3)
        worst[model] = 0.0
        for lam in lams:
            dp = base.with_(lam=lam)
            for c in cs:
                gp = GcnParams(loss="quadratic", r=1e3, c=c)
                pred = se.predict(dp, gp, cfg, mc_full)
                worst[model] = max(worst[model], abs(pred.metrics.acc_test - cf.acc_large_r(dp, gp)))
    ok = max(worst.values()) <= 0.005
    report(2, ok, "max |SE - closed form| over 5x5 (lambda, c): "
                  + ", ".join(f"{m} {v:.4f}" for m, v in worst.items()) + " (limit 0.005)")
    assert ok


# ---------------------------------------------------------------- 3

def test_learning_rates(report, mc_full):
    cfg = se.SolveConfig(mc_count=MC_FULL)
    lams = np.array([3.0, 4.0, 5.0])
    parts, ok = [], True
    for model in ("csbm", "glm_sbm"):
        base = DataParams(model, alpha=4, rho=0.1, mu=3)
        err = []
        for lam in lams:
            dp = base.with_(lam=lam)
            gp = GcnParams(loss="quadratic", r=1e3, c=cf.c_star(dp, "finite"))
            err.append(1.0 - se.predict(dp, gp, cfg, mc_full).metrics.acc_test)
        err = np.array(err)
        tau = cf.rate_inf(base)
        slope = -np.polyfit(lams ** 2, np.log(err), 1)[0]
        # diagnostic: the same fit after removing the 1/lambda prefactor of the erfc tail
        corrected = -np.polyfit(lams ** 2, np.log(err * lams), 1)[0]
        rel = abs(slope / tau - 1)
        floor_ok = bool(np.all(err >= 1e-6))
        ok &= rel <= 0.1 and floor_ok
        parts.append(f"{model} slope {slope:.4f} vs tau {tau:.4f} ({rel:.1%}; prefactor-corrected "
                     f"{corrected:.4f}, {abs(corrected / tau - 1):.1%}); min 1-Acc {err.min():.1e}")
        bo_err = np.array([bo.bo_error(base.with_(lam=lam)) for lam in lams])
        bo_slope = -np.polyfit(lams ** 2, np.log(bo_err), 1)[0]
        ok &= abs(bo_slope - cf.RATE_BAYES_OPTIMAL) <= 0.1 * cf.RATE_BAYES_OPTIMAL
        parts.append(f"{model} BO slope {bo_slope:.4f} vs 1")
    report(3, ok, "; ".join(parts))
    assert ok


# ---------------------------------------------------------------- 4

def test_optimal_self_loop(report):
    base = DataParams("csbm", alpha=4, rho=0.1, mu=3)
    expected = (1 + base.mu + base.alpha) / (base.alpha * 10.0)
    c10 = cf.c_star(base.with_(lam=10.0), "finite")
    lams = np.linspace(0.5, 4.0, 8)
    products = np.array([lam * cf.c_star(base.with_(lam=lam), "finite") for lam in lams])
    ok = abs(c10 / expected - 1) <= 0.05 and bool(np.all((products >= 0.5) & (products <= 2.0)))
    report(4, ok, f"c*(lambda=10) = {c10:.5f} vs {expected:.5f}; "
                  f"lambda c* on [0.5, 4] in [{products.min():.3f}, {products.max():.3f}]")
    assert ok


# ---------------------------------------------------------------- 5

def test_bayes_optimal_dominates(report):
    mc_count = 200_000
    mc = sample_mc(mc_count, 1)
    cfg = se.SolveConfig(mc_count=mc_count, seed=1)
    parts, ok = [], True
    for name in ("fig1-top", "fig1-bottom", "fig2-top", "fig2-bottom"):
        dp = get_preset(name).panels[0].data
        preds = [se.predict(dp, gp, cfg, mc) for gp in sim_grid()]
        best = max(preds, key=lambda p: p.metrics.acc_test)
        margin = bo.bo_accuracy(dp) - best.metrics.acc_test
        ok &= margin > 3 * best.acc_test_se
        parts.append(f"{name} margin {margin:.4f}")
    report(5, ok, "BO minus best GCN over the grid: " + ", ".join(parts))
    assert ok


# ---------------------------------------------------------------- 6

def test_interpolation_peak(report):
    n = 10_000
    dp = DataParams("glm_sbm", alpha=2, rho=0.5, lam=1.0, d=n / 2)
    gp = GcnParams(loss="quadratic", r=1e-6, c=1.0)
    rhos = [0.3, 0.4, 0.45, 0.5, 0.55, 0.6, 0.7, 0.8]
    ds = sim.gen_dataset(dp, n, seed=0)
    metrics = []
    for rho in rhos:
        dsr = sim.remask(ds, rho)
        metrics.append(sim.evaluate(dsr, sim.train_gcn(dsr, gp), gp))
    acc_train = np.array([m.acc_train for m in metrics])
    e_test = np.array([m.e_test for m in metrics])
    peak = rhos[int(np.argmax(e_test))]
    first_drop = next((r for r, a in zip(rhos, acc_train) if a < 1), None)
    ok = acc_train[0] == 1.0 and first_drop is not None and abs(peak - 0.5) <= 0.05
    report(6, ok, f"test error peaks at rho = {peak} (alpha rho = {dp.alpha * peak:g}); acc_train = 1 "
                  f"up to rho = {max(r for r, a in zip(rhos, acc_train) if a == 1)}, first below 1 at {first_drop}")
    assert ok


# ---------------------------------------------------------------- 7

def test_oracle_suites(report):
    details, ok = [], True
    rng = np.random.default_rng(2024)
    # prox and output-channel extremizers against grid search
    prox_err = argmax_coarse = argmax_fine = 0.0
    for loss in Loss:
        for _ in range(1000):
            y, mean, var = rng.choice([-1.0, 1.0]), rng.uniform(-4, 4), rng.uniform(0.05, 5)
            h = zoom_grid_argmax_1d(lambda H: -loss_eval(loss, y * H) - (H - mean) ** 2 / (2 * var))
            prox_err = max(prox_err, abs(prox_loss(loss, y, mean, var) - h))
            inp = random_input(rng)
            h, s = argmax_out(inp, loss)
            coarse, fine, _ = zoom_grid_argmax(lambda H, S: psi_out(inp, loss, H, S))
            argmax_coarse = max(argmax_coarse, abs(h - coarse[0]), abs(s - coarse[1]))
            argmax_fine = max(argmax_fine, abs(h - fine[0]), abs(s - fine[1]))
    ok &= prox_err <= 1e-5 and argmax_coarse <= 1e-2 and argmax_fine <= 1e-5
    details.append(f"prox {prox_err:.1e}, argmax coarse {argmax_coarse:.1e} / refined {argmax_fine:.1e}")

    # forward pass against the dense product
    fwd = 0.0
    for seed in range(20):
        for mode in sim.AdjacencyMode:
            n = int(rng.integers(4, 12))
            ds = small_dataset(n=n, m=int(rng.integers(1, 6)), seed=seed, mode=mode, d=n / 2)
            for d in (ds, sim.symmetrized(ds)):
                w, c = rng.standard_normal(d.m_dim), rng.uniform(0, 2)
                dense = (dense_rescaled(d) + c * math.sqrt(d.n) * np.eye(d.n)) @ d.features @ w / d.n
                fwd = max(fwd, float(np.max(np.abs(sim.gcn_forward(d, w, c) - dense))))
    ok &= fwd <= 1e-12
    details.append(f"forward {fwd:.1e}")

    # ERM gradient certificate
    ds = sim.gen_dataset(DataParams("csbm", alpha=2, rho=0.3, lam=1.0, mu=1.0, d=30), 600, seed=1)
    Z, y = ds.design(1.0)[ds.train_mask], ds.labels[ds.train_mask]
    cert = 0.0
    for loss in Loss:
        for r in (0.01, 1.0, 100.0):
            gp = GcnParams(loss=loss, r=r, c=1.0)
            w = sim.train_gcn(ds, gp)
            if loss is Loss.HINGE:
                cert = max(cert, sim.hinge_certificate(y[:, None] * Z, r, w, len(y)))
            else:
                cert = max(cert, sim._Problem(Z, y, r, loss, len(y)).certificate(w))
    ok &= cert <= 1e-10
    details.append(f"certificate {cert:.1e}")

    # Monte Carlo determinism under a fixed seed and any worker count
    mc_a, mc_b = sample_mc(300_000, 7), sample_mc(300_000, 7)
    same = all(np.array_equal(getattr(mc_a, k), getattr(mc_b, k)) for k in ("xi", "zeta", "chi"))
    dp = DataParams("csbm", alpha=4, rho=0.1, lam=1.0, mu=1.0)
    gp = GcnParams(loss="logistic", r=1.0, c=0.5)
    ref = se.iterate_csbm(se.default_init(), mc_a, dp, gp, workers=1).as_array()
    for workers in (2, 3, 4):
        same &= np.array_equal(se.iterate_csbm(se.default_init(), mc_b, dp, gp, workers=workers).as_array(), ref)
    ok &= bool(same)
    details.append(f"MC bitwise {'identical' if same else 'DIFFERENT'}")

    report(7, ok, "; ".join(details))
    assert ok
