"""Acceptance criteria, one test per criterion.

Each test is named ``test_criterion_<n>_...``; the conftest hook prints one
PASS/FAIL line per criterion at the end of the session.
"""
import json
import math
import os
import shutil
import time

import numpy as np
import pytest
from scipy import integrate, stats

from latentbook.agents import (Distribution, SimConfig, hydrodynamic_params,
                               measure_diffusivity, path_seeds, price_paths, simulate)
from latentbook.analytics import (impact_scaling_Y, kyle_lambda, liquidity_L,
                                  stationary_closed_form, walras_price_volume,
                                  walrasian_report, wrong_side_density,
                                  wrong_side_volume_factor)
from latentbook.auction import clear, impact, kyle_lambda_fd, steady_cycle, truncate
from latentbook.cli import EXIT_OK, SUBCOMMANDS, run
from latentbook.evolution import (EvolutionConfig, evolve, evolve_green,
                                  stationary_numeric)
from latentbook.lob import (average_msd, default_fit_window, fit_v_shape, generate_synthetic,
                            synthetic_snapshots)
from latentbook.msd import (Constant, ExponentialPair, ModelParams, MsdCurve, PriceGrid,
                            StepPair)
from latentbook.wiener_hopf import solve_fixed_point

STEP = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0))
TAUS = [1e-2, 3e-3, 1e-3, 3e-4, 1e-4]


def max_dev(a: MsdCurve, b: MsdCurve, mask=slice(None)):
    return max(float(np.max(np.abs(a.rho_s - b.rho_s)[mask])),
               float(np.max(np.abs(a.rho_d - b.rho_d)[mask])))


def max_rho(c: MsdCurve, mask=slice(None)):
    return max(float(np.max(c.rho_s[mask])), float(np.max(c.rho_d[mask])))


@pytest.fixture(scope="module")
def cycles():
    """Steady cycles of step flow over two decades of tau, with timing."""
    start = time.perf_counter()
    out = {}
    for tau in TAUS:
        grid = PriceGrid.symmetric(8.0, math.sqrt(tau) / 10)
        out[tau] = steady_cycle(STEP.replace(tau=tau), grid, EvolutionConfig(tau / 20))
    return out, time.perf_counter() - start


# --- 1: intercept of the universal shape -------------------------------------------

def test_criterion_1_intercept():
    start = time.perf_counter()
    coarse = solve_fixed_point(du=0.05)
    elapsed = time.perf_counter() - start
    fine = solve_fixed_point(du=0.025)
    print(f"u0 = {coarse.u0:.6f} (du=0.05), {fine.u0:.6f} (du=0.025), {elapsed:.2f} s")
    assert coarse.u0 == pytest.approx(0.824, abs=0.010)
    assert abs(fine.u0 - coarse.u0) <= 0.005
    assert elapsed < 10.0


# --- 2: wrong-side volume and auction volume ------------------------------------------

def test_criterion_2_wrong_side_volume(cycles):
    L, D, tau = 1.7, 0.6, 2e-3
    total, _ = integrate.quad(lambda y: wrong_side_density(y / math.sqrt(D * tau), L, D, tau),
                              0.0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    factor = total / (L * D * tau)
    assert factor == pytest.approx(wrong_side_volume_factor(), rel=1e-9)
    assert factor == pytest.approx(0.965, rel=0.005)

    cyc, _ = cycles
    L = liquidity_L(STEP)
    ratios = [cyc[tau].outcome.v_star / (L * STEP.diffusivity * tau) for tau in TAUS]
    print("v*/(L D tau):", ", ".join(f"{t:g}: {r:.4f}" for t, r in zip(TAUS, ratios)))
    # asymptotic regime: tau well below the cancellation time 1/nu = 1
    asym = [r for t, r in zip(TAUS, ratios) if t <= 3e-3]
    assert all(0.93 <= r <= 1.0 for r in asym)
    assert np.all(np.diff(ratios) > 0)
    assert ratios[-1] > 0.99


# --- 3: impact slope scaling ------------------------------------------------------------

def test_criterion_3_lambda_scaling(cycles):
    cyc, elapsed = cycles
    lams = []
    for tau in TAUS:
        c = cyc[tau]
        lams.append(kyle_lambda_fd(c.pre_curve, 1e-3 * c.outcome.v_star))
    slope = np.polyfit(np.log(TAUS), np.log(lams), 1)[0]
    decades = math.log10(TAUS[0] / TAUS[-1])
    print(f"lambda log-log slope {slope:.4f} over {decades:.1f} decades, {elapsed:.1f} s")
    assert slope == pytest.approx(-0.5, abs=0.05)
    assert decades >= 1.5
    assert elapsed < 300.0


# --- 4: square-root impact ----------------------------------------------------------------

def test_criterion_4_impact(cycles):
    small = impact_scaling_Y(1e-6) / 1e-6
    large = impact_scaling_Y(1e4) / math.sqrt(2e4)
    assert small == pytest.approx(0.555, abs=0.01)
    assert large == pytest.approx(1.0, abs=0.02)

    cyc, _ = cycles
    L = liquidity_L(STEP)
    checked = []
    for tau in TAUS:
        c = cyc[tau]
        for k in (100, 200, 300):
            Q = k * c.outcome.v_star
            ref = math.sqrt(2 * Q / L)
            if ref <= 0.25:  # stay inside the linear part of the book
                checked.append((tau, k, impact(c.pre_curve, Q) / ref))
    print(f"Y(q)/q -> {small:.4f}, Y/sqrt(2q) = {large:.4f};",
          ", ".join(f"tau={t:g} Q={k}v*: {r:.3f}" for t, k, r in checked))
    assert len(checked) >= 3
    for _, _, r in checked:
        assert r == pytest.approx(1.0, abs=0.05)


# --- 5: PDE solver against closed forms and the Green's route -----------------------------

FLOWS = [ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0)),
         ModelParams(1.0, Constant(1.0), StepPair(2.0, 0.5)),
         ModelParams(1.0, Constant(2.0), ExponentialPair(1.0, 1.0, 1.0)),
         ModelParams(0.5, Constant(2.0), ExponentialPair(1.5, 0.8, 1.2))]


def test_criterion_5_pde_solver():
    grid = PriceGrid(-8.0, 8.0, 1600)
    t = 1.0
    lines = []
    for p in FLOWS:
        cf = stationary_closed_form(p, grid)
        stat = max_dev(cf, stationary_numeric(p, grid)) / max_rho(cf)
        y_star, _ = clear(cf)
        init = truncate(cf, y_star)
        fd = evolve(init, p, EvolutionConfig(0.001), t)
        green = evolve_green(init, p, t)
        # both routes solve the same problem on nodes the grid ends cannot
        # influence within t: four diffusion lengths from either end
        reach = 4.0 * math.sqrt(2.0 * p.diffusivity * t)
        y = grid.nodes
        inner = (y >= grid.y_min + reach) & (y <= grid.y_max - reach)
        ev = max_dev(fd, green, inner) / max_rho(fd, inner)
        lines.append(f"{type(p.deposition).__name__}: stationary {stat:.1e}, evolve {ev:.1e}")
        assert stat < 1e-3
        assert ev < 1e-3
    print("; ".join(lines))


# --- 6: clearing and impact slope on stationary books --------------------------------------

@pytest.mark.parametrize("op,om,mu", [(math.e, 1.0, 1.0), (3.0, 0.7, 0.6), (0.4, 2.0, 1.5)])
def test_criterion_6_exponential_clearing(op, om, mu):
    p = ModelParams(1.0, Constant(3.0), ExponentialPair(op, om, mu))
    c = stationary_closed_form(p, PriceGrid.symmetric(40.0 / mu, 0.001))
    y, v = clear(c)
    y_ref, v_ref = walras_price_volume(op, om, mu, 3.0, 1.0)
    print(f"exp({op:.3g},{om},{mu}): y* {y:.6f} vs {y_ref:.6f}, v* rel {v / v_ref - 1:.1e},"
          f" lambda rel {kyle_lambda(c) / kyle_lambda(p) - 1:.1e}")
    assert y == pytest.approx(y_ref, rel=1e-3)
    assert v == pytest.approx(v_ref, rel=1e-3)
    assert kyle_lambda(c) == pytest.approx(kyle_lambda(p), rel=1e-6)


@pytest.mark.parametrize("op,om", [(1.0, 1.0), (2.0, 0.5)])
def test_criterion_6_step_clearing(op, om):
    p = ModelParams(1.0, Constant(1.0), StepPair(op, om))
    c = stationary_closed_form(p, PriceGrid.symmetric(30.0, 0.002))
    y, v = clear(c)
    rep = walrasian_report(p)
    print(f"step({op},{om}): v* rel {v / rep.v_star - 1:.1e},"
          f" lambda rel {kyle_lambda(c) / kyle_lambda(p) - 1:.1e}")
    assert v == pytest.approx(rep.v_star, rel=1e-3)
    if op == om:
        assert y == pytest.approx(0.0, abs=1e-12)
    assert kyle_lambda(c) == pytest.approx(kyle_lambda(p), rel=1e-6)


# --- 7: agent simulation against the hydrodynamic limit --------------------------------------

def test_criterion_7_hydrodynamic_convergence():
    params = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0), tau=0.1)
    grid = PriceGrid(-2.0, 2.0, 40)
    base = SimConfig(params, 1.0, 0.01, 105.0,
                     sigma_i_distribution=Distribution.constant(1.0), window=(-6.0, 6.0),
                     snapshot_grid=grid, burn_in=5.0, record_events=False)
    cyc = steady_cycle(hydrodynamic_params(base), PriceGrid.symmetric(9.0, 0.01),
                       EvolutionConfig(dt=0.1 / 20))
    ref = cyc.pre_curve
    rs = np.interp(grid.nodes, ref.grid.nodes, ref.rho_s)
    rd = np.interp(grid.nodes, ref.grid.nodes, ref.rho_d)
    stats_by_eps = []
    for eps in (1.0, 1 / 4, 1 / 16):
        errs = []
        for s in path_seeds(123, 4):
            m = simulate(base.replace(epsilon=eps, rng_seed=s)).mean_snapshot()
            errs.append(grid.dy * (np.abs(m.rho_s - rs).sum() + np.abs(m.rho_d - rd).sum()))
        errs = np.asarray(errs)
        stats_by_eps.append((eps, errs.mean(), errs.std(ddof=1) / math.sqrt(len(errs))))
    print("L1 error:", ", ".join(f"eps={e:g}: {m:.3f}+-{s:.3f}" for e, m, s in stats_by_eps))
    z95 = stats.norm.ppf(0.95)
    for (_, m0, s0), (_, m1, s1) in zip(stats_by_eps, stats_by_eps[1:]):
        assert (m0 - m1) / math.hypot(s0, s1) > z95


def test_criterion_7_effective_diffusivity():
    c = SimConfig(STEP.replace(sigma=1.0), 0.01, 0.01, 1.0,
                  beta_distribution=Distribution("normal", 1.0, 0.25),
                  sigma_i_distribution=Distribution.constant(0.5), rng_seed=21)
    m = measure_diffusivity(c, n_tracers=500, n_replicas=100, duration=1.0)
    print(f"diffusivity measured {m.measured:.4f} +- {m.se:.4f}, formula {m.formula:.4f}")
    assert m.measured == pytest.approx(m.formula, abs=3 * m.se)


# --- 8: price formation ---------------------------------------------------------------------

def test_criterion_8_price_variance():
    c = SimConfig(STEP.replace(sigma=1.0), 0.01, 0.01, 1.0,
                  beta_distribution=Distribution("normal", 1.0, 0.25),
                  record_events=False, rng_seed=2024)
    _, rep = price_paths(c, 200)
    print(f"Var(p)/Var(pF) = {rep.excess_volatility_ratio:.4f} +- {rep.excess_volatility_se:.4f},"
          f" Var(p-pF)/Var(pF) = {rep.pricing_error_ratio:.4f} +- {rep.pricing_error_se:.4f}")
    assert rep.n_paths >= 100
    assert rep.excess_volatility_ratio == pytest.approx(1.25, abs=3 * rep.excess_volatility_se)
    assert rep.pricing_error_ratio == pytest.approx(0.25, abs=3 * rep.pricing_error_se)

    pairs, _ = price_paths(c.replace(beta_distribution=Distribution.constant(1.0)), 20)
    for p in pairs:
        np.testing.assert_array_equal(p.p_mkt, p.p_fund)


# --- 9: book-shape fit on synthetic data ------------------------------------------------------

def test_criterion_9_v_shape_fit():
    zs = []
    for seed in range(20):
        snaps = synthetic_snapshots(2.0, 0.05, noise=0.1, n_snapshots=24, seed=seed)
        f = fit_v_shape(average_msd(snaps, 0.01, 5.0)[0], default_fit_window(snaps, 0.01))
        zs += [(f.L_bid - 2.0) / f.se_bid, (f.L_ask - 2.0) / f.se_ask]
        shifted = average_msd([s.shifted(37.5) for s in snaps], 0.01, 5.0)[0]
        a = average_msd(snaps, 0.01, 5.0)[0]
        np.testing.assert_array_equal(a.rho_s, shifted.rho_s)
        np.testing.assert_array_equal(a.rho_d, shifted.rho_d)
    print(f"fit z-scores over 20 seeds: max |z| = {max(map(abs, zs)):.2f}")
    assert all(abs(z) < 3 for z in zs)


# --- 10: reproducible command-line runs ---------------------------------------------------------

SMALL = {
    "grid": {"y_min": -6.0, "y_max": 6.0, "n": 600},
    "evolution": {"dt": 0.01, "t": 0.5},
    "auction": {"tau_list": [1e-2, 3e-3], "q_list": [0.1, 10.0]},
    "agent_sim": {"horizon": 2.0, "epsilon": 0.5, "window": [-3.0, 3.0]},
}


def test_criterion_10_reproducible_runs(tmp_path):
    data = tmp_path / "snaps.csv"
    generate_synthetic(2.0, 0.05, n_snapshots=4, seed=1, path=data)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(dict(SMALL, ingest={"input": str(data)})))
    for command in SUBCOMMANDS:
        out = tmp_path / command
        argv = [command, "--config", str(cfg), "--out", str(out), "--seed", "11"]
        assert run(argv) == EXIT_OK
        first = {n: (out / n).read_bytes() for n in sorted(os.listdir(out))}
        shutil.rmtree(out)
        assert run(argv) == EXIT_OK
        second = {n: (out / n).read_bytes() for n in sorted(os.listdir(out))}
        assert second == first, command
    print(f"{len(SUBCOMMANDS)} subcommands byte-identical on rerun")
