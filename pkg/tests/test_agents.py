import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from latentbook.agents import (DT_NU_LIMIT, Distribution, Population, SimConfig,
                               _Sampler, consensus_price, effective_diffusivity,
                               empirical_msd, hydrodynamic_params, match_auction,
                               measure_diffusivity, path_seeds, price_paths, simulate,
                               time_average, variance_ratio)
from latentbook.errors import ConfigurationError, NormalizationError
from latentbook.msd import (BUY, SELL, Constant, ExponentialPair, ModelParams, PriceGrid,
                            StepPair, Tabulated)

STEP = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0))


def cfg(**kw):
    base = dict(params=STEP, epsilon=0.01, dt=0.01, horizon=1.0)
    base.update(kw)
    return SimConfig(**base)


# --- distributions and formulas ----------------------------------------------------

def test_distribution_validation():
    with pytest.raises(ConfigurationError):
        Distribution("cauchy", 1.0, 1.0)
    with pytest.raises(ConfigurationError):
        Distribution("constant", 1.0, 0.5)
    with pytest.raises(ConfigurationError):
        Distribution("normal", 1.0, -1.0)
    with pytest.raises(ConfigurationError):
        Distribution("gamma", -1.0, 1.0)


@pytest.mark.parametrize("kind", ["normal", "uniform", "gamma"])
def test_distribution_moments(kind):
    d = Distribution(kind, 1.0, 0.3)
    x = d.sample(np.random.default_rng(0), 200_000)
    assert x.mean() == pytest.approx(1.0, abs=5 * math.sqrt(0.3 / 2e5))
    assert x.var() == pytest.approx(0.3, rel=0.02)
    assert x.min() >= d.lower


def test_effective_diffusivity_examples():
    one = Distribution.constant(1.0)
    assert effective_diffusivity(one, Distribution.constant(1.0), 5.0) == 0.5
    assert effective_diffusivity(Distribution("normal", 1.0, 0.25), Distribution.constant(0.0),
                                 2.0) == pytest.approx(0.5)
    assert effective_diffusivity(Distribution("normal", 1.0, 0.25),
                                 Distribution("gamma", 1.0, 1.0), 2.0) == pytest.approx(1.5)


def test_consensus_price_examples():
    assert consensus_price([100.0, 102.0], [0.5, 0.5]) == 101.0
    assert consensus_price([3.0], [1.0]) == 3.0
    with pytest.raises(NormalizationError):
        consensus_price([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(NormalizationError):
        consensus_price([1.0, 2.0], [1.5, -0.5])
    with pytest.raises(NormalizationError):
        consensus_price([1.0], [0.5, 0.5])


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0.01, 1.0)), min_size=1,
                max_size=20))
def test_consensus_price_inside_range(pairs):
    est = np.array([p[0] for p in pairs])
    w = np.array([p[1] for p in pairs])
    w = w / w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    if w[-1] < 0:
        return
    p = consensus_price(est, w)
    assert est.min() - 1e-9 <= p <= est.max() + 1e-9


# --- empirical densities --------------------------------------------------------------

def test_empirical_msd_example():
    grid = PriceGrid(-1.0, 1.0, 20)
    pop = Population.from_offsets([-0.5, -0.52], [0.3], epsilon=0.02, center=7.0)
    c = empirical_msd(pop, grid)
    k = int(np.argmin(np.abs(grid.nodes + 0.5)))
    assert c.rho_d[k] == pytest.approx(0.04 / grid.dy)
    assert c.rho_s[int(np.argmin(np.abs(grid.nodes - 0.3)))] == pytest.approx(0.02 / grid.dy)
    assert c.rho_s.sum() * grid.dy == pytest.approx(0.02)


@given(st.lists(st.floats(-0.99, 0.99), max_size=50), st.lists(st.floats(-0.99, 0.99),
                                                                 max_size=50))
def test_empirical_msd_preserves_volume(buy, sell):
    grid = PriceGrid(-1.0, 1.0, 40)
    pop = Population.from_offsets(buy, sell, epsilon=0.1)
    if len(buy) == 0:
        pop = Population.from_offsets([], sell, 0.1)
    c = empirical_msd(pop, grid)
    assert c.rho_d.sum() * grid.dy == pytest.approx(0.1 * len(buy))
    assert c.rho_s.sum() * grid.dy == pytest.approx(0.1 * len(sell))


def test_time_average():
    grid = PriceGrid(-1.0, 1.0, 20)
    a = empirical_msd(Population.from_offsets([-0.5], [0.5], 1.0), grid)
    b = empirical_msd(Population.from_offsets([-0.5], [0.0], 1.0), grid)
    m = time_average([a, b])
    np.testing.assert_allclose(m.rho_s, 0.5 * (a.rho_s + b.rho_s))
    with pytest.raises(ConfigurationError):
        time_average([])


# --- matching -------------------------------------------------------------------------

def test_match_example():
    pop = Population.from_offsets([1.0, 0.5], [0.0, 0.8], epsilon=1.0)
    volume, price, fills = match_auction(pop)
    assert volume == 1.0 and price == 0.5
    assert len(pop) == 2
    assert sorted(pop.price.tolist()) == [0.5, 0.8]


def test_match_fractional_fill():
    pop = Population(np.array([True, False]), np.array([1.0, 0.0]), np.ones(2), np.zeros(2),
                     np.array([2.0, 0.5]))
    volume, price, _ = match_auction(pop)
    assert volume == 0.5 and price == 0.5
    assert pop.volume.tolist() == [1.5] and pop.is_buy.tolist() == [True]


def test_match_without_crossing():
    pop = Population.from_offsets([-1.0], [1.0], epsilon=1.0)
    volume, price, fills = match_auction(pop)
    assert volume == 0.0 and fills == [] and price == 0.0 and len(pop) == 2
    assert math.isnan(match_auction(Population.from_offsets([], [1.0], 1.0))[1])


@given(st.lists(st.tuples(st.booleans(), st.floats(-5, 5), st.floats(0.1, 3)), max_size=40))
def test_match_conserves_volume_and_uncrosses(orders):
    if not orders:
        return
    is_buy = np.array([o[0] for o in orders])
    price = np.array([o[1] for o in orders])
    vol = np.array([o[2] for o in orders])
    pop = Population(is_buy, price, np.ones(len(orders)), np.zeros(len(orders)), vol)
    before_b, before_s = vol[is_buy].sum(), vol[~is_buy].sum()
    volume, _, fills = match_auction(pop)
    assert before_b - pop.volume[pop.is_buy].sum() == pytest.approx(volume, abs=1e-9)
    assert before_s - pop.volume[~pop.is_buy].sum() == pytest.approx(volume, abs=1e-9)
    assert sum(q for b, _, q in fills if b) == pytest.approx(volume)
    if np.any(pop.is_buy) and np.any(~pop.is_buy):
        assert pop.price[pop.is_buy].max() < pop.price[~pop.is_buy].min()
    assert np.all(pop.volume > 0)


# --- deposition sampler -----------------------------------------------------------------

@pytest.mark.parametrize("rate,side,cdf", [
    (ExponentialPair(1.0, 2.0, 1.5), SELL,
     lambda y: (np.exp(1.5 * y) - np.exp(-4.5)) / (np.exp(3.0) - np.exp(-4.5))),
    (ExponentialPair(1.0, 2.0, 1.5), BUY,
     lambda y: (np.exp(4.5) - np.exp(-1.5 * y)) / (np.exp(4.5) - np.exp(-3.0))),
    (Tabulated([-3.0, 2.0], [0.0, 5.0], [0.0, 5.0]), SELL,
     lambda y: (y + 3.0) ** 2 / 25.0),
    (StepPair(1.0, 3.0), SELL, lambda y: y / 2.0),
])
def test_sampler_matches_target_law(rate, side, cdf):
    smp = _Sampler(rate, side, (-3.0, 2.0))
    x = smp.draw(np.random.default_rng(11), 20_000)
    assert stats.kstest(x, cdf).pvalue > 1e-3


def test_sampler_mass():
    assert _Sampler(StepPair(1.0, 3.0), SELL, (-3.0, 2.0)).mass == pytest.approx(6.0)
    assert _Sampler(StepPair(1.0, 3.0), BUY, (-3.0, 2.0)).mass == pytest.approx(3.0)
    e = _Sampler(ExponentialPair(1.0, 2.0, 1.5), SELL, (-3.0, 2.0))
    assert e.mass == pytest.approx(2.0 * (math.exp(3.0) - math.exp(-4.5)) / 1.5)


# --- simulation ---------------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigurationError):
        cfg(dt=0.2)  # nu dt above the limit
    assert DT_NU_LIMIT == 0.1
    with pytest.raises(ConfigurationError):
        cfg(auction_period=0.025)
    with pytest.raises(ConfigurationError):
        cfg(beta_distribution=Distribution("normal", 1.2, 0.1))
    with pytest.raises(ConfigurationError):
        cfg(rng_seed=2 ** 64)
    with pytest.raises(ConfigurationError):
        cfg(epsilon=0.0)
    with pytest.raises(ConfigurationError):
        cfg(sigma_i_distribution=Distribution("normal", 1.0, 0.1))
    assert cfg(auction_period=0.05).steps_per_auction == 5


def test_pure_death_is_binomial():
    n, nu, t = 20_000, 1.0, 1.0
    pop = Population.from_offsets(np.zeros(n // 2), np.zeros(n // 2), 1.0)
    p = ModelParams(1.0, Constant(nu), Constant(0.0))
    res = simulate(cfg(params=p, initial=pop, horizon=t, record_events=False))
    keep = math.exp(-nu * t)
    sd = math.sqrt(n * keep * (1 - keep))
    assert abs(len(res.population) - n * keep) < 4 * sd


def test_deposition_count_is_poisson():
    p = ModelParams(1.0, Constant(0.0), StepPair(2.0, 2.0))
    res = simulate(cfg(params=p, epsilon=0.05, horizon=2.0, window=(-1.0, 1.0)))
    n = sum(1 for e in res.events if e[1] == "deposit")
    mean = 2 * 2.0 * 1.0 * 2.0 / 0.05
    assert abs(n - mean) < 4 * math.sqrt(mean)
    assert all(e[3] < 0 for e in res.events if e[2] == BUY)


def test_lockstep_revision_keeps_offsets():
    pop = Population.from_offsets([-0.3, -0.1], [0.2], 1.0, center=5.0)
    p = ModelParams(1.0, Constant(0.0), Constant(0.0), sigma=2.0)
    res = simulate(cfg(params=p, initial=pop, horizon=0.5, reaction_var=0.0))
    np.testing.assert_allclose(np.sort(res.population.y), [-0.3, -0.1, 0.2], atol=1e-12)
    np.testing.assert_allclose(res.p_mkt, res.p_fund, atol=1e-12)
    assert np.std(np.diff(res.p_fund)) > 0


def test_determinism_and_seed_sensitivity():
    c = cfg(params=STEP.replace(sigma=1.0), beta_distribution=Distribution("normal", 1, 0.2),
            auction_period=0.1, rng_seed=42)
    a, b = simulate(c), simulate(c)
    assert a.events_csv() == b.events_csv()
    assert a.prices_csv() == b.prices_csv()
    assert a.auctions_csv() == b.auctions_csv()
    assert simulate(c.replace(rng_seed=43)).events_csv() != a.events_csv()


def test_auctions_clear_the_book():
    c = cfg(auction_period=0.1, epsilon=0.005, horizon=2.0,
            sigma_i_distribution=Distribution.constant(1.0))
    res = simulate(c)
    assert len(res.auctions) == 20
    # the run ends on an auction, so the final book is uncrossed
    pop = res.population
    assert pop.price[pop.is_buy].max() < pop.price[~pop.is_buy].min()
    traded = [a.volume for a in res.auctions]
    assert all(v >= 0 for v in traded) and sum(traded) > 0
    lines = res.auctions_csv().splitlines()
    assert lines[0] == "auction_index,time,y_star,v_star,q_extra" and len(lines) == 21


def test_empty_side_skips_auction():
    p = ModelParams(1.0, Constant(0.0), StepPair(0.0, 1.0))
    res = simulate(cfg(params=p, auction_period=0.1, horizon=0.3))
    assert res.skipped_auctions == 3
    assert all(a.volume == 0.0 for a in res.auctions)


def test_snapshots_after_burn_in():
    grid = PriceGrid(-2.0, 2.0, 20)
    res = simulate(cfg(auction_period=0.1, horizon=1.0, burn_in=0.5, snapshot_grid=grid))
    times = [t for t, _ in res.snapshots]
    assert times[0] == pytest.approx(0.5) and len(times) == 6
    assert res.mean_snapshot().grid is grid


# --- prices and diffusivity ----------------------------------------------------------------

def test_variance_ratio_example():
    x = np.array([1.0, -1.0, 1.0, -1.0])
    r, se = variance_ratio(2 * x, x)
    assert r == 4.0 and se == 0.0
    with pytest.raises(ConfigurationError):
        variance_ratio(x, np.zeros(4))


def test_path_seeds_reproducible_and_distinct():
    a = path_seeds(7, 50)
    assert a == path_seeds(7, 50)
    assert len(set(a)) == 50
    assert all(0 <= s < 2 ** 64 for s in a)


def test_market_price_has_no_drift():
    c = cfg(params=ModelParams(1.0, Constant(1.0), Constant(0.0), sigma=1.0),
            beta_distribution=Distribution("normal", 1.0, 0.25), horizon=1.0,
            record_events=False, rng_seed=3)
    pairs, rep = price_paths(c, 300)
    err = np.array([p.p_mkt[-1] - p.p_fund[-1] for p in pairs])
    assert abs(err.mean()) < 4 * err.std(ddof=1) / math.sqrt(len(err))
    # the common error has variance Var(beta) per unit news variance
    assert rep.pricing_error_ratio == pytest.approx(0.25, abs=4 * rep.pricing_error_se)
    assert rep.excess_volatility_ratio == pytest.approx(1.25, abs=4 * rep.excess_volatility_se)
    with pytest.raises(ConfigurationError):
        price_paths(c, 1)


def test_measured_diffusivity_matches_formula():
    c = cfg(params=STEP.replace(sigma=1.0), beta_distribution=Distribution("normal", 1.0, 0.25),
            sigma_i_distribution=Distribution.constant(0.5), rng_seed=9)
    m = measure_diffusivity(c, n_tracers=500, n_replicas=100, duration=1.0)
    assert m.formula == pytest.approx(0.25)
    assert m.measured == pytest.approx(m.formula, abs=4 * m.se)
    assert np.all(np.diff(m.msd) > 0)


def test_hydrodynamic_params():
    c = cfg(params=STEP.replace(sigma=1.0), sigma_i_distribution=Distribution.constant(1.0),
            window=(-3.0, 4.0), auction_period=0.1)
    p = hydrodynamic_params(c)
    assert p.diffusivity == pytest.approx(0.5)
    assert p.tau == pytest.approx(0.1)
    assert p.deposition.evaluate(SELL, 4.5) == 0.0
    assert p.deposition.evaluate(SELL, 3.5) == pytest.approx(1.0)
    assert p.deposition.evaluate(BUY, -3.5) == 0.0
