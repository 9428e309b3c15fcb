import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from latentbook.analytics import kyle_lambda, liquidity_L, stationary_closed_form
from latentbook.auction import (AuctionSeries, clear, clear_with_extra, impact,
                                kyle_lambda_fd, run_auction_sequence, steady_cycle, truncate)
from latentbook.errors import ConfigurationError, EmptyMarketError, SaturationError
from latentbook.evolution import EvolutionConfig, stationary_numeric
from latentbook.msd import (Constant, ExponentialPair, ModelParams, MsdCurve, PriceGrid,
                            StepPair, cumulative_demand, cumulative_supply)

GRID = PriceGrid(-2, 2, 80)
STEP = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0))


def book(draw_s, draw_d):
    return MsdCurve(GRID, draw_s, draw_d)


positive = arrays(np.float64, 81, elements=st.floats(0.01, 5))


# --- clearing -------------------------------------------------------------------

def test_symmetric_book_clears_at_zero():
    rng = np.random.default_rng(0)
    rs = rng.random(81) + 0.1
    y_star, v = clear(MsdCurve(GRID, rs, rs[::-1]))
    assert y_star == pytest.approx(0.0, abs=1e-12)
    assert v == pytest.approx(cumulative_supply(MsdCurve(GRID, rs, rs[::-1]), 0.0))


def test_exponential_clearing_price():
    # wide grid: a cut at |y| = 4 shifts the crossing by about 1e-2
    grid = PriceGrid(-14, 14, 28000)
    p = ModelParams(1.0, Constant(2.0), ExponentialPair(math.e, 1.0, 1.0))
    y_star, _ = clear(stationary_closed_form(p, grid))
    assert y_star == pytest.approx(0.5, rel=1e-3)


def test_exponential_clearing_volume():
    grid = PriceGrid(-12, 12, 24000)
    p = ModelParams(1.0, Constant(2.0), ExponentialPair(1.7, 1.7, 1.0))
    # the grid cuts the tails at exp(-12) of the volume
    _, v = clear(stationary_closed_form(p, grid))
    assert v == pytest.approx(1.7, rel=1e-3)


@given(positive, positive, st.floats(-0.5, 0.5))
def test_clear_matches_dense_resampling_oracle(rs, rd, q):
    c = book(rs, rd)
    try:
        y = clear_with_extra(c, q).y_star
    except (SaturationError, EmptyMarketError):
        return
    ref = oracles.dense_clear(GRID.nodes, rs, rd, q)
    assert y == pytest.approx(ref, abs=1e-6)


def test_empty_side_raises():
    ones = np.ones(81)
    with pytest.raises(EmptyMarketError):
        clear(MsdCurve(GRID, ones, np.zeros(81)))


def test_no_crossing_raises():
    # all supply above all demand: S - D < 0 everywhere
    rs = np.where(GRID.nodes > 1.9, 1.0, 0.0)
    rd = np.where(GRID.nodes < -1.9, 1.0, 0.0)
    y, _ = clear(MsdCurve(GRID, rs, rd))
    # densities vanish in between: any price there clears zero volume
    assert -1.9 <= y <= 1.9


def test_saturation_reports_fillable_volume():
    rs = np.ones(81)
    c = MsdCurve(GRID, rs, rs)
    with pytest.raises(SaturationError) as err:
        clear_with_extra(c, 10.0)
    assert err.value.max_fillable == pytest.approx(c.total_supply())
    with pytest.raises(SaturationError) as err:
        clear_with_extra(c, -10.0)
    assert err.value.max_fillable == pytest.approx(-c.total_demand())


def test_zero_extra_is_plain_clear():
    rng = np.random.default_rng(5)
    c = book(rng.random(81) + 0.1, rng.random(81) + 0.1)
    out = clear_with_extra(c, 0.0)
    assert (out.y_star, out.v_star) == pytest.approx(clear(c), rel=1e-15)


# --- truncation -----------------------------------------------------------------

def test_truncation_below_all_mass_keeps_supply():
    rs = np.where(GRID.nodes > 0.5, 1.0, 0.0)
    c = MsdCurve(GRID, rs, np.ones(81))
    out = truncate(c, -1.0)
    np.testing.assert_array_equal(out.rho_s, c.rho_s)


def test_symmetric_truncation_removes_equal_mass():
    rng = np.random.default_rng(6)
    rs = rng.random(81)
    c = MsdCurve(GRID, rs, rs[::-1])
    out = truncate(c, 0.0)
    removed_s = c.total_supply() - out.total_supply()
    removed_d = c.total_demand() - out.total_demand()
    assert removed_s == pytest.approx(removed_d, rel=1e-12)


def test_truncated_stationary_step_has_no_supply_below_price():
    grid = PriceGrid(-6, 6, 600)
    out = truncate(stationary_closed_form(STEP, grid), 0.0)
    assert cumulative_supply(out, 0.0) == 0.0
    assert cumulative_demand(out, 0.0) == 0.0


@given(positive, positive, st.floats(-1.9, 1.9))
def test_truncation_removes_exact_volumes(rs, rd, y):
    c = book(rs, rd)
    out = truncate(c, y)
    removed_s = c.total_supply() - out.total_supply()
    removed_d = c.total_demand() - out.total_demand()
    assert removed_s == pytest.approx(cumulative_supply(c, y), rel=1e-10, abs=1e-12)
    assert removed_d == pytest.approx(cumulative_demand(c, y), rel=1e-10, abs=1e-12)
    # nothing survives on the wrong side of the cut
    assert np.all(out.rho_s[GRID.nodes <= y] == 0.0)
    assert np.all(out.rho_d[GRID.nodes >= y] == 0.0)


@given(positive, st.floats(-1.5, 1.5), st.floats(1e-9, 1e-3))
def test_truncation_continuous_in_cut(rs, y, h):
    c = book(rs, rs)
    a, b = truncate(c, y), truncate(c, y + h)
    assert np.max(np.abs(a.rho_s - b.rho_s)) <= 2 * np.max(rs) * h / GRID.dy + 1e-9


# --- auction invariants -----------------------------------------------------------

@given(positive, positive)
def test_auction_conserves_volume(rs, rd):
    c = book(rs, rd)
    out = clear_with_extra(c, 0.0)
    removed_s = c.total_supply() - out.post_curve.total_supply()
    removed_d = c.total_demand() - out.post_curve.total_demand()
    scale = max(c.total_supply(), c.total_demand())
    assert abs(removed_s - out.v_star) <= 1e-8 * scale
    assert abs(removed_d - out.v_star) <= 1e-8 * scale


@given(positive, positive, st.lists(st.floats(-0.5, 0.5), min_size=2, max_size=8))
def test_impact_monotone_in_volume(rs, rd, qs):
    c = book(rs, rd)
    ys = []
    for q in sorted(qs):
        try:
            ys.append(clear_with_extra(c, q).y_star)
        except SaturationError:
            return
    assert np.all(np.diff(ys) >= -1e-12)


@given(positive, st.floats(0.0, 0.5))
def test_impact_antisymmetric_for_symmetric_books(rs, q):
    c = book(rs, rs[::-1].copy())
    assert impact(c, -q) == pytest.approx(-impact(c, q), abs=1e-10)


def test_walrasian_impact_slope_is_lambda():
    grid = PriceGrid(-10, 10, 4000)
    for p in (STEP.replace(deposition=StepPair(2.0, 2.0), cancellation=Constant(0.2)),
              ModelParams(1.0, Constant(2.0), ExponentialPair(1.0, 1.0, 1.0))):
        c = stationary_closed_form(p, grid)
        lam = kyle_lambda_fd(c, 1e-4 * clear(c)[1])
        assert lam == pytest.approx(kyle_lambda(p), rel=1e-2)


# --- sequences -----------------------------------------------------------------------

def test_symmetric_sequence_clears_at_zero():
    grid = PriceGrid.symmetric(6, 0.02)
    s = run_auction_sequence(MsdCurve.zeros(grid), STEP.replace(tau=0.1),
                             EvolutionConfig(0.005), 30)
    assert all(abs(o.y_star) < 1e-12 for o in s.outcomes)
    assert len(s.outcomes) == 30


def test_sequence_validation():
    with pytest.raises(ConfigurationError):
        run_auction_sequence(MsdCurve.zeros(GRID), STEP.replace(tau=0.1), EvolutionConfig(0.01), 0)
    with pytest.raises(ConfigurationError):
        run_auction_sequence(MsdCurve.zeros(GRID), STEP, EvolutionConfig(0.01), 3)
    with pytest.raises(ConfigurationError):
        run_auction_sequence(MsdCurve.zeros(GRID), STEP.replace(tau=0.1), EvolutionConfig(0.2), 3)


def test_rare_auctions_see_the_walrasian_book():
    grid = PriceGrid(-8, 8, 800)
    p = STEP.replace(tau=20.0)
    s = run_auction_sequence(MsdCurve.zeros(grid), p, EvolutionConfig(0.05), 3)
    ref = stationary_numeric(p, grid)
    assert np.max(np.abs(s.last.pre_curve.rho_s - ref.rho_s)) < 1e-3 * ref.rho_s.max()


def test_steady_cycle_matches_iterated_sequence():
    tau = 0.05
    p = STEP.replace(tau=tau)
    grid = PriceGrid.symmetric(8, math.sqrt(tau) / 10)
    cfg = EvolutionConfig(tau / 20)
    cyc = steady_cycle(p, grid, cfg)
    seq = run_auction_sequence(MsdCurve.zeros(grid), p, cfg, 5000, stop_at_cycle=True)
    assert seq.converged_at is not None
    scale = cyc.pre_curve.rho_s.max()
    # the iterated sequence stops at a 1e-6 change per auction
    assert np.max(np.abs(seq.last.pre_curve.rho_s - cyc.pre_curve.rho_s)) < 1e-3 * scale
    assert cyc.cycle_change < 1e-8


def test_asymmetric_flow_falls_back_to_iteration():
    tau = 0.2
    p = ModelParams(1.0, Constant(1.0), StepPair(1.0, 0.6), tau=tau)
    grid = PriceGrid.symmetric(8, 0.05)
    cyc = steady_cycle(p, grid, EvolutionConfig(0.01))
    assert cyc.gmres_iterations == 0
    assert cyc.cycle_change < 1e-6
    assert cyc.outcome.y_star > 0  # more buyers than sellers


@pytest.mark.parametrize("tau", [1e-2, 1e-3])
def test_frequent_auction_volume(tau):
    grid = PriceGrid.symmetric(8, math.sqrt(tau) / 10)
    cyc = steady_cycle(STEP.replace(tau=tau), grid, EvolutionConfig(tau / 20))
    ratio = cyc.outcome.v_star / (liquidity_L(STEP) * tau)
    assert 0.9 <= ratio <= 1.0
    if tau == 1e-3:
        assert 0.93 <= ratio


def test_series_csv(tmp_path):
    grid = PriceGrid.symmetric(4, 0.05)
    s = run_auction_sequence(MsdCurve.zeros(grid), STEP.replace(tau=0.5),
                             EvolutionConfig(0.05), 2)
    assert isinstance(s, AuctionSeries)
    text = s.to_csv(tmp_path / "a.csv")
    lines = text.splitlines()
    assert lines[0] == "auction_index,time,y_star,v_star,q_extra"
    assert lines[2].startswith("1,1.0,")
    assert (tmp_path / "a.csv").read_text() == text
