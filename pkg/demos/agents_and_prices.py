"""Agents behind the book.

Simulates heterogeneous agents revising reservation prices, compares the
time-averaged book with the hydrodynamic PDE cycle, and measures how far
the market price strays from the fundamental price when news
sensitivities differ.

    python demos/agents_and_prices.py
"""
import numpy as np

from latentbook.agents import (Distribution, SimConfig, hydrodynamic_params, price_paths,
                               simulate)
from latentbook.auction import steady_cycle
from latentbook.evolution import EvolutionConfig
from latentbook.msd import Constant, ModelParams, PriceGrid, StepPair

params = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0), tau=0.1)
grid = PriceGrid(-2.0, 2.0, 40)
base = SimConfig(params, 1.0, 0.01, 55.0, sigma_i_distribution=Distribution.constant(1.0),
                 window=(-6.0, 6.0), snapshot_grid=grid, burn_in=5.0, record_events=False,
                 rng_seed=7)
ref = steady_cycle(hydrodynamic_params(base), PriceGrid.symmetric(9.0, 0.01),
                   EvolutionConfig(0.1 / 20)).pre_curve
rs = np.interp(grid.nodes, ref.grid.nodes, ref.rho_s)
rd = np.interp(grid.nodes, ref.grid.nodes, ref.rho_d)
print("granularity eps  L1 distance to the PDE book")
for eps in (1.0, 0.25, 0.0625):
    m = simulate(base.replace(epsilon=eps)).mean_snapshot()
    err = grid.dy * (np.abs(m.rho_s - rs).sum() + np.abs(m.rho_d - rd).sum())
    print(f"{eps:15g}  {err:.3f}")

news = SimConfig(ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0), sigma=1.0), 0.01, 0.01,
                 1.0, beta_distribution=Distribution("normal", 1.0, 0.25),
                 record_events=False, rng_seed=11)
_, rep = price_paths(news, 100)
print("\nnews sensitivities with variance 0.25, 100 paths")
print(rep.to_text(), end="")
