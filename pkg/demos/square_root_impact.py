"""Crossover from linear to square-root impact.

Tabulates the rescaled impact Y(q) of an extra buy volume and checks it
against the measured impact in a simulated steady auction cycle.

    python demos/square_root_impact.py
"""
import math

from latentbook.analytics import impact_full, impact_scaling_Y, liquidity_L
from latentbook.auction import impact, steady_cycle
from latentbook.evolution import EvolutionConfig
from latentbook.msd import Constant, ModelParams, PriceGrid, StepPair

print(f"{'q':>10} {'Y(q)':>10} {'Y/q':>8} {'Y/sqrt(2q)':>11}")
for q in (1e-4, 1e-2, 1.0, 1e2, 1e4):
    y = impact_scaling_Y(q)
    print(f"{q:10.0e} {y:10.4f} {y / q:8.4f} {y / math.sqrt(2 * q):11.4f}")

params = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0))
tau = 1e-4
L = liquidity_L(params)
cyc = steady_cycle(params.replace(tau=tau), PriceGrid.symmetric(8.0, math.sqrt(tau) / 10),
                   EvolutionConfig(tau / 20))
v = cyc.outcome.v_star
print(f"\nsteady cycle at tau = {tau:g}: v* = {v:.3e}")
print(f"{'Q/v*':>6} {'measured':>10} {'universal':>10} {'sqrt(2Q/L)':>11}")
for k in (0.1, 1, 10, 100, 300):
    Q = k * v
    print(f"{k:6g} {impact(cyc.pre_curve, Q):10.5f} "
          f"{impact_full(Q, L, 1.0, tau):10.5f} {math.sqrt(2 * Q / L):11.5f}")
