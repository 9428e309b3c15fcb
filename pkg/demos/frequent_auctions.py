"""Book shape and liquidity under frequent batch auctions.

Runs the periodic auction regime for step order flow at decreasing auction
periods and compares it with the universal shape near the price: the
auction volume approaches L D tau and the impact slope grows like
1/sqrt(tau).

    python demos/frequent_auctions.py
"""
import math

import numpy as np

from latentbook.analytics import frequent_auction_report, liquidity_L
from latentbook.auction import kyle_lambda_fd, steady_cycle
from latentbook.evolution import EvolutionConfig
from latentbook.msd import Constant, ModelParams, PriceGrid, StepPair
from latentbook.wiener_hopf import solve_fixed_point

params = ModelParams(1.0, Constant(1.0), StepPair(1.0, 1.0))
L = liquidity_L(params)
sol = solve_fixed_point()
print(f"universal shape: intercept u0 = {sol.u0:.4f}, residual {sol.residual:.1e}")

taus = [1e-2, 1e-3, 1e-4]
lams = []
print(f"\n{'tau':>8} {'v*/(L D tau)':>14} {'lambda':>10} {'lambda sqrt(tau)':>18} {'affine book':>12}")
for tau in taus:
    grid = PriceGrid.symmetric(8.0, math.sqrt(tau) / 10)
    cyc = steady_cycle(params.replace(tau=tau), grid, EvolutionConfig(tau / 20))
    v = cyc.outcome.v_star
    lam = kyle_lambda_fd(cyc.pre_curve, 1e-3 * v)
    lams.append(lam)
    pred = frequent_auction_report(params, tau).lam
    print(f"{tau:8.0e} {v / (L * tau):14.4f} {lam:10.3f} {lam * math.sqrt(tau):18.4f} "
          f"{pred * math.sqrt(tau):12.4f}")

slope = np.polyfit(np.log(taus), np.log(lams), 1)[0]
print(f"\nlog-log slope of lambda against tau: {slope:.3f}")
# the affine book puts the owning-side density at the price at u0 in scaled
# units, while the full shape has phi(0) = 1; with the wrong-side density
# 1/sqrt(pi) + u0/2 this moves lambda sqrt(tau) from 0.5555 to the value below
print(f"full-shape limit of lambda sqrt(tau): {1 / (sol.phi[0] + 1 / math.sqrt(math.pi) + sol.u0 / 2):.4f}")
