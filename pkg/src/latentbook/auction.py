"""Batch-auction clearing, truncation and repeated-auction sequences."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lapack
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import (ConfigurationError, EmptyMarketError, NumericalError,
                     SaturationError)
from .evolution import EvolutionConfig, Evolver
from .msd import (Constant, ModelParams, MsdCurve, PriceGrid, cumulative_demand,
                  cumulative_supply, is_symmetric_flow)

CLEAR_TOL = 1e-10
CYCLE_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class AuctionOutcome:
    y_star: float
    v_star: float
    q_extra: float
    pre_curve: MsdCurve
    post_curve: MsdCurve


def _cell_root(g0, a, b, dy):
    """Root in ``[0, dy]`` of ``g0 + a s + b s^2`` with ``g0 <= 0``."""
    if g0 == 0.0:
        return 0.0
    disc = a * a - 4.0 * b * g0
    if disc < 0:
        disc = 0.0
    denom = a + math.sqrt(disc)
    if denom <= 0:
        return dy
    return min(max(-2.0 * g0 / denom, 0.0), dy)


def _solve_crossing(curve: MsdCurve, q: float):
    grid = curve.grid
    S = curve.supply_nodes()
    D = curve.demand_nodes()
    G = S - D - q
    scale = max(S[-1], D[0], abs(q), 1e-300)
    if np.any(np.diff(G) < -1e-12 * scale):
        raise NumericalError("S - D is not monotone; densities must be non-negative")
    if G[0] > 0 or G[-1] < 0:
        if q > 0:
            raise SaturationError(
                f"extra buy volume {q} exceeds total supply {S[-1]}", S[-1])
        if q < 0:
            raise SaturationError(
                f"extra sell volume {-q} exceeds total demand {D[0]}", -D[0])
        raise EmptyMarketError("supply and demand do not cross on the grid")
    if q == 0 and (S[-1] <= 0 or D[0] <= 0):
        raise EmptyMarketError("one side of the market is empty")
    k = int(np.searchsorted(G, 0.0, side="left"))
    if k == 0:
        return grid.y_min, S, D
    k -= 1
    dy = grid.dy
    rs, rd = curve.rho_s, curve.rho_d
    a = rs[k] + rd[k]
    b = (rs[k + 1] - rs[k] + rd[k + 1] - rd[k]) / (2.0 * dy)
    s = _cell_root(G[k], a, b, dy)
    y_star = grid.y_min + k * dy + s
    resid = G[k] + a * s + b * s * s
    if abs(resid) > CLEAR_TOL * scale:
        # polish by bisection on the exact in-cell quadratic
        lo, hi = 0.0, dy
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if G[k] + a * mid + b * mid * mid < 0:
                lo = mid
            else:
                hi = mid
        y_star = grid.y_min + k * dy + 0.5 * (lo + hi)
    return y_star, S, D


def clear(curve: MsdCurve):
    """Clearing offset ``y*`` (root of ``S = D``) and volume ``v* = S(y*)``."""
    y_star, _, _ = _solve_crossing(curve, 0.0)
    return y_star, cumulative_supply(curve, y_star)


def truncate(curve: MsdCurve, y_star: float) -> MsdCurve:
    """Remove supply at and below ``y*`` and demand at and above it.

    Exactly ``S(y*)`` supply and ``D(y*)`` demand are removed.  The
    surviving part of the cell containing ``y*`` is carried by the first
    surviving node and its neighbour, with weights chosen so that the
    result depends continuously on ``y*``.
    """
    grid = curve.grid
    y = grid.nodes
    dy = grid.dy
    n = grid.n
    rs = np.array(curve.rho_s)
    rd = np.array(curve.rho_d)

    k = int(np.searchsorted(y, y_star, side="right"))  # first node > y*
    if k > n:
        rs[:] = 0.0
    elif k > 0:
        theta = (y[k] - y_star) / dy
        r0, r1 = curve.rho_s[k - 1], curve.rho_s[k]
        kept = dy * (theta * r1 - 0.5 * (r1 - r0) * theta * theta)
        rs[:k] = 0.0
        if k < n:
            rs[k] = kept / dy + 0.5 * theta * r1
            # the end node carries half a cell, so it takes twice the density
            end = 2.0 if k + 1 == n else 1.0
            rs[k + 1] += 0.5 * end * (1.0 - theta) * r1
        else:
            rs[k] = 2.0 * kept / dy

    k = int(np.searchsorted(y, y_star, side="left")) - 1  # last node < y*
    if k < 0:
        rd[:] = 0.0
    elif k < n:
        theta = (y_star - y[k]) / dy
        r0, r1 = curve.rho_d[k], curve.rho_d[k + 1]
        kept = dy * (theta * r0 + 0.5 * (r1 - r0) * theta * theta)
        rd[k + 1:] = 0.0
        if k > 0:
            rd[k] = kept / dy + 0.5 * theta * r0
            end = 2.0 if k - 1 == 0 else 1.0
            rd[k - 1] += 0.5 * end * (1.0 - theta) * r0
        else:
            rd[k] = 2.0 * kept / dy
    return MsdCurve(grid, rs, rd)


def clear_with_extra(curve: MsdCurve, q: float = 0.0) -> AuctionOutcome:
    """Clear with an extra inelastic volume ``q`` (buy if positive)."""
    y_star, _, _ = _solve_crossing(curve, float(q))
    sold = cumulative_supply(curve, y_star)
    bought = cumulative_demand(curve, y_star)
    post = truncate(curve, y_star)
    return AuctionOutcome(y_star, max(sold, bought), float(q), curve, post)


def impact(curve: MsdCurve, q: float) -> float:
    """Price impact ``y*(q) - y*(0)`` of an extra volume on ``curve``."""
    return clear_with_extra(curve, q).y_star - clear(curve)[0]


def kyle_lambda_fd(curve: MsdCurve, dq: float) -> float:
    """Impact slope by central difference ``(y*(dq) - y*(-dq)) / (2 dq)``."""
    up = clear_with_extra(curve, dq).y_star
    down = clear_with_extra(curve, -dq).y_star
    return (up - down) / (2.0 * dq)


def relative_change(a: MsdCurve, b: MsdCurve) -> float:
    scale = max(float(np.max(a.rho_s)), float(np.max(a.rho_d)), 1e-300)
    return max(float(np.max(np.abs(a.rho_s - b.rho_s))),
               float(np.max(np.abs(a.rho_d - b.rho_d)))) / scale


@dataclass(eq=False)
class AuctionSeries:
    """Outcomes of an auction sequence.

    ``converged_at`` is the first auction index whose pre-auction curve
    differs from the previous one by less than the cycle tolerance.
    """

    tau: float
    outcomes: list = field(default_factory=list)
    changes: list = field(default_factory=list)
    converged_at: int | None = None

    @property
    def last(self) -> AuctionOutcome:
        return self.outcomes[-1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["auction_index", "time", "y_star", "v_star", "q_extra"])
        for i, o in enumerate(self.outcomes):
            w.writerow([i, repr((i + 1) * self.tau), repr(o.y_star),
                        repr(o.v_star), repr(o.q_extra)])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def run_auction_sequence(initial: MsdCurve, params: ModelParams,
                         config: EvolutionConfig, n_auctions: int,
                         q_extra: float = 0.0, stop_at_cycle: bool = False,
                         cycle_tol: float = CYCLE_TOL) -> AuctionSeries:
    """Alternate free evolution over ``tau`` with clearing and truncation.

    ``q_extra`` is injected at the first auction only.
    """
    if n_auctions < 1:
        raise ConfigurationError("n_auctions must be >= 1")
    tau = params.tau
    if not tau > 0:
        raise ConfigurationError("auction sequences need tau > 0")
    if config.dt > tau * (1 + 1e-12):
        raise ConfigurationError("dt must not exceed tau")
    ev = Evolver(initial.grid, params, config, auctions=True)
    series = AuctionSeries(tau)
    post = initial
    prev_pre = None
    for i in range(n_auctions):
        pre = ev.advance(post, tau)
        outcome = clear_with_extra(pre, q_extra if i == 0 else 0.0)
        series.outcomes.append(outcome)
        post = outcome.post_curve
        if prev_pre is not None:
            change = relative_change(prev_pre, pre)
            series.changes.append(change)
            if series.converged_at is None and change < cycle_tol:
                series.converged_at = i
                if stop_at_cycle:
                    break
        prev_pre = pre
    return series


# --- steady cycle ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SteadyCycle:
    """Pre-auction curve of the tau-periodic regime and its auction."""

    tau: float
    pre_curve: MsdCurve
    outcome: AuctionOutcome
    cycle_change: float
    gmres_iterations: int


def _truncate_supply_at_zero(rho, i0):
    out = np.array(rho)
    out[i0 + 1] = rho[i0 + 1] + 0.5 * rho[i0]
    out[:i0 + 1] = 0.0
    return out


def _period_preconditioner(side, tau):
    """Approximate inverse of ``I - exp(tau A)`` from its (1,1) Pade form.

    ``I - exp(tau A) ~ (-tau A) (I - tau A / 2)^{-1}``, so the inverse needs
    one tridiagonal solve and one tridiagonal product.  Without it the
    slowly relaxing far-field modes make GMRES iterations grow like 1/tau.
    """
    if np.any(side.nu <= 0) and side.boundary == "zero_flux":
        return lambda z: z
    lo, d, up = side.bands(0.0, -tau)
    dl, dd, du, du2, ipiv, info = lapack.dgttrf(lo, d, up)
    if info != 0:
        return lambda z: z
    plo, pd, pup = side.bands(1.0, -0.5 * tau)

    def apply(z):
        y, _ = lapack.dgttrs(dl, dd, du, du2, ipiv, z)
        out = pd * y
        out[:-1] += pup * y[1:]
        out[1:] += plo * y[:-1]
        return out
    return apply


def steady_cycle(params: ModelParams, grid: PriceGrid, config: EvolutionConfig,
                 tol: float = 1e-10, maxiter: int = 2000, restart: int = 100,
                 fallback_auctions: int = 20000) -> SteadyCycle:
    """Pre-auction book of the periodic regime reached after many auctions.

    For symmetric order flow the clearing price stays at 0, so one period
    (truncate at 0, then evolve over tau) is an affine map of the supply
    density; its fixed point is found with GMRES.  Other flows fall back
    to iterating the auction sequence until the cycle criterion holds.
    The returned ``cycle_change`` is the relative change of the pre-auction
    curve over one more explicit period.
    """
    tau = params.tau
    if not tau > 0:
        raise ConfigurationError("steady_cycle needs tau > 0")
    i0 = grid.index_of_zero()
    ev = Evolver(grid, params, config, auctions=True)
    if not (is_symmetric_flow(params.deposition)
            and is_symmetric_flow(params.cancellation) and i0 is not None
            and np.isclose(grid.y_min, -grid.y_max)):
        start = MsdCurve.zeros(grid)
        series = run_auction_sequence(start, params, config, fallback_auctions,
                                      stop_at_cycle=True)
        if series.converged_at is None:
            raise NumericalError("auction sequence did not reach a steady cycle")
        pre = series.last.pre_curve
        return SteadyCycle(tau, pre, series.last, series.changes[-1], 0)

    side = ev.supply
    zero = np.zeros(grid.n + 1)
    # affine part: one period started from an empty post-auction book
    b = ev._advance_side(side, zero, tau)
    # linear part: same scheme and boundary type, no deposition, zero pins
    hom_config = EvolutionConfig(config.dt, config.scheme, ev.boundary,
                                 config.damping_steps)
    hom = Evolver(grid, params.replace(deposition=Constant(0.0)), hom_config,
                  auctions=True)
    hside = hom.supply
    if hom.boundary != ev.boundary:
        raise NumericalError("boundary mismatch between affine and linear parts")

    def period(x):
        return hom._advance_side(hside, _truncate_supply_at_zero(x, i0), tau)

    n = grid.n + 1
    precond = _period_preconditioner(hside, tau)
    op = LinearOperator((n, n), matvec=lambda z: (lambda x: x - period(x))(precond(z)),
                        dtype=float)
    counter = {"it": 0}

    def cb(_):
        counter["it"] += 1

    z, info = gmres(op, b, rtol=tol, atol=0.0, restart=restart, maxiter=maxiter,
                    callback=cb, callback_type="pr_norm")
    if info != 0:
        raise NumericalError(f"GMRES failed to find the steady cycle (info={info})")
    x = precond(z)
    rho_s = np.maximum(x, 0.0)
    pre = MsdCurve(grid, rho_s, rho_s[::-1].copy())
    outcome = clear_with_extra(pre, 0.0)
    nxt = ev.advance(outcome.post_curve, tau)
    return SteadyCycle(tau, pre, outcome, relative_change(pre, nxt), counter["it"])
