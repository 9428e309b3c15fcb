"""Microscopic Monte Carlo model of the latent book.

Trading intentions of unit volume ``epsilon`` are deposited, cancelled and
revised at random; batch auctions match the crossing part of the book at
regular intervals.  As ``epsilon -> 0`` the empirical densities follow the
reaction-diffusion equation solved by :mod:`latentbook.evolution`.

Reservation prices are stored as absolute prices.  Each intention ``i``
carries a quenched news sensitivity ``beta_i`` (mean 1) and an
idiosyncratic volatility ``Sigma_i``.  A news increment ``d xi`` moves it by
``(c_t + beta_i) d xi + Sigma_i sqrt(dt) eta_i`` where ``c_t`` is a common
reaction error shared by everybody at time ``t``.  The market price moves
by the population average ``(c_t + mean(beta)) d xi`` and the fundamental
price by ``d xi``.  Cross-sectional dispersion of ``beta_i`` feeds the
diffusivity of the book; the common error ``c_t`` is what separates the
market price from the fundamental one.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NormalizationError
from .msd import (BUY, SELL, Constant, ExponentialPair, ModelParams, MsdCurve,
                  PriceGrid, StepPair, Tabulated)

log = logging.getLogger(__name__)

STREAMS = ("initial", "deposition", "cancellation", "revision", "news", "reaction")
DT_NU_LIMIT = 0.1


# --- distributions ------------------------------------------------------------

@dataclass(frozen=True)
class Distribution:
    """Scalar law given by its mean and variance.

    ``kind`` is ``"constant"`` (variance 0), ``"normal"``, ``"uniform"``
    (symmetric about the mean) or ``"gamma"`` (non-negative support).
    """

    kind: str = "constant"
    mean: float = 1.0
    var: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant", "normal", "uniform", "gamma"):
            raise ConfigurationError(f"unknown distribution kind {self.kind!r}")
        if not (np.isfinite(self.mean) and np.isfinite(self.var)) or self.var < 0:
            raise ConfigurationError("distribution needs finite mean and var >= 0")
        if self.kind == "constant" and self.var != 0:
            raise ConfigurationError("a constant distribution has zero variance")
        if self.kind == "gamma" and self.var > 0 and not self.mean > 0:
            raise ConfigurationError("gamma distribution needs mean > 0")

    @classmethod
    def constant(cls, value: float) -> "Distribution":
        return cls("constant", float(value), 0.0)

    @property
    def second_moment(self) -> float:
        return self.mean ** 2 + self.var

    @property
    def lower(self) -> float:
        """Lower end of the support."""
        if self.var == 0 or self.kind == "constant":
            return self.mean
        if self.kind == "uniform":
            return self.mean - math.sqrt(3.0 * self.var)
        if self.kind == "gamma":
            return 0.0
        return -math.inf

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.var == 0:
            return np.full(n, self.mean)
        if self.kind == "normal":
            return rng.normal(self.mean, math.sqrt(self.var), n)
        if self.kind == "uniform":
            h = math.sqrt(3.0 * self.var)
            return rng.uniform(self.mean - h, self.mean + h, n)
        shape = self.mean ** 2 / self.var
        return rng.gamma(shape, self.var / self.mean, n)


def effective_diffusivity(beta_distribution: Distribution,
                          sigma_i_distribution: Distribution, sigma: float) -> float:
    """Book diffusivity ``(E[Sigma_i^2] + sigma^2 Var(beta)) / 2``."""
    return 0.5 * (sigma_i_distribution.second_moment
                  + sigma ** 2 * beta_distribution.var)


def consensus_price(estimates, shares) -> float:
    """Market-share weighted average of individual price estimates."""
    estimates = np.asarray(estimates, dtype=float)
    shares = np.asarray(shares, dtype=float)
    if estimates.shape != shares.shape or estimates.ndim != 1 or len(shares) == 0:
        raise NormalizationError("estimates and shares must be 1-d of equal length")
    if np.any(shares < 0) or abs(shares.sum() - 1.0) > 1e-12:
        raise NormalizationError(
            f"market shares must be >= 0 and sum to 1 (sum = {shares.sum()!r})")
    return float(shares @ estimates)


# --- population ---------------------------------------------------------------

@dataclass
class Population:
    """Live intentions.  ``is_buy``, ``price``, ``beta``, ``sigma_i`` and
    ``volume`` are parallel arrays; ``center`` is the market price estimate
    used as the origin of offsets ``y = price - center``."""

    is_buy: np.ndarray
    price: np.ndarray
    beta: np.ndarray
    sigma_i: np.ndarray
    volume: np.ndarray
    center: float = 0.0

    @classmethod
    def empty(cls, center: float = 0.0) -> "Population":
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=bool), z, z.copy(), z.copy(), z.copy(), center)

    @classmethod
    def from_offsets(cls, buy_y, sell_y, epsilon: float, beta=1.0, sigma_i=0.0,
                     center: float = 0.0) -> "Population":
        buy_y = np.atleast_1d(np.asarray(buy_y, dtype=float))
        sell_y = np.atleast_1d(np.asarray(sell_y, dtype=float))
        n = len(buy_y) + len(sell_y)
        return cls(np.r_[np.ones(len(buy_y), bool), np.zeros(len(sell_y), bool)],
                   center + np.r_[buy_y, sell_y],
                   np.broadcast_to(np.asarray(beta, float), (n,)).copy(),
                   np.broadcast_to(np.asarray(sigma_i, float), (n,)).copy(),
                   np.full(n, float(epsilon)), center)

    def __len__(self):
        return len(self.price)

    @property
    def y(self) -> np.ndarray:
        return self.price - self.center

    def keep(self, mask) -> None:
        self.is_buy = self.is_buy[mask]
        self.price = self.price[mask]
        self.beta = self.beta[mask]
        self.sigma_i = self.sigma_i[mask]
        self.volume = self.volume[mask]

    def append(self, is_buy, price, beta, sigma_i, volume) -> None:
        self.is_buy = np.r_[self.is_buy, is_buy]
        self.price = np.r_[self.price, price]
        self.beta = np.r_[self.beta, beta]
        self.sigma_i = np.r_[self.sigma_i, sigma_i]
        self.volume = np.r_[self.volume, volume]

    def copy(self) -> "Population":
        return Population(self.is_buy.copy(), self.price.copy(), self.beta.copy(),
                          self.sigma_i.copy(), self.volume.copy(), self.center)

    def mirrored(self) -> "Population":
        """Swap sides and reflect offsets about the center."""
        return Population(~self.is_buy, 2.0 * self.center - self.price,
                          self.beta.copy(), self.sigma_i.copy(), self.volume.copy(),
                          self.center)


def empirical_msd(population: Population, grid: PriceGrid) -> MsdCurve:
    """Volume histogram per side divided by the bin width.

    Bins have width ``dy`` and are centred on the grid nodes; intentions
    outside ``[y_min - dy/2, y_max + dy/2)`` are ignored.
    """
    dy = grid.dy
    edges = np.linspace(grid.y_min - 0.5 * dy, grid.y_max + 0.5 * dy, grid.n + 2)
    y = population.y
    sell = ~population.is_buy
    rs, _ = np.histogram(y[sell], edges, weights=population.volume[sell])
    rd, _ = np.histogram(y[~sell], edges, weights=population.volume[~sell])
    return MsdCurve(grid, rs / dy, rd / dy)


def time_average(curves) -> MsdCurve:
    """Pointwise mean of curves sharing one grid."""
    curves = list(curves)
    if not curves:
        raise ConfigurationError("nothing to average")
    rs = np.mean([c.rho_s for c in curves], axis=0)
    rd = np.mean([c.rho_d for c in curves], axis=0)
    return MsdCurve(curves[0].grid, rs, rd)


# --- configuration ------------------------------------------------------------

@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo configuration.

    ``params`` supplies deposition, cancellation, the news volatility
    ``sigma`` and, unless ``auction_period`` is given, the auction period
    ``tau`` (0 disables auctions).  ``params.diffusivity`` is not used: the
    book diffusivity follows from the distributions, see
    :func:`effective_diffusivity`.  Deposition is restricted to ``window``.
    ``reaction_var`` is the variance of the common reaction error per news
    increment; it defaults to ``beta_distribution.var``.
    """

    params: ModelParams
    epsilon: float
    dt: float
    horizon: float
    beta_distribution: Distribution = Distribution.constant(1.0)
    sigma_i_distribution: Distribution = Distribution.constant(0.0)
    rng_seed: int = 0
    auction_period: float | None = None
    window: tuple = (-5.0, 5.0)
    reaction_var: float | None = None
    initial: Population | None = None
    snapshot_grid: PriceGrid | None = None
    snapshot_every: int | None = None
    burn_in: float = 0.0
    record_events: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be > 0")
        if not self.dt > 0 or not self.horizon >= 0:
            raise ConfigurationError("dt must be > 0 and horizon >= 0")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ConfigurationError("rng_seed must be an unsigned 64-bit integer")
        if abs(self.beta_distribution.mean - 1.0) > 1e-12:
            raise ConfigurationError("news sensitivities must have mean 1")
        if self.sigma_i_distribution.lower < 0:
            raise ConfigurationError("idiosyncratic volatilities must be >= 0")
        if self.reaction_var is not None and self.reaction_var < 0:
            raise ConfigurationError("reaction_var must be >= 0")
        lo, hi = self.window
        if not lo < hi:
            raise ConfigurationError("window must satisfy lo < hi")
        nu_max = float(np.max(_rate(self.params.cancellation, SELL,
                                    np.linspace(lo, hi, 257))))
        nu_max = max(nu_max, float(np.max(_rate(self.params.cancellation, BUY,
                                                np.linspace(lo, hi, 257)))))
        if nu_max * self.dt > DT_NU_LIMIT:
            raise ConfigurationError(
                f"dt must be small compared with 1/nu (nu dt = {nu_max * self.dt:.3g})")
        tau = self.tau
        if tau > 0:
            k = round(tau / self.dt)
            if k < 1 or abs(k * self.dt - tau) > 1e-9 * tau:
                raise ConfigurationError("auction period must be a multiple of dt")

    @property
    def tau(self) -> float:
        return self.params.tau if self.auction_period is None else float(self.auction_period)

    @property
    def steps_per_auction(self) -> int:
        return round(self.tau / self.dt) if self.tau > 0 else 0

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def diffusivity(self) -> float:
        return effective_diffusivity(self.beta_distribution, self.sigma_i_distribution,
                                     self.params.sigma)

    @property
    def common_reaction_var(self) -> float:
        return self.beta_distribution.var if self.reaction_var is None else self.reaction_var

    def replace(self, **changes) -> "SimConfig":
        kw = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kw.update(changes)
        return SimConfig(**kw)


def _rate(rate, side, y):
    return np.broadcast_to(np.asarray(rate.evaluate(side, y), dtype=float), np.shape(y))


def _streams(seed: int):
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.PCG64(c))
            for name, c in zip(STREAMS, children)}


# --- deposition sampling ------------------------------------------------------

class _Sampler:
    """Draws offsets from a deposition rate restricted to a window."""

    def __init__(self, rate, side, window, n_table=4097):
        lo, hi = map(float, window)
        self.side = side
        self.kind = "table"
        if isinstance(rate, StepPair):
            level = rate.omega_plus if side == BUY else rate.omega_minus
            a, b = (lo, min(hi, 0.0)) if side == BUY else (max(lo, 0.0), hi)
            self.kind, self.a, self.b = "uniform", a, max(a, b)
            self.mass = level * max(b - a, 0.0)
        elif isinstance(rate, Constant):
            self.kind, self.a, self.b = "uniform", lo, hi
            self.mass = rate.level * (hi - lo)
        elif isinstance(rate, ExponentialPair):
            # density proportional to exp(k y) with k = -mu (buy) or +mu (sell)
            k = -rate.mu if side == BUY else rate.mu
            amp = rate.omega_plus if side == BUY else rate.omega_minus
            self.kind, self.k, self.a, self.b = "exponential", k, lo, hi
            self.mass = amp * (math.exp(k * hi) - math.exp(k * lo)) / k
        else:
            y = np.linspace(lo, hi, n_table)
            f = _rate(rate, side, y)
            cells = 0.5 * (f[1:] + f[:-1]) * np.diff(y)
            self.y, self.f = y, f
            self.cdf = np.r_[0.0, np.cumsum(cells)]
            self.mass = float(self.cdf[-1])

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        if self.kind == "uniform":
            return self.a + (self.b - self.a) * u
        if self.kind == "exponential":
            k, a, b = self.k, self.a, self.b
            # inverse CDF of exp(k y) on [a, b]; exponents kept non-positive
            if k > 0:
                return b + np.log(u + (1.0 - u) * np.exp(k * (a - b))) / k
            return a + np.log(1.0 - u + u * np.exp(k * (b - a))) / k
        # piecewise-linear density: invert the quadratic CDF inside each cell
        target = u * self.mass
        j = np.clip(np.searchsorted(self.cdf, target, side="right") - 1, 0,
                    len(self.y) - 2)
        h = self.y[j + 1] - self.y[j]
        f0, f1 = self.f[j], self.f[j + 1]
        r = target - self.cdf[j]
        slope = (f1 - f0) / h
        disc = np.maximum(f0 * f0 + 2.0 * slope * r, 0.0)
        denom = f0 + np.sqrt(disc)
        s = np.where(denom > 0, 2.0 * r / np.where(denom > 0, denom, 1.0), 0.0)
        return self.y[j] + np.clip(s, 0.0, h)


# --- results -------------------------------------------------------------------

@dataclass(frozen=True)
class AuctionRecord:
    time: float
    y_star: float  # clearing offset relative to the market price estimate
    price: float  # absolute clearing price
    volume: float


@dataclass(eq=False)
class SimResult:
    config: SimConfig
    population: Population
    times: np.ndarray
    p_fund: np.ndarray
    p_mkt: np.ndarray
    events: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (time, MsdCurve)
    auctions: list = field(default_factory=list)
    skipped_auctions: int = 0

    def mean_snapshot(self) -> MsdCurve:
        return time_average(c for _, c in self.snapshots)

    def events_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "event", "side", "y", "volume"])
        for t, ev, side, y, v in self.events:
            w.writerow([repr(t), ev, side, repr(y), repr(v)])
        return _emit(buf.getvalue(), path)

    def prices_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "p_fund", "p_mkt"])
        for row in zip(self.times, self.p_fund, self.p_mkt):
            w.writerow([repr(float(v)) for v in row])
        return _emit(buf.getvalue(), path)

    def auctions_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["auction_index", "time", "y_star", "v_star", "q_extra"])
        for i, a in enumerate(self.auctions):
            w.writerow([i, repr(a.time), repr(a.y_star), repr(a.volume), repr(0.0)])
        return _emit(buf.getvalue(), path)


def _emit(text, path):
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


# --- batch auction -------------------------------------------------------------

def match_auction(population: Population):
    """Match the crossing part of the book in place.

    Buyers are taken in decreasing price order and sellers in increasing
    order; matching stops when the marginal buyer's price falls below the
    marginal seller's.  The last intention matched on each side may be
    filled fractionally.  Returns ``(volume, clearing_price, fills)`` with
    ``fills`` a list of ``(is_buy, price, volume)``; the clearing price is
    the midpoint of the last matched buy and sell prices (NaN without a
    trade).
    """
    buy_idx = np.flatnonzero(population.is_buy)
    sell_idx = np.flatnonzero(~population.is_buy)
    if len(buy_idx) == 0 or len(sell_idx) == 0:
        return 0.0, math.nan, []
    buy_idx = buy_idx[np.argsort(-population.price[buy_idx], kind="stable")]
    sell_idx = sell_idx[np.argsort(population.price[sell_idx], kind="stable")]
    price, vol = population.price, population.volume
    remaining = vol.copy()
    i = j = 0
    total = 0.0
    last_b = last_s = math.nan
    fills = []
    while i < len(buy_idx) and j < len(sell_idx):
        b, s = buy_idx[i], sell_idx[j]
        if price[b] < price[s]:
            break
        q = min(remaining[b], remaining[s])
        remaining[b] -= q
        remaining[s] -= q
        total += q
        last_b, last_s = price[b], price[s]
        fills.append((True, price[b], q))
        fills.append((False, price[s], q))
        if remaining[b] <= 0.0:
            i += 1
        if remaining[s] <= 0.0:
            j += 1
    if total == 0.0:
        return 0.0, 0.5 * (price[buy_idx[0]] + price[sell_idx[0]]), []
    population.volume = remaining
    population.keep(remaining > 0.0)
    return total, 0.5 * (last_b + last_s), fills


# --- simulation ----------------------------------------------------------------

def _revise(pop: Population, dxi: float, c: float, dt: float, rng) -> float:
    """Move reservation prices by one news step; returns the move of the
    market price estimate."""
    shift = (c + (float(np.mean(pop.beta)) if len(pop) else 1.0)) * dxi
    if len(pop):
        noise = rng.standard_normal(len(pop))
        pop.price = pop.price + (c + pop.beta) * dxi + pop.sigma_i * math.sqrt(dt) * noise
    return shift


def simulate(config: SimConfig) -> SimResult:
    """Run the Monte Carlo model.

    Each step of length ``dt``: (i) Poisson deposition of new intentions
    with offsets drawn from the deposition rate inside ``window``;
    (ii) cancellation of each intention with probability
    ``1 - exp(-nu(y) dt)``; (iii) revision of all reservation prices by a
    common news increment and idiosyncratic noise.  Every ``tau`` a batch
    auction matches the crossing part of the book.  Snapshots of the
    empirical densities are taken just before each auction (or every
    ``snapshot_every`` steps) once ``burn_in`` has elapsed.
    """
    cfg = config
    rng = _streams(cfg.rng_seed)
    params = cfg.params
    dt, eps = cfg.dt, cfg.epsilon
    sigma = params.sigma
    react_sd = math.sqrt(cfg.common_reaction_var)
    pop = cfg.initial.copy() if cfg.initial is not None else Population.empty()
    p_fund = p_mkt = pop.center
    samplers = {side: _Sampler(params.deposition, side, cfg.window) for side in (BUY, SELL)}

    n_steps = cfg.n_steps
    k_auction = cfg.steps_per_auction
    snap_every = cfg.snapshot_every or k_auction or 1
    grid = cfg.snapshot_grid
    times = np.empty(n_steps + 1)
    fund = np.empty(n_steps + 1)
    mkt = np.empty(n_steps + 1)
    times[0], fund[0], mkt[0] = 0.0, p_fund, p_mkt
    result = SimResult(cfg, pop, times, fund, mkt)
    events = result.events if cfg.record_events else None

    for step in range(1, n_steps + 1):
        t = step * dt
        # (i) deposition
        for side, is_buy in ((BUY, True), (SELL, False)):
            smp = samplers[side]
            count = rng["deposition"].poisson(smp.mass * dt / eps) if smp.mass > 0 else 0
            if count:
                y = smp.draw(rng["deposition"], count)
                beta = cfg.beta_distribution.sample(rng["deposition"], count)
                sig = cfg.sigma_i_distribution.sample(rng["deposition"], count)
                pop.append(np.full(count, is_buy), pop.center + y, beta, sig,
                           np.full(count, eps))
                if events is not None:
                    events.extend((t, "deposit", side, float(v), eps) for v in y)
        # (ii) cancellation
        if len(pop):
            y = pop.y
            nu = np.where(pop.is_buy, _rate(params.cancellation, BUY, y),
                          _rate(params.cancellation, SELL, y))
            gone = rng["cancellation"].random(len(pop)) < -np.expm1(-nu * dt)
            if np.any(gone):
                if events is not None:
                    for b, v, q in zip(pop.is_buy[gone], y[gone], pop.volume[gone]):
                        events.append((t, "cancel", BUY if b else SELL, float(v), float(q)))
                pop.keep(~gone)
        # (iii) revision
        dxi = sigma * math.sqrt(dt) * rng["news"].standard_normal() if sigma > 0 else 0.0
        c = react_sd * rng["reaction"].standard_normal() if react_sd > 0 else 0.0
        shift = _revise(pop, dxi, c, dt, rng["revision"])
        p_fund += dxi
        p_mkt += shift
        pop.center = p_mkt
        times[step], fund[step], mkt[step] = t, p_fund, p_mkt

        if grid is not None and t >= cfg.burn_in - 1e-12 and snap_every \
                and step % snap_every == 0:
            result.snapshots.append((t, empirical_msd(pop, grid)))
        if k_auction and step % k_auction == 0:
            volume, price, fills = match_auction(pop)
            if not fills:
                if not (np.any(pop.is_buy) and np.any(~pop.is_buy)):
                    result.skipped_auctions += 1
                    log.info("auction at t=%g skipped: one side is empty", t)
                result.auctions.append(AuctionRecord(t, price - p_mkt if price == price
                                                     else math.nan, price, 0.0))
                continue
            result.auctions.append(AuctionRecord(t, price - p_mkt, price, volume))
            if events is not None:
                events.extend((t, "match", BUY if b else SELL, float(pr - p_mkt), float(q))
                              for b, pr, q in fills)
    result.population = pop
    return result


# --- price formation ------------------------------------------------------------

@dataclass(frozen=True)
class PricePair:
    time: np.ndarray
    p_fund: np.ndarray
    p_mkt: np.ndarray


@dataclass(frozen=True)
class VarianceReport:
    """Terminal-time variance ratios across independent paths."""

    n_paths: int
    pricing_error_ratio: float  # Var(p_mkt - p_fund) / Var(p_fund)
    pricing_error_se: float
    excess_volatility_ratio: float  # Var(p_mkt) / Var(p_fund)
    excess_volatility_se: float

    def to_text(self) -> str:
        rows = [("n_paths", self.n_paths),
                ("pricing_error_ratio", self.pricing_error_ratio),
                ("pricing_error_se", self.pricing_error_se),
                ("excess_volatility_ratio", self.excess_volatility_ratio),
                ("excess_volatility_se", self.excess_volatility_se)]
        return "".join(f"{k} = {v!r}\n" for k, v in rows)


def variance_ratio(x, y):
    """``Var(x)/Var(y)`` over paths with a delta-method standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    a = (x - x.mean()) ** 2
    b = (y - y.mean()) ** 2
    if b.mean() == 0:
        raise ConfigurationError("reference variance vanishes")
    r = a.mean() / b.mean()
    se = float(np.std(a - r * b, ddof=1) / (b.mean() * math.sqrt(n)))
    return float(r), se


def path_seeds(seed: int, n_paths: int):
    """Independent 64-bit seeds for an ensemble, derived from one seed."""
    ss = np.random.SeedSequence(seed)
    return [int(c.generate_state(1, np.uint64)[0]) for c in ss.spawn(n_paths)]


def price_paths(config: SimConfig, n_paths: int = 100):
    """Simulate ``n_paths`` independent runs and compare the price paths.

    Returns the list of :class:`PricePair` and a :class:`VarianceReport`.
    """
    if n_paths < 2:
        raise ConfigurationError("need at least 2 paths")
    if not config.params.sigma > 0:
        raise ConfigurationError("price paths need news volatility sigma > 0")
    base = config.replace(record_events=False, snapshot_grid=None)
    pairs = []
    for s in path_seeds(config.rng_seed, n_paths):
        res = simulate(base.replace(rng_seed=s))
        pairs.append(PricePair(res.times, res.p_fund, res.p_mkt))
    fund = np.array([p.p_fund[-1] for p in pairs])
    mkt = np.array([p.p_mkt[-1] for p in pairs])
    err_r, err_se = variance_ratio(mkt - fund, fund)
    exc_r, exc_se = variance_ratio(mkt, fund)
    return pairs, VarianceReport(n_paths, err_r, err_se, exc_r, exc_se)


# --- diffusivity measurement ------------------------------------------------------

@dataclass(frozen=True)
class DiffusivityMeasurement:
    measured: float
    se: float
    formula: float
    times: np.ndarray
    msd: np.ndarray  # mean-square displacement in the moving frame


def measure_diffusivity(config: SimConfig, n_tracers: int = 2000, n_replicas: int = 200,
                        duration: float = 1.0, n_samples: int = 10):
    """Variance growth of reservation-price offsets.

    Tracers are revised with the simulation's update rule but never
    deposited or cancelled.  For each replica the mean-square displacement
    of the offsets ``y = price - center`` is fitted by ``2 D t`` through the
    origin; the estimate and its standard error come from the spread
    across replicas.
    """
    rng = _streams(config.rng_seed)
    dt = config.dt
    n_steps = int(round(duration / dt))
    sample_at = np.unique(np.linspace(0, n_steps, n_samples + 1).round().astype(int))[1:]
    sigma = config.params.sigma
    react_sd = math.sqrt(config.common_reaction_var)
    slopes = []
    curves = []
    for _ in range(n_replicas):
        beta = config.beta_distribution.sample(rng["initial"], n_tracers)
        sig = config.sigma_i_distribution.sample(rng["initial"], n_tracers)
        pop = Population(np.zeros(n_tracers, bool), np.zeros(n_tracers), beta, sig,
                         np.ones(n_tracers), 0.0)
        y0 = pop.y.copy()
        msd = []
        for step in range(1, n_steps + 1):
            dxi = sigma * math.sqrt(dt) * rng["news"].standard_normal() if sigma > 0 else 0.0
            c = react_sd * rng["reaction"].standard_normal() if react_sd > 0 else 0.0
            pop.center += _revise(pop, dxi, c, dt, rng["revision"])
            if step in sample_at:
                msd.append(float(np.mean((pop.y - y0) ** 2)))
        t = sample_at * dt
        msd = np.asarray(msd)
        slopes.append(float(t @ msd / (2.0 * t @ t)))
        curves.append(msd)
    slopes = np.asarray(slopes)
    return DiffusivityMeasurement(float(slopes.mean()),
                                  float(slopes.std(ddof=1) / math.sqrt(len(slopes))),
                                  config.diffusivity, sample_at * dt,
                                  np.mean(curves, axis=0))


# --- hydrodynamic oracle ------------------------------------------------------------

def hydrodynamic_params(config: SimConfig) -> ModelParams:
    """PDE parameters matching a simulation: effective diffusivity and the
    deposition rate restricted to the deposition window."""
    lo, hi = config.window
    p = config.params
    w = p.deposition
    # sharp window edges represented on a fine table
    y = np.linspace(lo, hi, 4001)
    buy = _rate(w, BUY, y).copy()
    sell = _rate(w, SELL, y).copy()
    pad = 1e-9 * (hi - lo)
    ty = np.r_[lo - 1.0, lo - pad, y, hi + pad, hi + 1.0]
    tb = np.r_[0.0, 0.0, buy, 0.0, 0.0]
    ts = np.r_[0.0, 0.0, sell, 0.0, 0.0]
    return ModelParams(config.diffusivity, p.cancellation, Tabulated(ty, tb, ts),
                       tau=config.tau, sigma=p.sigma)
