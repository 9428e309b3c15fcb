"""Price grids, marginal supply/demand curves and order-flow rate functions.

Prices are always expressed as offsets ``y = p - p_hat`` from the reference
(fundamental) price.  Curves store densities at the grid nodes; cumulative
supply ``S`` and demand ``D`` are integrals of the piecewise-linear
interpolant of those densities and are computed on demand.

Side conventions: the *buy* side feeds the demand density ``rho_d`` and the
*sell* side feeds the supply density ``rho_s``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Literal, Union

import numpy as np

from .errors import ConfigurationError, DomainError

Side = Literal["buy", "sell"]
BUY: Side = "buy"
SELL: Side = "sell"

# Relative slack (in units of dy) accepted when checking that y is on the grid.
_EDGE_SLACK = 1e-9


@dataclass(frozen=True)
class PriceGrid:
    """Uniform grid of ``n`` cells on ``[y_min, y_max]`` (``n + 1`` nodes)."""

    y_min: float
    y_max: float
    n: int

    def __post_init__(self):
        if not (self.y_min < 0.0 < self.y_max):
            raise ConfigurationError(
                f"grid must bracket 0, got [{self.y_min}, {self.y_max}]")
        if int(self.n) != self.n or self.n < 16:
            raise ConfigurationError(f"grid needs n >= 16 cells, got {self.n}")
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def symmetric(cls, half_width: float, dy: float) -> "PriceGrid":
        """Grid on ``[-half_width, half_width]`` with spacing at most ``dy``.

        The cell count is even so that ``y = 0`` is a node.
        """
        n = int(np.ceil(2.0 * half_width / dy))
        n += n % 2
        return cls(-half_width, half_width, max(n, 16))

    @property
    def dy(self) -> float:
        return (self.y_max - self.y_min) / self.n

    @property
    def nodes(self) -> np.ndarray:
        y = self.y_min + self.dy * np.arange(self.n + 1)
        y[-1] = self.y_max
        # an exact zero keeps the half-value convention of step rates
        k = self.index_of_zero()
        if k is not None:
            y[k] = 0.0
        return y

    def index_of_zero(self):
        """Index of the node at y = 0, or None when 0 is not a node."""
        k = -self.y_min / self.dy
        kr = round(k)
        return int(kr) if abs(k - kr) < 1e-9 else None

    def locate(self, y):
        """Cell index ``k`` and local offset ``s = y - y_k`` for each ``y``.

        The last node is attributed to the last cell (``s = dy``).
        """
        y = np.asarray(y, dtype=float)
        lo = self.y_min - _EDGE_SLACK * self.dy
        hi = self.y_max + _EDGE_SLACK * self.dy
        if np.any(~np.isfinite(y)) or np.any(y < lo) or np.any(y > hi):
            raise DomainError(
                f"price offset outside grid [{self.y_min}, {self.y_max}]")
        y = np.clip(y, self.y_min, self.y_max)
        k = np.floor((y - self.y_min) / self.dy).astype(int)
        k = np.clip(k, 0, self.n - 1)
        s = y - (self.y_min + k * self.dy)
        return k, s


def _cell_integrals(rho: np.ndarray, dy: float) -> np.ndarray:
    return 0.5 * dy * (rho[:-1] + rho[1:])


def _partial_cell(rho: np.ndarray, k, s, dy: float):
    """Integral of the linear interpolant over ``[y_k, y_k + s]``."""
    r0 = rho[k]
    r1 = rho[k + 1]
    return r0 * s + (r1 - r0) * s * s / (2.0 * dy)


@dataclass(frozen=True, eq=False)
class MsdCurve:
    """Supply and demand densities (volume per unit price) on a grid."""

    grid: PriceGrid
    rho_s: np.ndarray
    rho_d: np.ndarray

    def __post_init__(self):
        m = self.grid.n + 1
        for name in ("rho_s", "rho_d"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (m,):
                raise ConfigurationError(
                    f"{name} has shape {arr.shape}, expected ({m},)")
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError(f"{name} contains non-finite values")
            if np.any(arr < 0.0):
                raise ConfigurationError(f"{name} contains negative densities")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, grid: PriceGrid) -> "MsdCurve":
        z = np.zeros(grid.n + 1)
        return cls(grid, z, z)

    @property
    def y(self) -> np.ndarray:
        return self.grid.nodes

    def supply_nodes(self) -> np.ndarray:
        """Cumulative supply S at every node."""
        out = np.zeros(self.grid.n + 1)
        np.cumsum(_cell_integrals(self.rho_s, self.grid.dy), out=out[1:])
        return out

    def demand_nodes(self) -> np.ndarray:
        """Cumulative demand D at every node."""
        out = np.zeros(self.grid.n + 1)
        cells = _cell_integrals(self.rho_d, self.grid.dy)
        out[:-1] = np.cumsum(cells[::-1])[::-1]
        return out

    def total_supply(self) -> float:
        return float(_cell_integrals(self.rho_s, self.grid.dy).sum())

    def total_demand(self) -> float:
        return float(_cell_integrals(self.rho_d, self.grid.dy).sum())

    def density_at(self, y):
        """Linearly interpolated ``(rho_s(y), rho_d(y))``."""
        k, s = self.grid.locate(y)
        w = s / self.grid.dy
        rs = self.rho_s[k] * (1 - w) + self.rho_s[k + 1] * w
        rd = self.rho_d[k] * (1 - w) + self.rho_d[k + 1] * w
        return rs, rd

    def with_densities(self, rho_s=None, rho_d=None) -> "MsdCurve":
        return MsdCurve(self.grid,
                        self.rho_s if rho_s is None else rho_s,
                        self.rho_d if rho_d is None else rho_d)

    def mirrored(self) -> "MsdCurve":
        """Swap sides and reflect ``y -> -y`` (requires a symmetric grid)."""
        if not np.isclose(self.grid.y_min, -self.grid.y_max):
            raise DomainError("mirroring needs a grid symmetric about 0")
        return MsdCurve(self.grid, self.rho_d[::-1], self.rho_s[::-1])

    def to_csv(self, path=None) -> str:
        """Curve dump with header ``y,rho_s,rho_d,S_cum,D_cum``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["y", "rho_s", "rho_d", "S_cum", "D_cum"])
        for row in zip(self.y, self.rho_s, self.rho_d,
                       self.supply_nodes(), self.demand_nodes()):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "MsdCurve":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        y = data[:, 0]
        grid = PriceGrid(float(y[0]), float(y[-1]), len(y) - 1)
        return cls(grid, data[:, 1], data[:, 2])


def cumulative_supply(curve: MsdCurve, y):
    """``S(y) = integral of rho_s from y_min to y``; non-decreasing in y."""
    k, s = curve.grid.locate(y)
    nodes = curve.supply_nodes()
    out = nodes[k] + _partial_cell(curve.rho_s, k, s, curve.grid.dy)
    return float(out) if np.ndim(out) == 0 else out


def cumulative_demand(curve: MsdCurve, y):
    """``D(y) = integral of rho_d from y to y_max``; non-increasing in y."""
    k, s = curve.grid.locate(y)
    nodes = curve.demand_nodes()
    cell = 0.5 * curve.grid.dy * (curve.rho_d[k] + curve.rho_d[k + 1])
    out = nodes[k + 1] + cell - _partial_cell(curve.rho_d, k, s, curve.grid.dy)
    return float(out) if np.ndim(out) == 0 else out


# --- order-flow rate functions ---------------------------------------------

@dataclass(frozen=True)
class Constant:
    """Same level on both sides and at every price."""

    level: float

    def __post_init__(self):
        if not (np.isfinite(self.level) and self.level >= 0):
            raise ConfigurationError("Constant level must be finite and >= 0")

    def evaluate(self, side: Side, y):
        return np.full_like(np.asarray(y, dtype=float), self.level)


@dataclass(frozen=True)
class ExponentialPair:
    """``omega_buy(y) = omega_plus exp(-mu y)``, ``omega_sell(y) = omega_minus exp(mu y)``."""

    omega_plus: float
    omega_minus: float
    mu: float

    def __post_init__(self):
        if self.omega_plus < 0 or self.omega_minus < 0:
            raise ConfigurationError("ExponentialPair levels must be >= 0")
        if not self.mu > 0:
            raise ConfigurationError("ExponentialPair needs mu > 0")

    def evaluate(self, side: Side, y):
        y = np.asarray(y, dtype=float)
        if side == BUY:
            return self.omega_plus * np.exp(-self.mu * y)
        return self.omega_minus * np.exp(self.mu * y)


@dataclass(frozen=True)
class StepPair:
    """Buy flow ``omega_plus`` below the price, sell flow ``omega_minus`` above.

    At exactly ``y = 0`` each side takes half its level.
    """

    omega_plus: float
    omega_minus: float

    def __post_init__(self):
        if self.omega_plus < 0 or self.omega_minus < 0:
            raise ConfigurationError("StepPair levels must be >= 0")

    def evaluate(self, side: Side, y):
        y = np.asarray(y, dtype=float)
        if side == BUY:
            return self.omega_plus * np.where(y < 0, 1.0, np.where(y == 0, 0.5, 0.0))
        return self.omega_minus * np.where(y > 0, 1.0, np.where(y == 0, 0.5, 0.0))


@dataclass(frozen=True, eq=False)
class Tabulated:
    """Values sampled at increasing abscissae, linearly interpolated.

    Outside the table the end values are held constant.  ``sell`` defaults
    to ``buy`` (useful for a price-dependent cancellation rate).
    """

    y: np.ndarray
    buy: np.ndarray
    sell: np.ndarray = field(default=None)

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        buy = np.asarray(self.buy, dtype=float)
        sell = buy if self.sell is None else np.asarray(self.sell, dtype=float)
        if y.ndim != 1 or len(y) < 2 or np.any(np.diff(y) <= 0):
            raise ConfigurationError("Tabulated abscissae must increase strictly")
        if buy.shape != y.shape or sell.shape != y.shape:
            raise ConfigurationError("Tabulated values must match abscissae")
        for arr in (buy, sell):
            if np.any(~np.isfinite(arr)) or np.any(arr < 0):
                raise ConfigurationError("Tabulated values must be finite and >= 0")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "buy", buy)
        object.__setattr__(self, "sell", sell)

    def evaluate(self, side: Side, y):
        vals = self.buy if side == BUY else self.sell
        return np.interp(np.asarray(y, dtype=float), self.y, vals)


RateFunction = Union[Constant, ExponentialPair, StepPair, Tabulated]


def evaluate_rate(rate: RateFunction, side: Side, y):
    """Value of a rate function on the given side at offset(s) ``y``."""
    if side not in (BUY, SELL):
        raise ValueError(f"side must be 'buy' or 'sell', got {side!r}")
    out = rate.evaluate(side, y)
    return float(out) if np.ndim(out) == 0 else out


def is_symmetric_flow(rate: RateFunction) -> bool:
    """True when ``omega_buy(y) == omega_sell(-y)`` for all y."""
    if isinstance(rate, Constant):
        return True
    if isinstance(rate, (ExponentialPair, StepPair)):
        return rate.omega_plus == rate.omega_minus
    return (np.allclose(rate.y, -rate.y[::-1])
            and np.array_equal(rate.buy, rate.sell[::-1]))


@dataclass(frozen=True)
class ModelParams:
    """Coefficients of the free-evolution equation.

    ``diffusivity`` in price^2/time, ``cancellation`` per unit time,
    ``deposition`` in volume per unit price per unit time, ``tau`` the
    inter-auction time and ``sigma`` the news volatility.
    """

    diffusivity: float
    cancellation: RateFunction
    deposition: RateFunction
    tau: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.diffusivity) and self.diffusivity > 0):
            raise ConfigurationError("diffusivity must be > 0")
        if self.tau < 0 or self.sigma < 0:
            raise ConfigurationError("tau and sigma must be >= 0")

    @property
    def constant_nu(self):
        """The cancellation rate if it is a ``Constant``, else None."""
        if isinstance(self.cancellation, Constant):
            return self.cancellation.level
        return None

    @property
    def stationary(self):
        """Whether ``nu > D mu^2`` for exponential flow with constant nu.

        None when the condition does not apply to this parameterization.
        """
        nu = self.constant_nu
        if nu is None or not isinstance(self.deposition, ExponentialPair):
            return None
        return nu > self.diffusivity * self.deposition.mu ** 2

    def replace(self, **changes) -> "ModelParams":
        kw = dict(diffusivity=self.diffusivity, cancellation=self.cancellation,
                  deposition=self.deposition, tau=self.tau, sigma=self.sigma)
        kw.update(changes)
        return ModelParams(**kw)


def sample_rates(params: ModelParams, grid: PriceGrid):
    """Deposition and cancellation rates at the grid nodes, per side.

    Returns ``(omega_sell, omega_buy, nu_sell, nu_buy)`` in the supply/demand
    order used by the curves.
    """
    y = grid.nodes
    return (np.asarray(params.deposition.evaluate(SELL, y), dtype=float),
            np.asarray(params.deposition.evaluate(BUY, y), dtype=float),
            np.asarray(params.cancellation.evaluate(SELL, y), dtype=float),
            np.asarray(params.cancellation.evaluate(BUY, y), dtype=float))
