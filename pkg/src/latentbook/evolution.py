"""Free evolution of the book between auctions.

Each side obeys ``d_t rho = D d_yy rho - nu(y) rho + omega(y)``.  Two
routes are provided: finite differences (explicit or Crank-Nicolson) on
the curve's grid, and the exact heat-kernel representation for constant
``nu`` on the infinite line, evaluated by quadrature.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack
from scipy.signal import fftconvolve
from scipy.special import erf, erfc, erfcx

from . import analytics
from .errors import (ClampedMassError, ConfigurationError, NoStationaryStateError,
                     NumericalError, UnsupportedParameterizationError)
from .msd import (BUY, SELL, Constant, ExponentialPair, ModelParams, MsdCurve,
                  PriceGrid, StepPair, Tabulated, sample_rates)

log = logging.getLogger(__name__)

SCHEMES = ("explicit", "crank_nicolson")
BOUNDARIES = ("auto", "dirichlet_stationary", "zero_flux")
EXPLICIT_LIMIT = 0.25
CLAMP_FRACTION_LIMIT = 1e-3


@dataclass(frozen=True)
class EvolutionConfig:
    """Time discretization of the free evolution.

    ``damping_steps`` backward-Euler half-steps start every Crank-Nicolson
    run, which suppresses the oscillations CN produces at the truncation
    discontinuity left by an auction.

    ``boundary="auto"`` pins both grid ends to the analytic stationary
    values during free evolution, and uses zero flux for auction
    sequences, whose truncated book is far from the no-auction state.
    """

    dt: float
    scheme: str = "crank_nicolson"
    boundary: str = "auto"
    damping_steps: int = 4

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError("dt must be > 0")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}")
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"boundary must be one of {BOUNDARIES}")
        if self.damping_steps < 0 or self.damping_steps % 2:
            raise ConfigurationError("damping_steps must be even and >= 0")


def dirichlet_values(params: ModelParams, grid: PriceGrid):
    """Analytic stationary values at both grid ends, or None if unavailable.

    Returns ``((s_lo, s_hi), (d_lo, d_hi))``.
    """
    nu = params.constant_nu
    if nu is None or nu <= 0:
        return None
    try:
        ends = np.array([grid.y_min, grid.y_max])
        s = analytics.stationary_density(params, SELL, ends)
        d = analytics.stationary_density(params, BUY, ends)
    except NoStationaryStateError:
        return None
    return (float(s[0]), float(s[1])), (float(d[0]), float(d[1]))


class _Side:
    """Tridiagonal operator for one side: ``A rho = D L rho - nu rho``."""

    def __init__(self, grid, D, nu, omega, boundary, bvals):
        self.n = grid.n + 1
        self.r = D / grid.dy ** 2
        self.nu = nu
        self.omega = omega
        self.boundary = boundary
        self.bvals = bvals
        self._factors = {}

    def apply(self, rho):
        r = self.r
        out = np.empty_like(rho)
        out[1:-1] = r * (rho[2:] - 2.0 * rho[1:-1] + rho[:-2])
        out[0] = 2.0 * r * (rho[1] - rho[0])
        out[-1] = 2.0 * r * (rho[-2] - rho[-1])
        out -= self.nu * rho
        return out

    def _factor(self, h):
        """LU of ``I - h A`` (with Dirichlet rows replaced by identity)."""
        if h in self._factors:
            return self._factors[h]
        r = self.r
        diag = 1.0 + h * (2.0 * r + self.nu)
        lower = np.full(self.n - 1, -h * r)
        upper = np.full(self.n - 1, -h * r)
        if self.boundary == "zero_flux":
            upper[0] = -2.0 * h * r
            lower[-1] = -2.0 * h * r
        else:
            diag = diag.copy()
            diag[0] = diag[-1] = 1.0
            upper[0] = 0.0
            lower[-1] = 0.0
        dl, d, du, du2, ipiv, info = lapack.dgttrf(lower, diag, upper)
        if info != 0:
            raise NumericalError("singular evolution matrix")
        self._factors[h] = (dl, d, du, du2, ipiv)
        return self._factors[h]

    def bands(self, c0, c1):
        """Tridiagonal bands of ``c0 I + c1 A``; Dirichlet rows are identity."""
        r = self.r
        diag = c0 - c1 * (2.0 * r + self.nu) * np.ones(self.n)
        lower = np.full(self.n - 1, c1 * r)
        upper = np.full(self.n - 1, c1 * r)
        if self.boundary == "zero_flux":
            upper[0] = 2.0 * c1 * r
            lower[-1] = 2.0 * c1 * r
        else:
            diag[0] = diag[-1] = 1.0
            upper[0] = 0.0
            lower[-1] = 0.0
        return lower, diag, upper

    def _pin(self, rho):
        if self.boundary == "dirichlet_stationary":
            rho[0], rho[-1] = self.bvals

    def step_explicit(self, rho, h):
        new = rho + h * (self.apply(rho) + self.omega)
        self._pin(new)
        return new

    def step_theta(self, rho, h, theta):
        """theta = 1/2 is Crank-Nicolson, theta = 1 backward Euler."""
        rhs = rho + h * self.omega
        if theta < 1.0:
            rhs = rhs + (1.0 - theta) * h * self.apply(rho)
        if self.boundary == "dirichlet_stationary":
            rhs[0], rhs[-1] = self.bvals
        dl, d, du, du2, ipiv = self._factor(theta * h)
        x, info = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
        return x


class Evolver:
    """Reusable stepper for one grid, parameter set and configuration.

    ``clamped_nodes`` and ``clamped_mass`` count the negative round-off
    removed so far.
    """

    def __init__(self, grid: PriceGrid, params: ModelParams, config: EvolutionConfig,
                 auctions: bool = False):
        self.grid = grid
        self.params = params
        self.config = config
        D = params.diffusivity
        lam = D * config.dt / grid.dy ** 2
        if config.scheme == "explicit" and lam > EXPLICIT_LIMIT:
            raise ConfigurationError(
                f"explicit scheme unstable: D dt / dy^2 = {lam:.4g} > {EXPLICIT_LIMIT}")
        boundary = config.boundary
        if boundary == "auto":
            boundary = "zero_flux" if auctions else "dirichlet_stationary"
        bvals = dirichlet_values(params, grid) if boundary == "dirichlet_stationary" else None
        if boundary == "dirichlet_stationary" and bvals is None:
            boundary = "zero_flux"
        self.boundary = boundary
        om_s, om_d, nu_s, nu_d = sample_rates(params, grid)
        self.supply = _Side(grid, D, nu_s, om_s, boundary, bvals[0] if bvals else None)
        self.demand = _Side(grid, D, nu_d, om_d, boundary, bvals[1] if bvals else None)
        self.clamped_nodes = 0
        self.clamped_mass = 0.0

    def _advance_side(self, side: _Side, rho, t):
        cfg = self.config
        rho = np.array(rho, dtype=float)
        side._pin(rho)
        if t <= 0:
            return rho
        n = max(1, math.ceil(t / cfg.dt - 1e-9))
        h = t / n
        if cfg.scheme == "explicit":
            for _ in range(n):
                rho = side.step_explicit(rho, h)
            return rho
        damp = min(cfg.damping_steps, 2 * n)
        for _ in range(damp):
            rho = side.step_theta(rho, 0.5 * h, 1.0)
        for _ in range(n - damp // 2):
            rho = side.step_theta(rho, h, 0.5)
        return rho

    def _clamp(self, rho):
        neg = rho < 0
        if np.any(neg):
            lost = float(-rho[neg].sum() * self.grid.dy)
            total = float(np.abs(rho).sum() * self.grid.dy)
            self.clamped_nodes += int(neg.sum())
            self.clamped_mass += lost
            log.debug("clamped %d negative nodes (mass %.3g)", neg.sum(), lost)
            if total > 0 and lost > CLAMP_FRACTION_LIMIT * total:
                raise ClampedMassError(
                    f"clamped mass fraction {lost / total:.3g} exceeds {CLAMP_FRACTION_LIMIT}")
            rho = np.where(neg, 0.0, rho)
        return rho

    def advance(self, curve: MsdCurve, t: float) -> MsdCurve:
        if t < 0:
            raise ConfigurationError("duration must be >= 0")
        if curve.grid != self.grid:
            raise ConfigurationError("curve grid differs from the evolver grid")
        rs = self._clamp(self._advance_side(self.supply, curve.rho_s, t))
        rd = self._clamp(self._advance_side(self.demand, curve.rho_d, t))
        return MsdCurve(self.grid, rs, rd)


def evolve(curve: MsdCurve, params: ModelParams, config: EvolutionConfig,
           t: float) -> MsdCurve:
    """Advance ``curve`` by duration ``t`` with finite differences."""
    return Evolver(curve.grid, params, config).advance(curve, t)


# --- Green's-function route ---------------------------------------------------

def _hat_weights(dy, sigma, half):
    """Integral of the unit hat of half-width dy centred at 0 against a
    Gaussian of std ``sigma`` centred at ``d dy``, for ``|d| <= half``."""
    d = np.arange(-half, half + 1) * dy
    s2 = math.sqrt(2.0) * sigma

    def moments(lo, hi):  # int over x in [lo, hi] of (1, x) * N(x; 0, sigma)
        m0 = 0.5 * (erf(hi / s2) - erf(lo / s2))
        m1 = sigma / math.sqrt(2 * math.pi) * (np.exp(-(lo / s2) ** 2)
                                               - np.exp(-(hi / s2) ** 2))
        return m0, m1

    # x = y' - y_target; hat centred at -d in these coordinates
    c = -d
    m0l, m1l = moments(c - dy, c)
    m0r, m1r = moments(c, c + dy)
    left = (m1l - (c - dy) * m0l) / dy   # rising edge
    right = ((c + dy) * m0r - m1r) / dy  # falling edge
    return left + right


def heat_smooth(values: np.ndarray, dy: float, sigma: float) -> np.ndarray:
    """Convolve the piecewise-linear interpolant of ``values`` (held constant
    beyond both ends) with a Gaussian of std ``sigma``, sampled at the nodes."""
    values = np.asarray(values, dtype=float)
    if sigma <= 0:
        return values.copy()
    half = int(math.ceil(12.0 * sigma / dy)) + 2
    padded = np.concatenate([np.full(half, values[0]), values,
                             np.full(half, values[-1])])
    w = _hat_weights(dy, sigma, half)
    if len(w) * len(padded) < 4_000_000:
        conv = np.convolve(padded, w, mode="same")
    else:
        conv = fftconvolve(padded, w, mode="same")
    return conv[half:half + len(values)]


def _step_source(x, t, D, nu):
    """``int_0^t exp(-nu s) P(B_s > -x) ds`` for a source on ``y' > 0``.

    ``x`` is the signed distance into the source region.
    """
    x = np.asarray(x, dtype=float)
    a = np.abs(x)
    sq = math.sqrt(D * t)
    if nu == 0:
        # int_0^t erfc(a / (2 sqrt(D s))) ds, closed form
        z = a / (2.0 * sq)
        outside = (t * (1 + 2 * z * z) * erfc(z)
                   - 2 * z * t / math.sqrt(math.pi) * np.exp(-z * z))
        outside *= 0.5
        return np.where(x >= 0, t - outside, outside)
    k = math.sqrt(nu / D)
    rt = math.sqrt(nu * t)
    z = a / (2.0 * sq)
    e_t = 0.5 * erfc(z)  # P(B_t beyond a) at the end time
    # (1/2nu)[e^{-ka} erfc(z - rt) + e^{ka} erfc(z + rt)], overflow-safe
    term = (np.exp(-k * a) * erfc(z - rt)
            + erfcx(z + rt) * np.exp(-z * z - nu * t)) / (2.0 * nu)
    outside = 0.5 * term - math.exp(-nu * t) * e_t / nu
    full = (1.0 - math.exp(-nu * t)) / nu
    return np.where(x >= 0, full - outside, outside)


def _source_term(params: ModelParams, side, y, t, nu, dy, n_time=64):
    w = params.deposition
    D = params.diffusivity
    if isinstance(w, Constant):
        val = w.level * (t if nu == 0 else (1 - math.exp(-nu * t)) / nu)
        return np.full_like(y, val)
    if isinstance(w, StepPair):
        if side == SELL:
            return w.omega_minus * _step_source(y, t, D, nu)
        return w.omega_plus * _step_source(-y, t, D, nu)
    if isinstance(w, ExponentialPair):
        g = nu - D * w.mu ** 2
        growth = t if g == 0 else (1 - math.exp(-g * t)) / g
        if side == SELL:
            return w.omega_minus * np.exp(w.mu * y) * growth
        return w.omega_plus * np.exp(-w.mu * y) * growth
    # tabulated: composite Simpson in r = sqrt(s), s the elapsed time; the
    # substitution removes the sqrt(s) behaviour near kinks of omega
    base = np.asarray(w.evaluate(side, y), dtype=float)
    r = np.linspace(0.0, math.sqrt(t), 2 * n_time + 1)
    vals = [2.0 * ri * math.exp(-nu * ri * ri)
            * heat_smooth(base, dy, math.sqrt(2 * D) * ri) for ri in r]
    h = math.sqrt(t) / (2 * n_time)
    coef = np.ones(len(r))
    coef[1:-1:2] = 4.0
    coef[2:-1:2] = 2.0
    return h / 3.0 * np.tensordot(coef, np.array(vals), axes=1)


def evolve_green(initial: MsdCurve, params: ModelParams, t: float) -> MsdCurve:
    """Exact solution for constant ``nu`` on the infinite line, sampled on
    the curve's grid.

    The initial condition is the piecewise-linear interpolant of the curve,
    held constant beyond the grid ends.
    """
    nu = params.constant_nu
    if nu is None:
        raise UnsupportedParameterizationError(
            "Green's-function evolution needs nu independent of y")
    if not t > 0:
        raise ConfigurationError("evolve_green needs t > 0")
    grid = initial.grid
    D = params.diffusivity
    sigma = math.sqrt(2.0 * D * t)
    decay = math.exp(-nu * t)
    y = grid.nodes
    out = []
    for side, rho in ((SELL, initial.rho_s), (BUY, initial.rho_d)):
        homog = decay * heat_smooth(rho, grid.dy, sigma)
        src = _source_term(params, side, y, t, nu, grid.dy)
        out.append(np.maximum(homog + src, 0.0))
    return MsdCurve(grid, out[0], out[1])


# --- stationary states ----------------------------------------------------------

def stationary_numeric(params: ModelParams, grid: PriceGrid,
                       config: EvolutionConfig | None = None, tol: float = 1e-10,
                       method: str = "direct", max_time: float = 1e6) -> MsdCurve:
    """Numerical stationary book.

    ``method="direct"`` solves the tridiagonal steady-state system;
    ``method="march"`` time-steps with ``config`` until the max relative
    change per unit time drops below ``tol``.
    """
    if isinstance(params.deposition, ExponentialPair) and params.stationary is False:
        mu = params.deposition.mu
        raise NoStationaryStateError(
            f"no stationary state: need nu > D mu^2 "
            f"(nu={params.constant_nu}, D mu^2={params.diffusivity * mu ** 2})")
    om_s, om_d, nu_s, nu_d = sample_rates(params, grid)
    if not (np.any(om_s) or np.any(om_d)):
        return MsdCurve.zeros(grid)
    if np.all(nu_s == 0) or np.all(nu_d == 0):
        raise NoStationaryStateError("no stationary state with nu == 0 and omega != 0")
    if config is None:
        config = EvolutionConfig(dt=1.0)
    ev = Evolver(grid, params, config)
    if method == "direct":
        # steady state = backward Euler with an infinite step: solve -A rho = omega
        rho = []
        for side in (ev.supply, ev.demand):
            r = side.r
            diag = 2.0 * r + side.nu
            lower = np.full(side.n - 1, -r)
            upper = np.full(side.n - 1, -r)
            rhs = side.omega.copy()
            if ev.boundary == "zero_flux":
                upper[0] = -2.0 * r
                lower[-1] = -2.0 * r
            else:
                diag = diag.copy()
                diag[0] = diag[-1] = 1.0
                upper[0] = lower[-1] = 0.0
                rhs[0], rhs[-1] = side.bvals
            dl, d, du, du2, ipiv, info = lapack.dgttrf(lower, diag, upper)
            if info != 0:
                raise NumericalError("singular steady-state system")
            x, _ = lapack.dgttrs(dl, d, du, du2, ipiv, rhs)
            rho.append(np.maximum(x, 0.0))
        return MsdCurve(grid, rho[0], rho[1])
    if method != "march":
        raise ConfigurationError("method must be 'direct' or 'march'")
    curve = MsdCurve.zeros(grid)
    chunk = max(config.dt, 1.0 / max(float(np.max(nu_s)), 1e-12)) * 0.5
    elapsed = 0.0
    while elapsed < max_time:
        new = ev.advance(curve, chunk)
        scale = max(float(np.max(new.rho_s)), float(np.max(new.rho_d)), 1e-300)
        change = max(float(np.max(np.abs(new.rho_s - curve.rho_s))),
                     float(np.max(np.abs(new.rho_d - curve.rho_d)))) / scale / chunk
        curve = new
        elapsed += chunk
        if change < tol:
            return curve
    raise NoStationaryStateError(f"no convergence to a stationary state by t={max_time}")
