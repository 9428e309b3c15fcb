"""Closed-form and semi-analytic results.

Walrasian (infrequent-auction) quantities follow from the stationary
solution of the free-evolution equation; the frequent-auction quantities
(liquidity, wrong-side density, impact scaling function) follow from the
universal affine book ``rho ~ L (y + u0 sqrt(D tau))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize
from scipy.special import erf, erfc

from .errors import (ConfigurationError, DomainError, IterationLimitError,
                     NoStationaryStateError, UnsupportedParameterizationError)
from .msd import (BUY, SELL, Constant, ExponentialPair, ModelParams, MsdCurve,
                  PriceGrid, StepPair, Tabulated, is_symmetric_flow)
from .wiener_hopf import U0_REFERENCE, solve_fixed_point

_SQRT_PI = math.sqrt(math.pi)


# --- universal intercept ----------------------------------------------------

@lru_cache(maxsize=1)
def _computed_u0():
    try:
        return solve_fixed_point(u_max=24.0, du=0.05, tol=1e-10).u0, "computed"
    except IterationLimitError:
        return U0_REFERENCE, "literature"


def default_u0() -> float:
    """Intercept of the universal book, from the fixed-point solver."""
    return _computed_u0()[0]


def u0_source() -> str:
    """``"computed"`` or ``"literature"`` (fallback constant 0.824)."""
    return _computed_u0()[1]


def _u0(u0):
    return default_u0() if u0 is None else float(u0)


def wrong_side_volume_factor(u0=None) -> float:
    """``1/2 + u0/sqrt(pi)``: auction volume in units of ``L D tau``
    implied by the affine book approximation (about 0.965)."""
    return 0.5 + _u0(u0) / _SQRT_PI


# --- Walrasian stationary books ---------------------------------------------

def _require_nu(params: ModelParams) -> float:
    nu = params.constant_nu
    if nu is None:
        raise UnsupportedParameterizationError(
            "closed forms need a constant cancellation rate nu")
    if not nu > 0:
        raise NoStationaryStateError("a stationary state needs nu > 0")
    return nu


def _check_exponential(params: ModelParams, nu: float):
    mu = params.deposition.mu
    if not nu > params.diffusivity * mu ** 2:
        raise NoStationaryStateError(
            f"no stationary state: need nu > D mu^2 "
            f"(nu={nu}, D mu^2={params.diffusivity * mu ** 2})")


def _exp_smoothed(x_tab, f_tab, y, kappa):
    """``int f(x) exp(-kappa |x - y|) dx`` for piecewise-linear ``f``.

    ``f`` is held constant outside the table.  Exact segment by segment.
    """
    y = np.asarray(y, dtype=float)[:, None]
    a = x_tab[None, :-1] - y
    b = x_tab[None, 1:] - y
    fa = f_tab[None, :-1]
    slope = (np.diff(f_tab) / np.diff(x_tab))[None, :]
    k = kappa

    def right(lo, hi):  # s >= 0, weight exp(-k s), f = fa + slope (s - a)
        p = fa - slope * a
        def prim(s):
            return -np.exp(-k * s) * ((p + slope * s) / k + slope / k ** 2)
        return prim(hi) - prim(lo)

    def left(lo, hi):  # s <= 0, weight exp(k s)
        p = fa - slope * a
        def prim(s):
            return np.exp(k * s) * ((p + slope * s) / k - slope / k ** 2)
        return prim(hi) - prim(lo)

    total = (right(np.maximum(a, 0), np.maximum(b, 0))
             + left(np.minimum(a, 0), np.minimum(b, 0))).sum(axis=1)
    # constant continuation beyond the table
    lo_gap = x_tab[0] - y[:, 0]
    hi_gap = x_tab[-1] - y[:, 0]
    total += np.where(lo_gap <= 0, f_tab[0] * np.exp(k * lo_gap) / k,
                      f_tab[0] * (2.0 - np.exp(-k * lo_gap)) / k)
    total += np.where(hi_gap >= 0, f_tab[-1] * np.exp(-k * hi_gap) / k,
                      f_tab[-1] * (2.0 - np.exp(k * hi_gap)) / k)
    return total


def stationary_density(params: ModelParams, side, y):
    """Stationary density of one side (``"sell"`` -> supply, ``"buy"`` -> demand)."""
    nu = _require_nu(params)
    D = params.diffusivity
    kappa = math.sqrt(nu / D)
    w = params.deposition
    y = np.asarray(y, dtype=float)
    if isinstance(w, Constant):
        return np.full_like(y, w.level / nu)
    if isinstance(w, ExponentialPair):
        _check_exponential(params, nu)
        gap = nu - D * w.mu ** 2
        if side == BUY:
            return w.omega_plus * np.exp(-w.mu * y) / gap
        return w.omega_minus * np.exp(w.mu * y) / gap
    if isinstance(w, StepPair):
        decay = 1.0 - np.exp(-kappa * np.abs(y))
        if side == BUY:
            return w.omega_plus / (2 * nu) * (1.0 - np.sign(y) * decay)
        return w.omega_minus / (2 * nu) * (1.0 + np.sign(y) * decay)
    if isinstance(w, Tabulated):
        f = w.buy if side == BUY else w.sell
        smoothed = _exp_smoothed(w.y, f, y.ravel(), kappa).reshape(y.shape)
        return smoothed / (2.0 * math.sqrt(nu * D))
    raise UnsupportedParameterizationError(f"unknown deposition {w!r}")


def stationary_closed_form(params: ModelParams, grid: PriceGrid) -> MsdCurve:
    """Stationary (Walrasian) book sampled on ``grid``."""
    y = grid.nodes
    rho_s = stationary_density(params, SELL, y)
    rho_d = stationary_density(params, BUY, y)
    return MsdCurve(grid, rho_s, rho_d)


def walras_price_volume(omega_plus, omega_minus, mu, nu, D):
    """Clearing offset and volume of exponential stationary books."""
    if min(omega_plus, omega_minus, mu, nu, D) <= 0:
        raise DomainError("all rates must be > 0")
    if not nu > D * mu ** 2:
        raise DomainError(f"need nu > D mu^2 (nu={nu}, D mu^2={D * mu ** 2})")
    y_star = math.log(omega_plus / omega_minus) / (2.0 * mu)
    v_star = math.sqrt(omega_plus * omega_minus) / (mu * (nu - D * mu ** 2))
    return y_star, v_star


def _step_walras(w: StepPair, nu, D):
    """Clearing offset and volume for step flow (root of S = D)."""
    k = math.sqrt(nu / D)

    def supply(y):
        c = w.omega_minus / (2 * nu * k)
        return c * math.exp(k * y) if y <= 0 else c * (1 + 2 * k * y - (1 - math.exp(-k * y)))

    def demand(y):
        c = w.omega_plus / (2 * nu * k)
        return c * math.exp(-k * y) if y >= 0 else c * (1 - 2 * k * y - (1 - math.exp(k * y)))

    if w.omega_plus == w.omega_minus:
        return 0.0, supply(0.0)
    span = 50.0 / k + abs(math.log(max(w.omega_plus, 1e-300) / max(w.omega_minus, 1e-300))) / k
    y_star = optimize.brentq(lambda y: supply(y) - demand(y), -span, span, xtol=1e-14)
    return y_star, supply(y_star)


def kyle_lambda(book) -> float:
    """Linear impact slope ``1/(rho_s(y*) + rho_d(y*))`` of a stationary book.

    ``book`` is either ``ModelParams`` (closed forms where they exist) or an
    ``MsdCurve`` (densities read off the curve at its clearing price).
    Returns ``math.inf`` when both densities vanish at the clearing price.
    """
    if isinstance(book, MsdCurve):
        from .auction import clear
        y_star, _ = clear(book)
        rs, rd = book.density_at(y_star)
        denom = float(rs + rd)
        return math.inf if denom <= 0 else 1.0 / denom
    params = book
    nu = _require_nu(params)
    D = params.diffusivity
    w = params.deposition
    if isinstance(w, ExponentialPair):
        _check_exponential(params, nu)
        return (nu - D * w.mu ** 2) / (2.0 * math.sqrt(w.omega_plus * w.omega_minus))
    if isinstance(w, StepPair):
        if w.omega_plus == w.omega_minus:
            return math.inf if w.omega_plus == 0 else nu / w.omega_plus
        y_star, _ = _step_walras(w, nu, D)
    elif isinstance(w, Constant):
        return math.inf if w.level == 0 else nu / (2.0 * w.level)
    elif is_symmetric_flow(w):
        return lambda_symmetric_integral(params)
    else:
        # y* from the exact stationary curves on a wide grid
        half = max(abs(w.y[0]), abs(w.y[-1])) + 40.0 * math.sqrt(D / nu)
        grid = PriceGrid.symmetric(half, half / 4000)
        return kyle_lambda(stationary_closed_form(params, grid))
    denom = float(stationary_density(params, SELL, y_star)
                  + stationary_density(params, BUY, y_star))
    return math.inf if denom <= 0 else 1.0 / denom


def lambda_symmetric_integral(params: ModelParams) -> float:
    """Impact slope of a symmetric flow from the exponentially weighted
    integral of the buy-side deposition rate (quadrature)."""
    nu = _require_nu(params)
    D = params.diffusivity
    k = math.sqrt(nu / D)
    w = params.deposition
    if not is_symmetric_flow(w):
        raise UnsupportedParameterizationError("needs symmetric order flow")

    def f(y):
        weight = math.exp(-k * abs(y))
        # the weight underflows before a growing rate overflows (nu > D mu^2)
        return 0.0 if weight == 0.0 else float(w.evaluate(BUY, y)) * weight

    neg, _ = integrate.quad(f, -np.inf, 0.0, epsabs=0, epsrel=1e-12, limit=200)
    pos, _ = integrate.quad(f, 0.0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    total = neg + pos
    return math.inf if total <= 0 else math.sqrt(nu * D) / total


# --- frequent-auction liquidity -------------------------------------------

def liquidity_L(params: ModelParams, side=SELL) -> float:
    """Slope ``L`` of the continuous-auction book at the price.

    Closed form for step and constant flow, quadrature otherwise.  ``side``
    selects supply (``"sell"``, integrating over y > 0) or demand.
    """
    nu = _require_nu(params)
    D = params.diffusivity
    w = params.deposition
    if isinstance(w, StepPair):
        level = w.omega_minus if side == SELL else w.omega_plus
        return level / math.sqrt(nu * D)
    if isinstance(w, Constant):
        return w.level / math.sqrt(nu * D)
    k = math.sqrt(nu / D)
    sign = 1.0 if side == SELL else -1.0
    f = lambda y: math.exp(-k * y) * float(w.evaluate(side, sign * y))
    val, _ = integrate.quad(f, 0.0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    return val / D


def phi_stationary(y, params: ModelParams, side=SELL):
    """Stationary supply at ``tau = 0`` (vanishing at the price), by nested
    quadrature.  Grows like ``L y`` for small ``y``."""
    nu = _require_nu(params)
    D = params.diffusivity
    k = math.sqrt(nu / D)
    w = params.deposition
    sign = 1.0 if side == SELL else -1.0
    rate = lambda s: float(w.evaluate(side, sign * s))

    def inner(yp):  # exp(k y') int_{y'}^inf exp(-k y'') omega(y'') dy''
        val, _ = integrate.quad(lambda s: math.exp(-k * (s - yp)) * rate(s),
                                yp, np.inf, epsabs=0, epsrel=1e-12, limit=200)
        return val

    def one(yv):
        if yv < 0:
            raise DomainError("phi_stationary needs y >= 0")
        if yv == 0:
            return 0.0
        val, _ = integrate.quad(lambda yp: math.exp(-k * (yv - yp)) * inner(yp),
                                0.0, yv, epsabs=0, epsrel=1e-11, limit=200)
        return val / D

    if np.ndim(y) == 0:
        return one(float(y))
    return np.array([one(float(v)) for v in np.ravel(y)]).reshape(np.shape(y))


# --- universal book near the price ----------------------------------------

def post_auction_F(u, u0=None):
    """Fraction ``F(u)`` of the wrong-side volume lying beyond ``u``;
    ``F(0) = 1`` and ``F(inf) = 0``."""
    u0 = _u0(u0)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("F(u) needs u >= 0")
    tail = 0.5 * erfc(0.5 * u)
    val = (tail * (0.5 * u * u - u0 * u + 1.0)
           - np.exp(-0.25 * u * u) / _SQRT_PI * (0.5 * u - u0))
    out = val / wrong_side_volume_factor(u0)
    return float(out) if out.ndim == 0 else out


def _wrong_side_bracket(u, u0):
    return np.exp(-0.25 * u * u) / _SQRT_PI + 0.5 * (u0 - u) * erfc(0.5 * u)


def wrong_side_density(u, L, D, tau, u0=None):
    """Supply density a rescaled distance ``u`` below the price just before
    an auction, in the affine-book approximation."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise DomainError("wrong_side_density needs u >= 0")
    out = L * math.sqrt(D * tau) * _wrong_side_bracket(u, _u0(u0))
    return float(out) if out.ndim == 0 else out


def impact_scaling_Y(q, u0=None, volume_factor=None):
    """Rescaled impact ``Y(q)``, root of
    ``u0 Y + Y^2/2 + c (1 - F(Y)) = q``.

    ``c`` is the wrong-side volume in units of ``L D tau``; it defaults to
    the affine-book value :func:`wrong_side_volume_factor` so that the
    small-``q`` slope is ``1/(rho_s(0+) + rho_d(0+))`` of the same book.
    """
    u0 = _u0(u0)
    c = wrong_side_volume_factor(u0) if volume_factor is None else float(volume_factor)

    def one(qv):
        if qv < 0:
            raise DomainError("Y(q) needs q >= 0")
        if qv == 0:
            return 0.0
        g = lambda Y: u0 * Y + 0.5 * Y * Y + c * (1.0 - post_auction_F(Y, u0)) - qv
        hi = math.sqrt(2.0 * qv) + u0 + 1.0
        return optimize.brentq(g, 0.0, hi, xtol=1e-13, rtol=4 * np.finfo(float).eps,
                               maxiter=200)

    if np.ndim(q) == 0:
        return one(float(q))
    return np.array([one(float(v)) for v in np.ravel(q)]).reshape(np.shape(q))


def impact_full(Q, L, D, tau, u0=None, volume_factor=None):
    """Impact of an extra buy volume ``Q``: ``sqrt(D tau) Y(Q / (L D tau))``.

    Valid while the impact stays inside the linear-book region.
    """
    if not tau > 0:
        raise DomainError("impact_full needs tau > 0")
    scale = math.sqrt(D * tau)
    q = np.asarray(Q, dtype=float) / (L * D * tau)
    return scale * impact_scaling_Y(q if q.ndim else float(q), u0, volume_factor)


def sd_curves_near_price(y, L, D, tau, u0=None, v_star=None):
    """Cumulative ``(S(y), D(y))`` of the universal book near the price.

    On the owning side the curves are quadratic; on the wrong side they
    decay as ``v* F(|y| / sqrt(D tau))``.  ``v_star`` defaults to ``L D tau``.
    """
    u0 = _u0(u0)
    v = L * D * tau if v_star is None else float(v_star)
    scale = math.sqrt(D * tau)
    y0 = u0 * scale
    y = np.asarray(y, dtype=float)
    up = L * (y0 * y + 0.5 * y * y) + v
    down = L * (-y0 * y + 0.5 * y * y) + v
    if tau > 0:
        wrong = v * post_auction_F(np.abs(y) / scale, u0)
    else:
        wrong = np.zeros_like(y)
    S = np.where(y >= 0, up, wrong)
    Dm = np.where(y <= 0, down, wrong)
    if S.ndim == 0:
        return float(S), float(Dm)
    return S, Dm


# --- reports -----------------------------------------------------------------

REGIME_LINEAR_MAX = 0.1
REGIME_SQRT_MIN = 10.0


@dataclass(frozen=True, eq=False)
class ImpactCurve:
    """Impact samples with regime labels relative to ``v* = L D tau``."""

    q: np.ndarray
    impact: np.ndarray
    regime: tuple

    def to_csv(self, path=None) -> str:
        lines = ["q,impact,regime"]
        lines += [f"{float(a)!r},{float(b)!r},{r}"
                  for a, b, r in zip(self.q, self.impact, self.regime)]
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def regime_of(q_rescaled: float) -> str:
    if q_rescaled <= REGIME_LINEAR_MAX:
        return "linear"
    if q_rescaled >= REGIME_SQRT_MIN:
        return "square_root"
    return "crossover"


def impact_curve(Q, L, D, tau, u0=None) -> ImpactCurve:
    Q = np.sort(np.asarray(Q, dtype=float))
    if np.any(Q < 0):
        raise DomainError("volumes must be >= 0")
    impact = np.asarray(impact_full(Q, L, D, tau, u0), dtype=float)
    regimes = tuple(regime_of(q) for q in Q / (L * D * tau))
    return ImpactCurve(Q, impact, regimes)


@dataclass(frozen=True)
class LiquidityReport:
    L: float
    lam: float
    v_star: float
    u0: float = float("nan")
    u0_source: str = ""

    def to_text(self) -> str:
        rows = [("L", self.L), ("lambda", self.lam), ("v_star", self.v_star),
                ("u0", self.u0), ("u0_source", self.u0_source)]
        return "".join(f"{k} = {v!r}\n" if not isinstance(v, str) else f"{k} = {v}\n"
                       for k, v in rows)


def walrasian_report(params: ModelParams) -> LiquidityReport:
    """Liquidity, impact slope and auction volume of the stationary book."""
    nu = _require_nu(params)
    w = params.deposition
    if isinstance(w, ExponentialPair):
        _, v = walras_price_volume(w.omega_plus, w.omega_minus, w.mu, nu,
                                   params.diffusivity)
    elif isinstance(w, StepPair):
        _, v = _step_walras(w, nu, params.diffusivity)
    else:
        raise UnsupportedParameterizationError(
            "Walrasian volume available for exponential and step flow")
    return LiquidityReport(liquidity_L(params), kyle_lambda(params), v,
                           default_u0(), u0_source())


def frequent_auction_report(params: ModelParams, tau: float) -> LiquidityReport:
    """Universal-book report at small ``tau``: ``v* = L D tau`` and
    ``lambda = 1/(rho_s(0+) + rho_d(0+))`` of the affine book."""
    if not tau > 0:
        raise ConfigurationError("tau must be > 0")
    L = liquidity_L(params)
    u0 = default_u0()
    D = params.diffusivity
    slope = impact_scaling_Y(1e-8, u0) / 1e-8  # dY/dq at 0
    lam = slope * math.sqrt(D * tau) / (L * D * tau)
    return LiquidityReport(L, lam, L * D * tau, u0, u0_source())
