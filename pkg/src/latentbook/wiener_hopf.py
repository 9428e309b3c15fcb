"""Universal pre-auction book shape in the frequent-auction limit.

The rescaled supply density just before an auction, ``phi(u)`` with
``u = y / sqrt(D tau)``, is the non-trivial solution of the half-line
fixed-point equation

    phi(u) = int_0^inf phi(w) exp(-(u - w)^2 / 4) / sqrt(4 pi) dw,

fixed up to a multiplicative constant by its affine growth at large ``u``.
We normalize the solution to unit asymptotic slope, so ``phi(u) ~ u + u0``.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

from .errors import ConfigurationError, IterationLimitError

_SQRT_PI = np.sqrt(np.pi)

#: Literature value of the intercept, used only as a fallback.
U0_REFERENCE = 0.824


def gaussian_kernel(x):
    """Heat kernel at unit diffusivity and unit time, ``exp(-x^2/4)/sqrt(4 pi)``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.25 * x * x) / (2.0 * _SQRT_PI)


def kernel_matrix(u: np.ndarray) -> np.ndarray:
    """Product-integration matrix of the kernel on ``[0, u[-1]]``.

    ``(M @ phi)[i]`` is the exact integral of the piecewise-linear
    interpolant of ``phi`` against ``g(u_i - w)``.
    """
    u = np.asarray(u, dtype=float)
    h = np.diff(u)
    a = u[None, :-1] - u[:, None]  # cell left ends relative to u_i
    b = u[None, 1:] - u[:, None]
    i0 = 0.5 * (erf(0.5 * b) - erf(0.5 * a))
    i1 = (np.exp(-0.25 * a * a) - np.exp(-0.25 * b * b)) / _SQRT_PI
    left = (b * i0 - i1) / h
    right = (i1 - a * i0) / h
    m = np.zeros((len(u), len(u)))
    m[:, :-1] += left
    m[:, 1:] += right
    return m


def tail_integrals(u, u_max: float):
    """``(int_U^inf g(u-w) dw, int_U^inf w g(u-w) dw)`` in closed form."""
    u = np.asarray(u, dtype=float)
    a = u_max - u
    t0 = 0.5 * erfc(0.5 * a)
    t1 = np.exp(-0.25 * a * a) / _SQRT_PI + u * t0
    return t0, t1


def _fit_window(u_max: float):
    return 0.5 * u_max, 0.75 * u_max


def affine_fit(u, phi, window):
    """Least-squares ``(slope, intercept)`` of ``phi`` on ``window``."""
    u = np.asarray(u)
    sel = (u >= window[0] - 1e-12) & (u <= window[1] + 1e-12)
    slope, intercept = np.polyfit(u[sel], np.asarray(phi)[sel], 1)
    return float(slope), float(intercept)


def _check_grid(u):
    u = np.asarray(u, dtype=float)
    if u.ndim != 1 or len(u) < 3 or u[0] != 0.0:
        raise ConfigurationError("u grid must start at 0")
    h = np.diff(u)
    if np.any(h <= 0) or not np.allclose(h, h[0], rtol=1e-9, atol=0):
        raise ConfigurationError("u grid must be uniform and increasing")
    if u[-1] < 12.0 - 1e-9:
        raise ConfigurationError(f"U_max must be >= 12, got {u[-1]}")
    if h[0] > 0.05 + 1e-12:
        raise ConfigurationError(f"du must be <= 0.05 to resolve the kernel, got {h[0]}")
    return u


class KernelOperator:
    """Kernel operator on a fixed grid with affine tail closure.

    Beyond ``U_max`` the argument is replaced by its least-squares affine
    fit on ``[U_max/2, 3 U_max/4]``; the tail contribution is evaluated with
    closed-form Gaussian moments.
    """

    def __init__(self, u):
        self.u = _check_grid(u)
        self.u_max = float(self.u[-1])
        self.window = _fit_window(self.u_max)
        self.matrix = kernel_matrix(self.u)
        self.t0, self.t1 = tail_integrals(self.u, self.u_max)

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=float)
        slope, intercept = affine_fit(self.u, phi, self.window)
        return self.matrix @ phi + slope * self.t1 + intercept * self.t0


def apply_kernel(phi, u):
    """One application of the kernel operator to samples ``phi`` on ``u``."""
    return KernelOperator(u)(phi)


def make_grid(u_max: float = 24.0, du: float = 0.05) -> np.ndarray:
    n = int(round(u_max / du))
    return np.linspace(0.0, n * du, n + 1)


@dataclass(frozen=True, eq=False)
class PhiSolution:
    """Normalized fixed point ``phi(u) ~ slope * (u + u0)`` with slope 1."""

    u_grid: np.ndarray
    phi: np.ndarray
    u0: float
    slope: float
    residual: float  # max |phi - K[phi]| on [0, U_max/2]
    iterations: int
    history: tuple = ()

    def __call__(self, u):
        """Evaluate phi, continuing affinely beyond the grid."""
        u = np.asarray(u, dtype=float)
        inside = np.interp(u, self.u_grid, self.phi)
        out = np.where(u > self.u_grid[-1], self.slope * (u + self.u0), inside)
        return float(out) if out.ndim == 0 else out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["u", "phi"])
        for u, p in zip(self.u_grid, self.phi):
            w.writerow([repr(float(u)), repr(float(p))])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def metadata(self) -> dict:
        return {"u0": self.u0, "slope": self.slope, "residual": self.residual,
                "iterations": self.iterations,
                "u_max": float(self.u_grid[-1]),
                "du": float(self.u_grid[1] - self.u_grid[0])}


def solve_fixed_point(u_max: float = 24.0, du: float = 0.05, tol: float = 1e-10,
                      max_iter: int = 20000, initial=None) -> PhiSolution:
    """Normalized power iteration ``phi <- K[phi]`` from ``phi_0(u) = u``.

    Each iterate is divided by its fitted asymptotic slope.  Iteration
    stops when successive iterates differ by less than ``tol`` in the
    max norm.  ``initial`` may be a callable giving another starting guess.
    """
    if not tol > 0:
        raise ConfigurationError("tol must be > 0")
    u = make_grid(u_max, du)
    op = KernelOperator(u)
    phi = u.copy() if initial is None else np.asarray(initial(u), dtype=float)
    history = []
    for it in range(1, max_iter + 1):
        new = op(phi)
        slope, _ = affine_fit(u, new, op.window)
        new /= slope
        change = float(np.max(np.abs(new - phi)))
        history.append(change)
        phi = new
        if change < tol:
            break
    else:
        raise IterationLimitError(
            f"no convergence after {max_iter} iterations "
            f"(last change {history[-1]:.3e})", history)
    slope, intercept = affine_fit(u, phi, op.window)
    near = u <= 0.5 * op.u_max
    residual = float(np.max(np.abs(phi - op(phi))[near]))
    return PhiSolution(u, phi, intercept / slope, slope, residual, it,
                       tuple(history))


@dataclass(frozen=True)
class ShapeDeviation:
    """Distance between a rescaled steady-cycle book and ``phi``."""

    tau: float
    deviation: float  # max |rho_s / (L sqrt(D tau)) - phi| on the window
    phi_at_zero: float  # rescaled book at u = 0
    v_star_ratio: float  # v* / (L D tau)


def compare_with_auction_sequence(params, tau_list, solution: PhiSolution | None = None,
                                  window=(0.0, 3.0), cells_per_scale: int = 10,
                                  half_width: float | None = None,
                                  steps_per_period: int = 20):
    """Rescale steady-cycle pre-auction books and compare with ``phi``.

    For each ``tau`` the steady cycle is computed on a symmetric grid with
    spacing ``sqrt(D tau) / cells_per_scale``; the supply density is mapped
    to ``(u, rho_s / (L sqrt(D tau)))`` and compared with ``solution`` on
    ``window``.  Requires symmetric flow with constant cancellation.
    """
    from .analytics import liquidity_L
    from .auction import steady_cycle
    from .evolution import EvolutionConfig
    from .msd import PriceGrid

    if solution is None:
        solution = solve_fixed_point()
    nu = params.constant_nu
    if nu is None or not nu > 0:
        raise ConfigurationError("comparison needs a constant cancellation rate > 0")
    D = params.diffusivity
    L = liquidity_L(params)
    if half_width is None:
        half_width = 8.0 * np.sqrt(D / nu)
    u = np.linspace(window[0], window[1], 301)
    rows = []
    for tau in tau_list:
        tau = float(tau)
        scale = np.sqrt(D * tau)
        if not scale < np.sqrt(D / nu):
            raise ConfigurationError(
                f"tau = {tau} is not small compared with 1/nu")
        grid = PriceGrid.symmetric(half_width, scale / cells_per_scale)
        cycle = steady_cycle(params.replace(tau=tau), grid,
                             EvolutionConfig(dt=tau / steps_per_period))
        rescaled = np.interp(u * scale, grid.nodes, cycle.pre_curve.rho_s) / (L * scale)
        rows.append(ShapeDeviation(
            tau, float(np.max(np.abs(rescaled - solution(u)))), float(rescaled[0]),
            cycle.outcome.v_star / (L * D * tau)))
    return rows
