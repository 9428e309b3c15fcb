"""Order-book snapshots: parsing, mid-centred averaging and V-shape fits.

Snapshot files are CSV with header ``timestamp,side,price,quantity`` where
``side`` is ``B`` (bid) or ``S`` (ask); all rows sharing a timestamp form
one snapshot.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FitError, ParseError, ValidationError
from .msd import MsdCurve, PriceGrid

HEADER = ("timestamp", "side", "price", "quantity")
SIDES = {"B": "bid", "S": "ask"}


@dataclass(frozen=True)
class SnapshotFormat:
    """CSV layout of a snapshot file."""

    delimiter: str = ","
    header: bool = True


@dataclass(frozen=True, eq=False)
class Snapshot:
    """One book: bids sorted by decreasing price, asks by increasing price.

    ``bids`` and ``asks`` are ``(k, 2)`` arrays of ``(price, quantity)``.
    """

    timestamp: str
    bids: np.ndarray
    asks: np.ndarray

    def __post_init__(self):
        for name, arr in (("bids", self.bids), ("asks", self.asks)):
            arr = np.asarray(arr, dtype=float).reshape(-1, 2)
            if len(arr) == 0:
                raise ValidationError(f"snapshot {self.timestamp}: no {name}")
            if np.any(~np.isfinite(arr)) or np.any(arr[:, 1] < 0):
                raise ValidationError(
                    f"snapshot {self.timestamp}: quantities must be finite and >= 0")
            order = np.argsort(-arr[:, 0] if name == "bids" else arr[:, 0], kind="stable")
            arr = arr[order]
            if np.any(np.diff(arr[:, 0]) == 0):
                raise ValidationError(f"snapshot {self.timestamp}: repeated {name} price")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not self.best_bid < self.best_ask:
            raise ValidationError(
                f"snapshot {self.timestamp}: crossed book "
                f"(bid {self.best_bid!r} >= ask {self.best_ask!r})")

    @property
    def best_bid(self) -> float:
        return float(self.bids[0, 0])

    @property
    def best_ask(self) -> float:
        return float(self.asks[0, 0])

    @property
    def mid(self) -> float:
        return 0.5 * (self.best_bid + self.best_ask)

    @property
    def levels(self):
        """``(side, price, quantity)`` tuples, bids first."""
        return ([("bid", float(p), float(q)) for p, q in self.bids]
                + [("ask", float(p), float(q)) for p, q in self.asks])

    def shifted(self, offset: float) -> "Snapshot":
        """Same book with every price moved by ``offset``."""
        return Snapshot(self.timestamp, self.bids + [offset, 0.0], self.asks + [offset, 0.0])


def _timestamp_key(ts: str):
    try:
        return (0, float(ts), ts)
    except ValueError:
        return (1, 0.0, ts)


def parse_snapshots(text: str, fmt: SnapshotFormat = SnapshotFormat()) -> list:
    """Parse snapshot CSV text; see :func:`load_snapshots`."""
    groups: dict = {}
    reader = csv.reader(io.StringIO(text), delimiter=fmt.delimiter)
    first = True
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if first and fmt.header:
            first = False
            if tuple(c.strip() for c in row) != HEADER:
                raise ParseError(f"expected header {','.join(HEADER)}", lineno)
            continue
        first = False
        if len(row) != 4:
            raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
        ts, side, price, qty = (c.strip() for c in row)
        if side not in SIDES:
            raise ParseError(f"side must be B or S, got {side!r}", lineno)
        try:
            price_v, qty_v = float(price), float(qty)
        except ValueError:
            raise ParseError("price and quantity must be numbers",
                             lineno) from None
        if not (math.isfinite(price_v) and math.isfinite(qty_v)):
            raise ParseError("non-finite number", lineno)
        if not ts:
            raise ParseError("empty timestamp", lineno)
        bids, asks = groups.setdefault(ts, ([], []))
        (bids if side == "B" else asks).append((price_v, qty_v))
    return [Snapshot(ts, np.array(b, dtype=float).reshape(-1, 2),
                     np.array(a, dtype=float).reshape(-1, 2))
            for ts, (b, a) in sorted(groups.items(), key=lambda kv: _timestamp_key(kv[0]))]


def load_snapshots(path, fmt: SnapshotFormat = SnapshotFormat()) -> list:
    """Read a snapshot file into a list of :class:`Snapshot` sorted by time.

    Raises :class:`ParseError` (with the line number) on malformed rows and
    :class:`ValidationError` on crossed or otherwise invalid books.
    """
    with open(path, newline="") as fh:
        return parse_snapshots(fh.read(), fmt)


def format_snapshots(snapshots) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for snap in snapshots:
        for p, q in snap.bids:
            w.writerow([snap.timestamp, "B", repr(float(p)), repr(float(q))])
        for p, q in snap.asks:
            w.writerow([snap.timestamp, "S", repr(float(p)), repr(float(q))])
    return buf.getvalue()


def write_snapshots(snapshots, path) -> str:
    text = format_snapshots(snapshots)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text


# --- averaging ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BinCounts:
    """Number of book levels that fell in each bin, summed over snapshots."""

    ask: np.ndarray
    bid: np.ndarray


def _grid_for(bin_width: float, max_offset: float) -> PriceGrid:
    if not (bin_width > 0 and max_offset > 0):
        raise ConfigurationError("bin width and max offset must be > 0")
    half = int(round(max_offset / bin_width))
    if half < 8:
        raise ConfigurationError("max_offset must span at least 8 bins")
    return PriceGrid(-half * bin_width, half * bin_width, 2 * half)


def bin_snapshot(snapshot: Snapshot, grid: PriceGrid):
    """Quantities per bin (asks, bids) and level counts for one snapshot.

    Bins of width ``dy`` are centred on the grid nodes; levels are placed by
    their offset ``price - mid``.
    """
    dy = grid.dy
    n = grid.n + 1
    out = []
    for arr in (snapshot.asks, snapshot.bids):
        y = arr[:, 0] - snapshot.mid
        idx = np.floor((y - grid.y_min) / dy + 0.5).astype(int)
        ok = (idx >= 0) & (idx < n)
        qty = np.bincount(idx[ok], weights=arr[ok, 1], minlength=n)
        cnt = np.bincount(idx[ok], minlength=n)
        out.append((qty, cnt))
    return out


def average_msd(snapshots, bin_width: float, max_offset: float,
                weighting: str = "equal"):
    """Mid-centred average density of the book.

    Each snapshot is binned (quantity per unit price) and the binned curves
    are averaged with equal weights, or weighted by the binned quantity of
    each snapshot with ``weighting="volume"``.  Asks give the supply
    density and bids the demand density.  Returns ``(curve, counts)``.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ConfigurationError("average_msd needs at least one snapshot")
    if weighting not in ("equal", "volume"):
        raise ConfigurationError("weighting must be 'equal' or 'volume'")
    grid = _grid_for(bin_width, max_offset)
    n = grid.n + 1
    rs, rd = np.zeros(n), np.zeros(n)
    cs, cd = np.zeros(n, dtype=int), np.zeros(n, dtype=int)
    total_w = 0.0
    for snap in snapshots:
        (qa, ca), (qb, cb) = bin_snapshot(snap, grid)
        w = 1.0 if weighting == "equal" else float(qa.sum() + qb.sum())
        rs += w * qa
        rd += w * qb
        cs += ca
        cd += cb
        total_w += w
    if total_w <= 0:
        raise ConfigurationError("no volume inside the binning window")
    dy = grid.dy
    curve = MsdCurve(grid, rs / (total_w * dy), rd / (total_w * dy))
    return curve, BinCounts(cs, cd)


# --- V-shape fit ---------------------------------------------------------------

@dataclass(frozen=True)
class VShapeFit:
    """Least-squares lines ``rho = slope * |y| + intercept`` on each side."""

    L_bid: float
    L_ask: float
    intercept_bid: float
    intercept_ask: float
    se_bid: float
    se_ask: float
    se_intercept_bid: float
    se_intercept_ask: float
    r2_bid: float
    r2_ask: float
    window: tuple
    n_bins: int

    def to_text(self) -> str:
        rows = [(k, getattr(self, k)) for k in (
            "L_bid", "L_ask", "intercept_bid", "intercept_ask", "se_bid", "se_ask",
            "se_intercept_bid", "se_intercept_ask", "r2_bid", "r2_ask")]
        rows += [("window_lo", self.window[0]), ("window_hi", self.window[1]),
                 ("n_bins", self.n_bins)]
        return "".join(f"{k} = {v!r}\n" for k, v in rows)


def _ols(x, y):
    n = len(x)
    X = np.column_stack([x, np.ones(n)])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    s2 = ss_res / (n - 2)
    cov = s2 * np.linalg.inv(X.T @ X)
    return (float(coef[0]), float(coef[1]), float(math.sqrt(cov[0, 0])),
            float(math.sqrt(cov[1, 1])), float(r2))


def default_fit_window(snapshots, bin_width: float):
    """``[one bin, 5% of the mean mid-price]`` in offset."""
    mids = [s.mid for s in snapshots]
    return (bin_width, 0.05 * float(np.mean(mids)))


def fit_v_shape(curve: MsdCurve, window=None) -> VShapeFit:
    """Fit density against ``|y|`` on each side over ``window = (lo, hi)``.

    Bins closer to the price than one bin width are always excluded.
    Bids are read from the demand density at ``y < 0`` and asks from the
    supply density at ``y > 0``.
    """
    grid = curve.grid
    dy = grid.dy
    lo, hi = (dy, max(-grid.y_min, grid.y_max)) if window is None else map(float, window)
    lo = max(lo, dy)
    if not hi > lo:
        raise FitError(f"degenerate fit window [{lo}, {hi}]")
    y = grid.nodes
    tol = 1e-9 * dy
    ask = (y >= lo - tol) & (y <= hi + tol)
    bid = (-y >= lo - tol) & (-y <= hi + tol)
    n = int(min(ask.sum(), bid.sum()))
    if n < 5:
        raise FitError(f"fit window holds {n} bins per side, need at least 5")
    a = _ols(y[ask], curve.rho_s[ask])
    b = _ols(-y[bid], curve.rho_d[bid])
    return VShapeFit(b[0], a[0], b[1], a[1], b[2], a[2], b[3], a[3], b[4], a[4],
                     (lo, hi), n)


# --- synthetic data ------------------------------------------------------------

def synthetic_snapshots(L: float, y0: float, saturation: float = math.inf,
                        noise: float = 0.1, n_snapshots: int = 96, seed: int = 0,
                        tick: float = 0.01, n_levels: int = 500, mid: float = 100.0,
                        mid_step: int = 2) -> list:
    """Books with expected binned density ``min(L (|y| + y0), saturation)``.

    Levels sit at ``mid +- k tick`` for ``k = 1..n_levels`` with quantity
    ``tick * density * g`` where ``g`` is Gamma noise of mean 1 and
    coefficient of variation ``noise``.  The mid-price performs a random
    walk of up to ``mid_step`` ticks between snapshots, taken every 900
    time units.
    """
    if not (L > 0 and y0 >= 0 and saturation > 0 and noise >= 0 and tick > 0):
        raise ConfigurationError("synthetic parameters must be positive")
    if n_snapshots < 1 or n_levels < 1:
        raise ConfigurationError("need at least one snapshot and one level")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    k = np.arange(1, n_levels + 1)
    density = np.minimum(L * (k * tick + y0), saturation)
    m_ticks = int(round(mid / tick))
    snaps = []
    for i in range(n_snapshots):
        if i:
            m_ticks += int(rng.integers(-mid_step, mid_step + 1))
        if m_ticks - n_levels <= 0:
            raise ConfigurationError("mid-price too close to zero for the level count")
        if noise > 0:
            shape = 1.0 / noise ** 2
            g = rng.gamma(shape, 1.0 / shape, size=(2, n_levels))
        else:
            g = np.ones((2, n_levels))
        bid_p = (m_ticks - k) * tick
        ask_p = (m_ticks + k) * tick
        snaps.append(Snapshot(str(900 * i),
                              np.column_stack([bid_p, tick * density * g[0]]),
                              np.column_stack([ask_p, tick * density * g[1]])))
    return snaps


def generate_synthetic(L: float, y0: float, saturation: float = math.inf,
                       noise: float = 0.1, n_snapshots: int = 96, seed: int = 0,
                       path=None, **kw) -> str:
    """Write synthetic snapshots (see :func:`synthetic_snapshots`) as CSV.

    Returns the file text; writes it to ``path`` when given.
    """
    text = format_snapshots(synthetic_snapshots(L, y0, saturation, noise, n_snapshots,
                                                seed, **kw))
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text
