"""Command-line experiment runner.

Usage: ``latentbook <subcommand> [--config FILE] [--out DIR] [--seed N]
[--workers N]``.  Every run writes its outputs together with
``resolved_config.json`` (the validated configuration and the package
version) into the output directory.  Outputs contain no timestamps, so a
re-run with the same configuration and seed reproduces them byte for byte.

Exit codes: 0 success, 2 invalid configuration or input, 3 numerical
failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import analytics, auction, config as cfgmod, evolution, lob, wiener_hopf
from . import agents
from .errors import ConfigurationError, LatentBookError, NumericalError
from .msd import MsdCurve, PriceGrid

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
SUBCOMMANDS = ("stationary", "evolve", "auction-sweep", "wiener-hopf", "agent-sim",
               "ingest", "impact")

log = logging.getLogger("latentbook")


# --- small writers ---------------------------------------------------------------

def _write(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _key_values(rows) -> str:
    out = []
    for k, v in rows:
        if isinstance(v, float):
            out.append(f"{k} = {v!r}")
        else:
            out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


def _table(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating))
                              else str(v) for v in row))
    return "\n".join(lines) + "\n"


def _fan_out(fn, items, workers):
    """Ordered map over ``items`` with at most ``workers`` processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))


# --- subcommands ---------------------------------------------------------------

def cmd_stationary(cfg, out, workers):
    params = cfgmod.build_params(cfg, tau=0.0)
    grid = cfgmod.build_grid(cfg)
    closed = analytics.stationary_closed_form(params, grid)
    numeric = evolution.stationary_numeric(params, grid, cfgmod.build_evolution(cfg))
    closed.to_csv(os.path.join(out, "stationary_closed_form.csv"))
    numeric.to_csv(os.path.join(out, "stationary_numeric.csv"))
    dev = max(float(np.max(np.abs(closed.rho_s - numeric.rho_s))),
              float(np.max(np.abs(closed.rho_d - numeric.rho_d))))
    scale = max(float(np.max(closed.rho_s)), float(np.max(closed.rho_d)))
    _write(os.path.join(out, "stationary_report.txt"), _key_values([
        ("linf_deviation", dev),
        ("relative_deviation", dev / scale if scale > 0 else 0.0)]))


def _initial_curve(cfg, params, grid):
    kind = cfg["evolution"]["initial"]
    if kind == "zero":
        return MsdCurve.zeros(grid)
    curve = analytics.stationary_closed_form(params, grid)
    if kind == "truncated_stationary":
        y_star, _ = auction.clear(curve)
        curve = auction.truncate(curve, y_star)
    return curve


def cmd_evolve(cfg, out, workers):
    params = cfgmod.build_params(cfg, tau=0.0)
    grid = cfgmod.build_grid(cfg)
    t = float(cfg["evolution"]["t"])
    initial = _initial_curve(cfg, params, grid)
    fd = evolution.evolve(initial, params, cfgmod.build_evolution(cfg), t)
    initial.to_csv(os.path.join(out, "initial.csv"))
    fd.to_csv(os.path.join(out, "evolved.csv"))
    rows = [("t", t)]
    if params.constant_nu is not None:
        green = evolution.evolve_green(initial, params, t)
        green.to_csv(os.path.join(out, "evolved_green.csv"))
        dev = max(float(np.max(np.abs(fd.rho_s - green.rho_s))),
                  float(np.max(np.abs(fd.rho_d - green.rho_d))))
        rows.append(("linf_deviation_fd_green", dev))
        # nodes further than four diffusion lengths from either grid end
        reach = 4.0 * math.sqrt(2.0 * params.diffusivity * t)
        y = grid.nodes
        inner = (y >= grid.y_min + reach) & (y <= grid.y_max - reach)
        if np.any(inner):
            dev_in = max(float(np.max(np.abs(fd.rho_s - green.rho_s)[inner])),
                         float(np.max(np.abs(fd.rho_d - green.rho_d)[inner])))
            rows.append(("linf_deviation_interior", dev_in))
            rows.append(("interior", f"[{float(y[inner][0])!r}, {float(y[inner][-1])!r}]"))
    _write(os.path.join(out, "evolve_report.txt"), _key_values(rows))


def _sweep_point(args):
    cfg, tau = args
    params = cfgmod.build_params(cfg, tau=tau)
    a = cfg["auction"]
    D = params.diffusivity
    scale = math.sqrt(D * tau)
    half = max(-cfg["grid"]["y_min"], cfg["grid"]["y_max"])
    grid = PriceGrid.symmetric(half, scale / a["cells_per_scale"])
    evo = cfgmod.build_evolution(cfg, dt=tau / a["steps_per_period"])
    if a["n_auctions"] > 0:
        series = auction.run_auction_sequence(MsdCurve.zeros(grid), params, evo,
                                              int(a["n_auctions"]), stop_at_cycle=True)
        pre = series.last.pre_curve
        v_star = series.last.v_star
    else:
        cycle = auction.steady_cycle(params, grid, evo)
        pre = cycle.pre_curve
        v_star = cycle.outcome.v_star
    lam = auction.kyle_lambda_fd(pre, a["dq_fraction"] * v_star)
    impacts = []
    for k in a["q_list"]:
        q = k * v_star
        try:
            impacts.append((q, auction.impact(pre, q)))
        except LatentBookError:
            impacts.append((q, math.nan))
    return tau, lam, v_star, impacts, pre.to_csv()


def _loglog_slope(x, y):
    x, y = np.log(np.asarray(x)), np.log(np.asarray(y))
    return float(np.polyfit(x, y, 1)[0])


def cmd_auction_sweep(cfg, out, workers):
    taus = sorted(float(t) for t in cfg["auction"]["tau_list"])[::-1]
    results = _fan_out(_sweep_point, [(cfg, t) for t in taus], workers)
    lam_rows, imp_rows = [], []
    for i, (tau, lam, v, impacts, curve_csv) in enumerate(results):
        lam_rows.append((tau, lam, v))
        imp_rows += [(tau, q, y) for q, y in impacts]
        _write(os.path.join(out, f"pre_auction_{i:02d}.csv"), curve_csv)
    _write(os.path.join(out, "lambda.csv"), _table(("tau", "lambda", "v_star"), lam_rows))
    _write(os.path.join(out, "impact.csv"), _table(("tau", "q", "impact"), imp_rows))
    params = cfgmod.build_params(cfg)
    L = analytics.liquidity_L(params)
    rows = [("L", L)]
    if len(taus) >= 2:
        lam = [r[1] for r in lam_rows]
        rows.append(("lambda_tau_exponent", _loglog_slope(taus, lam)))
        # crossover where the linear law meets the square-root law
        q_star = [2.0 / (L * lv * lv) for lv in lam]
        rows.append(("crossover_tau_exponent", _loglog_slope(taus, q_star)))
    _write(os.path.join(out, "sweep_report.txt"), _key_values(rows))


def cmd_wiener_hopf(cfg, out, workers):
    w = cfg["wiener_hopf"]
    sol = wiener_hopf.solve_fixed_point(float(w["u_max"]), float(w["du"]), float(w["tol"]),
                                        int(w["max_iter"]))
    sol.to_csv(os.path.join(out, "phi.csv"))
    _write(os.path.join(out, "phi_metadata.txt"), _key_values(sorted(sol.metadata().items())))
    if w["compare_tau"]:
        params = cfgmod.build_params(cfg)
        rows = wiener_hopf.compare_with_auction_sequence(
            params, w["compare_tau"], sol,
            cells_per_scale=int(cfg["auction"]["cells_per_scale"]),
            steps_per_period=int(cfg["auction"]["steps_per_period"]))
        _write(os.path.join(out, "compare.csv"), _table(
            ("tau", "deviation", "phi_at_zero", "v_star_ratio"),
            [(r.tau, r.deviation, r.phi_at_zero, r.v_star_ratio) for r in rows]))


def cmd_agent_sim(cfg, out, workers):
    sim = cfgmod.build_sim(cfg)
    res = agents.simulate(sim)
    res.events_csv(os.path.join(out, "events.csv"))
    res.prices_csv(os.path.join(out, "prices.csv"))
    res.auctions_csv(os.path.join(out, "auctions.csv"))
    rows = [("effective_diffusivity", sim.diffusivity),
            ("final_population", len(res.population)),
            ("auctions", len(res.auctions)),
            ("skipped_auctions", res.skipped_auctions)]
    if res.snapshots:
        res.mean_snapshot().to_csv(os.path.join(out, "msd.csv"))
    n_paths = int(cfg["agent_sim"]["n_paths"])
    if n_paths > 0:
        _, report = agents.price_paths(sim, n_paths)
        _write(os.path.join(out, "variance.txt"), report.to_text())
    _write(os.path.join(out, "agent_report.txt"), _key_values(rows))


def cmd_ingest(cfg, out, workers, input_path=None):
    i = cfg["ingest"]
    path = input_path or i["input"]
    if not path:
        raise ConfigurationError("ingest needs --input or ingest.input")
    snaps = lob.load_snapshots(path)
    if not snaps:
        raise ConfigurationError("no snapshots in input")
    curve, counts = lob.average_msd(snaps, float(i["bin_width"]), float(i["max_offset"]),
                                    i["weighting"])
    curve.to_csv(os.path.join(out, "msd.csv"))
    _write(os.path.join(out, "counts.csv"), _table(
        ("y", "ask_levels", "bid_levels"),
        [(float(y), int(a), int(b)) for y, a, b in zip(curve.grid.nodes, counts.ask,
                                                     counts.bid)]))
    window = i["window"] or lob.default_fit_window(snaps, float(i["bin_width"]))
    fit = lob.fit_v_shape(curve, window)
    _write(os.path.join(out, "fit.txt"), fit.to_text())


def cmd_impact(cfg, out, workers):
    params = cfgmod.build_params(cfg)
    tau = float(cfg["impact"]["tau"])
    L = analytics.liquidity_L(params)
    D = params.diffusivity
    Q = np.asarray(cfg["impact"]["q_list"], dtype=float) * L * D * tau
    curve = analytics.impact_curve(Q, L, D, tau)
    curve.to_csv(os.path.join(out, "impact.csv"))
    _write(os.path.join(out, "liquidity.txt"),
           analytics.frequent_auction_report(params, tau).to_text())


COMMANDS = {
    "stationary": cmd_stationary,
    "evolve": cmd_evolve,
    "auction-sweep": cmd_auction_sweep,
    "wiener-hopf": cmd_wiener_hopf,
    "agent-sim": cmd_agent_sim,
    "ingest": cmd_ingest,
    "impact": cmd_impact,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentbook", description="Latent order book experiments.")
    parser.add_argument("--version", action="version", version=f"latentbook {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        p.add_argument("--seed", type=int, help="unsigned 64-bit seed (agent_sim.seed)")
        p.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")
        if name == "ingest":
            p.add_argument("--input", help="snapshot CSV (overrides ingest.input)")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load(args.config) if args.config else cfgmod.validate({})
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg["agent_sim"]["seed"] = args.seed
        if args.workers < 1:
            raise ConfigurationError("--workers must be >= 1")
        if args.out:
            cfg["output"]["directory"] = args.out
        if args.command == "ingest" and args.input:
            cfg["ingest"]["input"] = args.input
        out = cfg["output"]["directory"]
        os.makedirs(out, exist_ok=True)
        resolved = {"version": f"latentbook {__version__}", "command": args.command,
                    "config": cfg}
        _write(os.path.join(out, "resolved_config.json"),
               json.dumps(resolved, indent=2, sort_keys=True) + "\n")
        COMMANDS[args.command](cfg, out, args.workers)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LatentBookError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
