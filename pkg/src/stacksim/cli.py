"""Command-line entry point: ``stacksim <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import LinkScenario, apply_overrides, default_scenario, load_scenario, warnings

log = logging.getLogger("stacksim")

LARGE_SCALE = {"reps": 20, "iters": 50}


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _values(text: str) -> list:
    """Comma list; integers stay integers."""
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        num = float(tok)
        out.append(int(num) if num.is_integer() and "." not in tok and "e" not in tok.lower() else num)
    return out


def _grid(text: str) -> np.ndarray:
    """Either ``start:stop:num`` or a comma list."""
    if ":" in text:
        start, stop, num = text.split(":")
        return np.linspace(float(start), float(stop), int(num))
    return np.array(_floats(text))


def _rates(text: str) -> dict:
    pairs = (p.split(":") for p in text.split(",") if p.strip())
    return {int(s): float(r) for s, r in pairs}


def _scenario(args) -> LinkScenario:
    if args.config:
        scenario = load_scenario(args.config, args.set)
    else:
        scenario = apply_overrides(default_scenario(), args.set)
    if args.seed is not None:
        scenario = scenario.replace(rng_seed=args.seed)
    for msg in warnings(scenario):
        log.warning(msg)
    return scenario


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML scenario file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one scenario field (repeatable)")
    p.add_argument("--seed", type=int, help="base seed (defaults to the scenario's rng_seed)")
    p.add_argument("--out", default="results", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stacksim", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate-sweep", help="BCD and AO rates over one swept parameter")
    _common(p)
    p.add_argument("--param", default="streams",
                   help="scenario field or alias (streams, atoms, layers, load, arrival, wait)")
    p.add_argument("--values", default="1,2,3,4,5", help="comma-separated values")
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--algorithms", default="BCD,AO")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--paper-scale", action="store_true",
                   help=f"use {LARGE_SCALE['reps']} reps and {LARGE_SCALE['iters']} iterations")

    p = sub.add_parser("delay-surface", help="total delay bound over T and packet size")
    _common(p)
    p.add_argument("--rates", default="1:25.92,3:40.96,5:54.55", help="S:rate pairs")
    p.add_argument("--T-grid", dest="T_grid", default="0.2:2.0:10")
    p.add_argument("--ld-grid", dest="ld_grid", default="1e7:2e8:20")

    p = sub.add_parser("delay-tail", help="simulated queue tail against the analytic bound")
    _common(p)
    p.add_argument("--rate", type=float, default=40.96, help="v_data in bit/s/Hz")
    p.add_argument("--tb-grid", dest="tb_grid", default="0:2:21")
    p.add_argument("--departures", type=int, default=100_000)

    p = sub.add_parser("single-run", help="one channel draw, BCD and AO traces")
    _common(p)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--draws", type=int, default=200)
    return parser


def cmd_rate_sweep(args, scenario) -> dict:
    reps, iters = args.reps, args.iters
    if args.paper_scale:
        reps, iters = LARGE_SCALE["reps"], LARGE_SCALE["iters"]
    spec = ex.SweepSpec(parameter=args.param, values=tuple(_values(args.values)), reps=reps,
                        base=scenario, out=args.out, max_iter=iters, n_draws=args.draws,
                        algorithms=tuple(a.strip() for a in args.algorithms.split(",") if a.strip()),
                        seed=scenario.rng_seed)
    t0 = time.perf_counter()
    table, timings = ex.run_sweep(spec, workers=args.workers)
    failed = [r for r in table.rows if r[5] != "ok"]
    for r in failed:
        log.warning("cell %s=%s rep %s %s: %s", r[0], r[1], r[2], r[4], r[5])
    return ex.emit_outputs({"rate_sweep": table}, args.out, scenario,
                           seeds={"base": spec.base_seed, "derivation": "(base, value_index, rep)"},
                           extra={"sweep": {"parameter": spec.parameter, "values": list(spec.values),
                                            "reps": reps, "max_iter": iters, "draws": args.draws}},
                           wall_time=time.perf_counter() - t0,
                           timings={"rate_sweep": timings})


def cmd_delay_surface(args, scenario) -> dict:
    t0 = time.perf_counter()
    table = ex.delay_surface(scenario, _rates(args.rates), _grid(args.T_grid), _grid(args.ld_grid))
    return ex.emit_outputs({"delay_surface": table}, args.out, scenario,
                           wall_time=time.perf_counter() - t0)


def cmd_delay_tail(args, scenario) -> dict:
    t0 = time.perf_counter()
    table = ex.delay_tail(scenario, args.rate, _grid(args.tb_grid), args.departures)
    return ex.emit_outputs({"delay_tail": table}, args.out, scenario,
                           seeds={"base": scenario.rng_seed}, wall_time=time.perf_counter() - t0)


def cmd_single_run(args, scenario) -> dict:
    t0 = time.perf_counter()
    state, fits = ex.single_run(scenario, args.iters, args.draws)
    table = ex.trace_table({k: est.trace_ for k, est in fits.items()})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, est in fits.items():
        ex.export_phases(out / f"phases_{name}.npz", state, est)
    return ex.emit_outputs({"trace": table}, out, scenario, seeds={"base": scenario.rng_seed},
                           wall_time=time.perf_counter() - t0)


COMMANDS = {
    "rate-sweep": cmd_rate_sweep,
    "delay-surface": cmd_delay_surface,
    "delay-tail": cmd_delay_tail,
    "single-run": cmd_single_run,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        scenario = _scenario(args)
        written = COMMANDS[args.command](args, scenario)
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return 2
    for name, path in written.items():
        log.info("wrote %s: %s", name, path)
    print(written["manifest"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
