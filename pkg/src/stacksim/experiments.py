"""Seeded parameter sweeps and delay tables.

Every table is a list of rows with a fixed header; :func:`emit_outputs`
writes them as CSV next to a JSON manifest. Rows never carry wall-clock
values, so reruns are byte-identical; per-cell runtimes go to a separate
``*_timings.csv`` file.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import PhaseConfig, build_channel, export_channel
from .config import LinkScenario, default_scenario, make_rng, seed_sequence, validate
from .geometry import transmission_delay_D2
from .optimizer import AOPhaseOptimizer, BCDPhaseOptimizer
from .snc import InstabilityError, queueing_bound, queueing_exponent, simulate_queue, total_delay_bound

# short sweep names that move several scenario fields together
PARAMETER_ALIASES = {
    "streams": ("num_streams",),
    "atoms": ("atoms_tx", "atoms_rx"),
    "layers": ("layers_tx", "layers_rx"),
    "load": ("packet_mean",),
    "arrival": ("arrival_rate",),
    "wait": ("wait_budget",),
}

ALGORITHMS = ("BCD", "AO")

SWEEP_HEADER = ("parameter", "value", "rep", "seed", "algorithm", "status", "initial_rate",
                "final_rate", "mean_rate", "final_t_d", "td_boundary", "final_regret", "iterations")
TIMING_HEADER = ("parameter", "value", "rep", "algorithm", "runtime_s")
SURFACE_HEADER = ("streams", "rate", "T", "packet_mean", "d2", "bound", "t_b", "t_d", "status")
TAIL_HEADER = ("t_b", "empirical", "ci_half", "analytic", "departures", "dominated")
TRACE_HEADER = ("algorithm", "iteration", "rate", "proposed_rate", "t_d", "td_boundary", "T",
                "regret", "proposed_regret", "accepted")

REFERENCE_RATES = {1: 25.92, 3: 40.96, 5: 54.55}

DESIGN_DEFAULTS = {
    "phase_init": "iid uniform on (0, 2pi] from the cell seed",
    "initial_t_d": 0.6,
    "sweep_order": "TX layers 1..L then RX layers 1..K",
    "bcd_acceptance": "layer update kept only if the rate does not drop",
    "randomization_draws": 200,
    "randomization_select": "relaxed quadratic objective; principal eigenvector included",
    "sdp_solver": "low-rank row ascent, rank ceil(sqrt(2n))+1, relative gap 1e-4",
    "ao_definition": "cyclic per-atom search over a 16-point phase grid plus the incumbent phase",
    "trace_proposed_rate": "mean rate of the per-layer randomized proposals in a sweep",
    "regret": "exp(-a t_b) + exp(-c t_d) + rho t_d",
    "spatial_correlation": "sinc(2 r / lambda)",
    "correlation_sqrt": "symmetric eigen square root, negative eigenvalues clipped",
    "seed_derivation": "SeedSequence(base_seed, value_index, rep)",
}


def _package_version() -> str:
    from . import __version__
    return __version__


@dataclass(frozen=True)
class SweepSpec:
    """One swept axis with replications over a base scenario."""

    parameter: str
    values: tuple
    reps: int = 5
    base: LinkScenario = field(default_factory=default_scenario)
    out: str | None = None
    algorithms: tuple = ALGORITHMS
    max_iter: int = 20
    n_draws: int = 200
    seed: int | None = None

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}")
        fields = self.fields
        names = set(self.base.to_dict())
        bad = [f for f in fields if f not in names]
        if bad:
            raise ValueError(f"unknown sweep parameter {self.parameter!r}")
        for value in self.values:
            problems = validate(self.scenario_for(value))
            if problems:
                raise ValueError(f"{self.parameter}={value}: " + "; ".join(problems))

    @property
    def fields(self) -> tuple:
        return PARAMETER_ALIASES.get(self.parameter, (self.parameter,))

    @property
    def base_seed(self) -> int:
        return self.base.rng_seed if self.seed is None else self.seed

    def scenario_for(self, value) -> LinkScenario:
        return self.base.replace(**{f: value for f in self.fields})

    def cells(self):
        for vi, value in enumerate(self.values):
            for rep in range(self.reps):
                yield vi, value, rep


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _run_cell(args):
    spec, vi, value, rep = args
    scenario = spec.scenario_for(value)
    seed_label = f"{spec.base_seed}-{vi}-{rep}"
    rows, timings = [], []
    try:
        rng = make_rng(spec.base_seed, vi, rep)
        state = build_channel(scenario, rng)
        init = PhaseConfig.random(scenario, rng)
    except Exception as exc:  # channel construction failed; report every algorithm
        for alg in spec.algorithms:
            rows.append(_failed_row(spec, value, rep, seed_label, alg, exc))
            timings.append((spec.parameter, value, rep, alg, 0.0))
        return rows, timings
    for ai, alg in enumerate(spec.algorithms):
        child = np.random.default_rng(seed_sequence(spec.base_seed, vi, rep, ai + 1))
        t0 = time.perf_counter()
        try:
            if alg == "BCD":
                est = BCDPhaseOptimizer(scenario, max_iter=spec.max_iter, n_draws=spec.n_draws,
                                        random_state=child)
            else:
                est = AOPhaseOptimizer(scenario, max_iter=spec.max_iter, random_state=child)
            est.fit(state, init_phases=init)
            trace = est.trace_
            last = trace.rows[-1] if trace.rows else None
            rates = trace.rates if trace.rows else np.array([trace.initial_rate])
            rows.append((spec.parameter, value, rep, seed_label, alg, "ok", trace.initial_rate,
                         est.rate_, float(np.mean(rates)), est.t_d_,
                         bool(last.td_boundary) if last else False, est.regret(), est.n_iter_))
        except Exception as exc:
            rows.append(_failed_row(spec, value, rep, seed_label, alg, exc))
        timings.append((spec.parameter, value, rep, alg, time.perf_counter() - t0))
    return rows, timings


def _failed_row(spec, value, rep, seed_label, alg, exc):
    status = f"error:{type(exc).__name__}:{exc}".replace("\n", " ")
    nan = float("nan")
    return (spec.parameter, value, rep, seed_label, alg, status, nan, nan, nan, nan, False, nan, 0)


@dataclass
class Table:
    header: tuple
    rows: list

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]

    def where(self, **match) -> "Table":
        idx = {self.header.index(k): v for k, v in match.items()}
        return Table(self.header, [r for r in self.rows if all(r[i] == v for i, v in idx.items())])


def run_sweep(spec: SweepSpec, workers: int = 1) -> tuple[Table, Table]:
    """Run every (value, rep) cell; returns ``(results, timings)``.

    Rows are ordered by (value, rep, algorithm) whatever the worker count.
    """
    jobs = [(spec, vi, value, rep) for vi, value, rep in spec.cells()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = [r for res in results for r in res[0]]
    timings = [t for res in results for t in res[1]]
    return Table(SWEEP_HEADER, rows), Table(TIMING_HEADER, timings)


def mean_by(table: Table, key: str, value_col: str = "final_rate", **match) -> dict:
    """Mean of ``value_col`` over rows grouped by ``key`` (ok rows only)."""
    t = table.where(status="ok", **match)
    groups: dict = {}
    for k, v in zip(t.column(key), t.column(value_col)):
        groups.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in groups.items()}


# delay tables -------------------------------------------------------------------

def delay_surface(scenario: LinkScenario, rates: dict, T_grid, ld_grid) -> Table:
    """Total delay bound on a (T, packet_mean) grid for fixed rates per stream count."""
    rows = []
    for S, rate in sorted(rates.items()):
        s_scen = scenario.replace(num_streams=int(S))
        d2 = transmission_delay_D2(s_scen)
        for T in T_grid:
            for ld in ld_grid:
                cell = s_scen.replace(packet_mean=float(ld))
                if T <= d2:
                    rows.append((S, rate, float(T), float(ld), d2, 1.0, 0.0, 0.0, "infeasible"))
                    continue
                b = total_delay_bound(float(T), cell, rate, d2)
                status = "ok" if queueing_exponent(rate, cell) > 0 else "unstable"
                rows.append((S, rate, float(T), float(ld), d2, b.value, b.t_b, b.t_d, status))
    return Table(SURFACE_HEADER, rows)


def delay_tail(scenario: LinkScenario, v_data: float, tb_grid=None, departures: int = 100_000,
               rng=None, sigmas: float = 3.0) -> Table:
    """Simulated FIFO waiting-time tail against the analytic queueing bound."""
    rng = rng if rng is not None else make_rng(scenario.rng_seed)
    est = simulate_queue(scenario, v_data, rng=rng, t_grid=tb_grid, departures=departures)
    rows = []
    for t, p, ci in zip(est.t, est.tail, est.ci_half):
        try:
            bound = queueing_bound(float(t), scenario, v_data)
        except InstabilityError:
            bound = 1.0
        rows.append((float(t), float(p), float(ci), bound, est.departures,
                     bool(p <= bound + sigmas * ci)))
    return Table(TAIL_HEADER, rows)


def trace_table(traces: dict) -> Table:
    rows = []
    for alg, trace in traces.items():
        rows.append((alg, 0, trace.initial_rate, trace.initial_rate, trace.initial_td, False,
                     math.nan, trace.initial_regret, trace.initial_regret, ""))
        for r in trace.table():
            rows.append((alg, *r))
    return Table(TRACE_HEADER, rows)


def single_run(scenario: LinkScenario, max_iter: int = 20, n_draws: int = 200, seed=None):
    """One channel draw optimised by both algorithms from the same start."""
    seed = scenario.rng_seed if seed is None else seed
    rng = make_rng(seed, 0, 0)
    state = build_channel(scenario, rng)
    init = PhaseConfig.random(scenario, rng)
    bcd = BCDPhaseOptimizer(scenario, max_iter=max_iter, n_draws=n_draws,
                            random_state=np.random.default_rng(seed_sequence(seed, 0, 0, 1)))
    ao = AOPhaseOptimizer(scenario, max_iter=max_iter,
                          random_state=np.random.default_rng(seed_sequence(seed, 0, 0, 2)))
    bcd.fit(state, init_phases=init)
    ao.fit(state, init_phases=init)
    return state, {"BCD": bcd, "AO": ao}


# output ---------------------------------------------------------------------------

def write_table(table: Table, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.header)
            for row in table.rows:
                w.writerow([_fmt(x) for x in row])
    except OSError as exc:
        raise OSError(f"cannot write table {path}: {exc}") from exc
    return path


def emit_outputs(tables: dict, out_dir, scenario: LinkScenario, seeds=None, extra=None,
                 wall_time: float | None = None, timings: dict | None = None) -> dict:
    """Write ``name.csv`` per table plus ``manifest.json``; returns written paths."""
    out = Path(out_dir)
    written = {}
    for name, table in tables.items():
        written[name] = write_table(table, out / f"{name}.csv")
    for name, table in (timings or {}).items():
        written[f"{name}_timings"] = write_table(table, out / f"{name}_timings.csv")
    manifest = {
        "tool": "stacksim",
        "version": _package_version(),
        "config_hash": scenario.config_hash(),
        "scenario": scenario.to_dict(),
        "seeds": seeds,
        "design_defaults": DESIGN_DEFAULTS,
        "tables": {k: str(v.name) for k, v in written.items()},
        "wall_time_s": wall_time,
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    try:
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc}") from exc
    written["manifest"] = path
    return written


def export_phases(path, state, estimator) -> None:
    export_channel(state, path, phases=estimator.phases_)


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)
