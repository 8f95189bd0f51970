"""Command-line entry point: ``crashbo run | compare | oracle``.

Trace CSV schema, one row per iteration::

    iter,x_1,...,x_D,label,y_f,y_g,eta_cons,c_hat,regret,regret_best

Floats are written with ``repr`` so they parse back to the same double; absent
values (observations of failed runs, thresholds of baselines) are empty cells.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources

from . import __version__
from .benchmarks import BENCHMARK_NAMES, CONSTANTS_FILE
from .config import METHODS, ExperimentConfig, config_from_dict, config_to_dict, load_config
from .harness import (_run_one, aggregate, repetition_seed, run_repetition, worker_count)

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2


def trace_columns(dim: int) -> list[str]:
    return (["iter"] + [f"x_{d + 1}" for d in range(dim)]
            + ["label", "y_f", "y_g", "eta_cons", "c_hat", "regret", "regret_best"])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_trace_csv(trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_columns(trace.dim))
        for r in trace.records:
            w.writerow([r.iteration] + [_cell(float(v)) for v in r.x]
                       + [r.label] + [_cell(v) for v in (r.y_f, r.y_g, r.eta_cons, r.c_hat,
                                                          r.regret, r.regret_best)])


def read_trace_csv(path) -> list[dict]:
    """Parse a trace file back into rows of ints, floats and None."""
    rows = []
    with open(path, newline="") as fh:
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None
                elif k in ("iter", "label"):
                    row[k] = int(v)
                else:
                    row[k] = float(v)
            rows.append(row)
    return rows


def run_id(cfg: ExperimentConfig) -> str:
    return (f"{cfg.benchmark}-{cfg.method}-seed{cfg.seed}"
            f"-M{cfg.iterations}-R{cfg.repetitions}")


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _build_parser():
    p = argparse.ArgumentParser(prog="crashbo", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run repetitions of one method on one benchmark")
    r.add_argument("--benchmark", choices=BENCHMARK_NAMES)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--iters", type=int, help="evaluations per run (default 100)")
    r.add_argument("--reps", type=int, help="repetitions (default 100)")
    r.add_argument("--seed", type=int, help="master seed (default 0)")
    r.add_argument("--out", default="runs", help="output directory root")
    r.add_argument("--config", help="JSON config overriding the default hyperpriors")
    r.add_argument("--noiseless", action="store_true", help="disable observation noise")

    c = sub.add_parser("compare", help="combine run summaries into a bar-plot table")
    c.add_argument("summaries", nargs="+", help="summary.json files, one per method")
    c.add_argument("--out", help="CSV path (default stdout)")

    o = sub.add_parser("oracle", help="recompute f_min and the high-cost bound")
    o.add_argument("--benchmark", choices=BENCHMARK_NAMES, action="append",
                   help="repeatable; default all")
    o.add_argument("--probes", type=int, default=1_000_000)
    o.add_argument("--starts", type=int, default=100)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", help="constants file (default: the packaged one)")
    return p


def _config_from_args(args) -> ExperimentConfig:
    overrides = {"benchmark": args.benchmark, "method": args.method,
                 "iterations": args.iters, "repetitions": args.reps, "seed": args.seed}
    if args.noiseless:
        overrides["noisy"] = False
    if args.config:
        return load_config(args.config, **overrides)
    return config_from_dict({}, **overrides)


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_run(args) -> int:
    try:
        cfg = _config_from_args(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"crashbo run: {exc}", file=sys.stderr)
        return EXIT_USAGE
    out_dir = os.path.join(args.out, run_id(cfg))
    os.makedirs(out_dir, exist_ok=True)
    reps = list(range(cfg.repetitions))
    trace_paths = {r: os.path.join(out_dir, f"trace_rep{r:03d}.csv") for r in reps}
    manifest = {
        "run_id": run_id(cfg),
        "version": __version__,
        "config": config_to_dict(cfg),
        "seed_scheme": "SeedSequence([master_seed, repetition])",
        "repetition_seeds": {str(r): repetition_seed(cfg.seed, r) for r in reps},
        "outputs": {"traces": {str(r): os.path.basename(p) for r, p in trace_paths.items()},
                    "summary": "summary.json"},
        "started": _now(),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)

    workers = worker_count()
    traces = []
    if workers > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_one, [(cfg, r) for r in reps])
            for tr in results:
                write_trace_csv(tr, trace_paths[tr.repetition])
                traces.append(tr)
    else:
        for r in reps:
            tr = run_repetition(cfg, r)
            write_trace_csv(tr, trace_paths[r])
            traces.append(tr)

    manifest["finished"] = _now()
    summary = {
        "benchmark": cfg.benchmark,
        "method": cfg.method,
        "aggregate": aggregate(traces)[cfg.method],
        "runs": [{
            "repetition": t.repetition, "seed": t.seed, "final_regret": t.final_regret,
            "best_guess_regret": t.best_guess_regret, "c_hat": t.c_hat,
            "x_best": None if t.x_best is None else [float(v) for v in t.x_best],
            "best_guess_flagged": t.best_guess_flagged, "n_failures": t.n_failures,
            "failed": t.failed, "error": t.error, "wall_clock": t.wall_clock,
            "trace": os.path.basename(trace_paths[t.repetition]),
        } for t in traces],
        "manifest": manifest,
    }
    _write_json(os.path.join(out_dir, "summary.json"), summary)
    print(os.path.join(out_dir, "summary.json"))
    return EXIT_PARTIAL if any(t.failed for t in traces) else EXIT_OK


COMPARE_COLUMNS = ["method", "mean_final_regret", "std_final_regret", "mean_c_hat", "std_c_hat"]


def cmd_compare(args) -> int:
    if len(args.summaries) < 2:
        print("crashbo compare: need summaries for at least two methods", file=sys.stderr)
        return EXIT_USAGE
    rows, benchmarks = [], set()
    for path in args.summaries:
        try:
            with open(path) as fh:
                s = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            print(f"crashbo compare: {path}: {exc}", file=sys.stderr)
            return EXIT_USAGE
        benchmarks.add(s["benchmark"])
        agg = s["aggregate"]
        reg = agg.get("final_regret") or {}
        chat = agg.get("c_hat") or {}
        rows.append([s["method"], reg.get("mean"), reg.get("std"),
                     chat.get("mean"), chat.get("std")])
    if len(benchmarks) != 1:
        print(f"crashbo compare: summaries mix benchmarks {sorted(benchmarks)}", file=sys.stderr)
        return EXIT_USAGE
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COMPARE_COLUMNS)
        for row in rows:
            w.writerow([row[0]] + [_cell(None if v is None else float(v)) for v in row[1:]])
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import write_constants

    path = args.out or str(resources.files(__package__).joinpath(CONSTANTS_FILE))
    names = args.benchmark or list(BENCHMARK_NAMES)
    table = write_constants(path, names, probes=args.probes, starts=args.starts, seed=args.seed)
    for name in names:
        e = table[name]
        print(f"{name}: f_min={e['f_min']!r} hc_bound={e['hc_bound']!r}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"run": cmd_run, "compare": cmd_compare, "oracle": cmd_oracle}[args.command]
    return handler(args)
