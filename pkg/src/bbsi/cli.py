"""Command-line front end: ``bbsi <subcommand> [options]``.

Subcommands
-----------
bench-kernels  time GEMM/LU/GETRS and print the ratio table
solve          run a solver on a synthetic or ``.bbm`` matrix
scale          sweep one axis (layers, blocksize, bandwidth, threads)
tune           auto-tune a DDRGF plan from measured kernel ratios
validate       compare a solver against the dense oracle

Every shared option can also be set through an environment variable named
``BBSI_`` plus the upper-cased option name (``BBSI_THREADS=4``,
``BBSI_BLOCK_SIZE=64``).  Command-line values win over the environment.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import make_layout, oracle_selected_inverse, random_spd_like
from .cost import autotune, cost_ddrgf, cost_rgf, orchestrate
from .ddrgf import DomainPlan, ddrgf, parse_plan
from .exceptions import BBSIError, OracleTooLargeError
from .io import load_bbm, save_bbm
from .kernels import CSV_HEADER, KernelRatios, benchmark_kernels, kernel_threads, roofline
from .rgf import rgf_fused, rgf_ndiag, rgf_tridiag

__all__ = ["main", "build_parser", "RunRecord", "RUN_COLUMNS", "run_solver", "fit_loglog_slope"]

ENV_PREFIX = "BBSI_"
SOLVERS = ("rgf", "nrgf", "fused", "ddrgf", "auto")

# name -> (type, default)
SHARED = {
    "layers": (int, 40),
    "block_size": (int, 16),
    "bandwidth": (int, 1),
    "solver": (str, "rgf"),
    "plan": (str, "auto"),
    "threads": (int, 1),
    "reps": (int, 30),
    "seed": (int, 1234),
    "dominance": (float, 2.0),
    "validate": (bool, False),
    "oracle_cap": (int, 4096),
    "out": (str, None),
    "matrix": (str, None),
}

RUN_COLUMNS = [
    "solver", "layers", "block_size", "bandwidth", "plan", "threads", "reps",
    "wall_time_ms", "min_time_ms", "max_time_ms", "n_lu", "n_getrs", "n_gemm",
    "max_block_error", "seed",
]


@dataclass
class RunRecord:
    solver: str
    layers: int
    block_size: int
    bandwidth: int
    plan: str
    threads: int
    reps: int
    wall_time_ms: float
    min_time_ms: float
    max_time_ms: float
    n_lu: int
    n_getrs: int
    n_gemm: int
    max_block_error: float | None
    seed: int
    worst_block: tuple | None = field(default=None, repr=False)

    def row(self) -> list:
        d = asdict(self)
        return [d[c] for c in RUN_COLUMNS]

    def to_dict(self) -> dict:
        return {c: v for c, v in zip(RUN_COLUMNS, self.row())}


def _env_value(name, typ):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    if raw is None:
        return None
    if typ is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return typ(raw)


def _resolve(args):
    """Fill unset shared options from the environment, then defaults."""
    for name, (typ, default) in SHARED.items():
        if getattr(args, name, None) is None:
            env = _env_value(name, typ)
            setattr(args, name, default if env is None else env)
    return args


def _shared_parser():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("shared options")
    g.add_argument("--layers", type=int, help="number of principal layers")
    g.add_argument("--block-size", type=int, help="block size b_s")
    g.add_argument("--bandwidth", type=int, help="block bandwidth w")
    g.add_argument("--solver", help="rgf | nrgf | fused | ddrgf | auto (comma list for scale)")
    g.add_argument("--plan", help='DDRGF plan such as "s2:4,1,1", "rgf" or "auto"')
    g.add_argument("--threads", type=int, help="worker threads")
    g.add_argument("--reps", type=int, help="timed repetitions (default 30)")
    g.add_argument("--seed", type=int, help="random seed for synthetic matrices")
    g.add_argument("--dominance", type=float, help="diagonal dominance factor")
    g.add_argument("--validate", action="store_const", const=True, help="compare with the dense oracle")
    g.add_argument("--oracle-cap", type=int, help="largest dimension the oracle will handle")
    g.add_argument("--out", help="write results to a .csv or .json file")
    g.add_argument("--matrix", help="read the matrix from a .bbm file")
    g.add_argument("--ratios", help="JSON file with measured kernel ratios")
    return p


def build_parser() -> argparse.ArgumentParser:
    shared = _shared_parser()
    ap = argparse.ArgumentParser(prog="bbsi", description="Selected inversion of block banded matrices.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench-kernels", parents=[shared], help="kernel microbenchmark")
    p.add_argument("--sizes", default="16,32,64,128,256,512,1024",
                   help="comma separated block sizes (empty for none)")
    p.add_argument("--samples", type=int, help="timed samples per kernel (size dependent default)")
    p.add_argument("--peak", type=float, help="peak GFLOP/s for the roofline columns")
    p.add_argument("--mem-bw", type=float, help="memory bandwidth in GB/s for the roofline columns")

    p = sub.add_parser("solve", parents=[shared], help="run one solver")
    p.add_argument("--tol", type=float, default=1e-10, help="validation tolerance")
    p.add_argument("--write-matrix", help="also store the input matrix as .bbm")

    p = sub.add_parser("scale", parents=[shared], help="scaling sweep")
    p.add_argument("--axis", choices=("layers", "blocksize", "bandwidth", "threads"), required=True)
    p.add_argument("--grid", required=True, help="comma separated axis values")

    p = sub.add_parser("tune", parents=[shared], help="auto-tune a DDRGF plan")
    p.add_argument("--max-levels", type=int, default=5)
    p.add_argument("--s2-max", type=int, default=4)
    p.add_argument("--samples", type=int, default=50, help="samples for the ratio measurement")
    p.add_argument("--search-terminal-threads", action="store_true")
    p.add_argument("--execute", action="store_true", help="also time the plan and the RGF baseline")

    p = sub.add_parser("validate", parents=[shared], help="check a solver against the oracle")
    p.add_argument("--tol", type=float, default=1e-10)
    return ap


# ---------------------------------------------------------------------------
# helpers shared by the subcommands


def _ints(text: str) -> list:
    return [int(t) for t in text.split(",") if t.strip()]


def _load_ratios(path):
    if not path:
        return None
    with open(path) as fh:
        return KernelRatios.from_dict(json.load(fh))


def _matrix(args, layers=None, block_size=None, bandwidth=None):
    if args.matrix:
        return load_bbm(args.matrix)
    n = layers or args.layers
    w = args.bandwidth if bandwidth is None else bandwidth
    layout = make_layout(n, block_size or args.block_size, min(w, n - 1))
    return random_spd_like(layout, seed=args.seed, dominance=args.dominance)


def _plan_for(args, m, threads):
    text = args.plan
    if text in (None, "auto"):
        ratios = _load_ratios(args.ratios) or benchmark_kernels(m.layout.block_size, samples=20)
        plan = autotune(m.num_layers, m.layout.block_size, threads, ratios, include_rgf=False)
        return plan
    plan = parse_plan(text, threads)
    return plan.validate(m.num_layers)


def run_solver(m, solver: str, plan: DomainPlan | None = None, threads: int = 1):
    """Run one solver once; returns (inverse, counters)."""
    if solver == "rgf":
        if m.bandwidth > 1:
            return rgf_ndiag(m)
        with kernel_threads(threads if threads > 1 else None):
            return rgf_tridiag(m)
    if solver == "nrgf":
        return rgf_ndiag(m)
    if solver == "fused":
        return rgf_fused(m)
    if solver == "ddrgf":
        return ddrgf(m, plan or DomainPlan((), threads))
    raise ValueError(f"unknown solver {solver!r}")


def _choose_auto(args, m, threads):
    ratios = _load_ratios(args.ratios) or benchmark_kernels(m.layout.block_size, samples=20)
    choice = orchestrate(m.num_layers, m.layout.block_size, threads, ratios)
    return choice.solver, choice.plan


def _time_solver(args, m, solver, threads):
    plan = None
    if solver == "auto":
        solver, plan = _choose_auto(args, m, threads)
    elif solver == "ddrgf":
        plan = _plan_for(args, m, threads)
    times, out = [], None
    for _ in range(max(1, args.reps)):
        t0 = time.perf_counter()
        out = run_solver(m, solver, plan, threads)
        times.append(time.perf_counter() - t0)
    inv, cnt = out
    err = worst = None
    if args.validate:
        if m.layout.total_dim > args.oracle_cap:
            raise OracleTooLargeError(
                f"dimension {m.layout.total_dim} exceeds the oracle cap {args.oracle_cap}"
            )
        ref = oracle_selected_inverse(m)
        worst, err = inv.worst_block(ref)
    rec = RunRecord(
        solver=solver,
        layers=m.num_layers,
        block_size=m.layout.block_size if m.layout.is_uniform else -1,
        bandwidth=m.bandwidth,
        plan=plan.spec_string() if plan is not None else "",
        threads=threads,
        reps=len(times),
        wall_time_ms=1e3 * float(np.mean(times)),
        min_time_ms=1e3 * min(times),
        max_time_ms=1e3 * max(times),
        n_lu=cnt.n_lu,
        n_getrs=cnt.n_getrs,
        n_gemm=cnt.n_gemm,
        max_block_error=err,
        seed=args.seed,
        worst_block=worst,
    )
    return rec


def _emit(header, rows, out, stream, extra=None):
    """Write rows as CSV (default) or JSON depending on the ``out`` suffix."""
    if out and out.lower().endswith(".json"):
        payload = {"rows": [dict(zip(header, r)) for r in rows]}
        if extra:
            payload.update(extra)
        with open(out, "w") as fh:
            json.dump(payload, fh, indent=2, default=str)
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(buf.getvalue())
    else:
        stream.write(buf.getvalue())


def fit_loglog_slope(xs, ys) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    return float(np.polyfit(np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float)), 1)[0])


# ---------------------------------------------------------------------------
# subcommands


def cmd_bench_kernels(args, stream) -> int:
    sizes = _ints(args.sizes)
    header = list(CSV_HEADER)
    roof = args.peak is not None and args.mem_bw is not None
    if roof:
        header += ["intensity", "attainable_gflops", "measured_gflops"]
    rows = []
    for n in sizes:
        r = benchmark_kernels(n, args.samples, seed=args.seed)
        row = r.csv_row()
        if roof and n >= 3:
            pt = roofline(n, args.peak, args.mem_bw, r.t_gemm)
            row += [pt.intensity, pt.attainable, pt.measured]
        elif roof:
            row += ["", "", ""]
        rows.append(row)
    _emit(header, rows, args.out, stream)
    return 0


def _report_failure(rec, tol, stream) -> int:
    if rec.max_block_error is not None and not rec.max_block_error <= tol:
        a, b = rec.worst_block
        print(f"validation FAILED: block ({a}, {b}) relative error {rec.max_block_error:.3e} > {tol:g}",
              file=sys.stderr)
        return 2
    return 0


def cmd_solve(args, stream) -> int:
    m = _matrix(args)
    if getattr(args, "write_matrix", None):
        save_bbm(m, args.write_matrix)
    rec = _time_solver(args, m, args.solver, args.threads)
    _emit(RUN_COLUMNS, [rec.row()], args.out, stream)
    return _report_failure(rec, args.tol, stream)


def cmd_validate(args, stream) -> int:
    args.validate = True
    if args.reps == SHARED["reps"][1] and os.environ.get(ENV_PREFIX + "REPS") is None:
        args.reps = 1
    return cmd_solve(args, stream)


def cmd_scale(args, stream) -> int:
    grid = _ints(args.grid)
    solvers = [s.strip() for s in args.solver.split(",") if s.strip()]
    runs = []
    for value in grid:
        kw = {}
        threads = args.threads
        if args.axis == "layers":
            kw["layers"] = value
        elif args.axis == "blocksize":
            kw["block_size"] = value
        elif args.axis == "bandwidth":
            kw["bandwidth"] = value
        else:
            threads = value
        m = _matrix(args, **kw)
        for s in solvers:
            runs.append((s, _time_solver(args, m, s, threads)))
    records = [r for _, r in runs]
    extra = {}
    if args.axis in ("layers", "blocksize"):
        key = "layers" if args.axis == "layers" else "block_size"
        for s in solvers:
            recs = [r for name, r in runs if name == s]
            if len(recs) >= 2:
                xs = [getattr(r, key) for r in recs]
                extra[f"slope_{s}"] = fit_loglog_slope(xs, [r.wall_time_ms for r in recs])
    _emit(RUN_COLUMNS, [r.row() for r in records], args.out, stream, extra)
    for k, v in extra.items():
        print(f"# {k} = {v:.4f}", file=sys.stderr if args.out is None else stream)
    return max((_report_failure(r, 1e-10, stream) for r in records), default=0)


def plan_table(l: int, plan: DomainPlan) -> list:
    """Per-level rows ``(level, s2, threads, layers, n_tasks)`` plus the terminal row."""
    counts = plan.layer_counts(l)
    rows = []
    for k, (s1, s2) in enumerate(plan.levels, start=1):
        rows.append((k, s2, plan.n_threads, counts[k - 1], math.ceil(counts[k - 1] / (s1 + s2))))
    rows.append(("RGF", "-", plan.terminal_threads, counts[-1], 1))
    return rows


def cmd_tune(args, stream) -> int:
    l, b_s, threads = args.layers, args.block_size, args.threads
    ratios = _load_ratios(args.ratios) or benchmark_kernels(b_s, args.samples, seed=args.seed)
    plan = autotune(l, b_s, threads, ratios, args.max_levels, args.s2_max,
                    args.search_terminal_threads)
    est = cost_ddrgf(l, plan, ratios)
    base = cost_rgf(l, ratios)
    choice = orchestrate(l, b_s, threads, ratios, max_levels=args.max_levels, s2_max=args.s2_max)
    header = ["level", "s2", "threads", "layers", "n_tasks"]
    rows = [list(r) for r in plan_table(l, plan)]
    result = {
        "plan": plan.spec_string(),
        "predicted_gemm_equivalents": float(est.gemm_equivalents),
        "predicted_seconds": est.predicted_seconds,
        "rgf_gemm_equivalents": float(base.gemm_equivalents),
        "orchestrator": choice.to_dict(),
        "ratios": ratios.to_dict(),
    }
    if args.execute:
        m = _matrix(args)
        reps = args.reps
        t_plan = _mean_time(lambda: ddrgf(m, plan), reps)
        t_rgf = _mean_time(lambda: rgf_tridiag(m), reps)
        result.update({"measured_plan_ms": 1e3 * t_plan, "measured_rgf_ms": 1e3 * t_rgf})
    if args.out and args.out.lower().endswith(".json"):
        _emit(header, rows, args.out, stream, result)
    else:
        # human readable: the level table, then key/value lines
        stream.write(" | ".join(f"{h:>8}" for h in header) + "\n")
        for r in rows:
            stream.write(" | ".join(f"{str(v):>8}" for v in r) + "\n")
        for k, v in result.items():
            stream.write(f"{k}: {json.dumps(v) if isinstance(v, dict) else v}\n")
        if args.out:
            _emit(header, rows, args.out, io.StringIO(), result)
    return 0


def _mean_time(fn, reps) -> float:
    ts = []
    for _ in range(max(1, reps)):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return float(np.mean(ts))


COMMANDS = {
    "bench-kernels": cmd_bench_kernels,
    "solve": cmd_solve,
    "scale": cmd_scale,
    "tune": cmd_tune,
    "validate": cmd_validate,
}


def main(argv=None, stream=None) -> int:
    stream = sys.stdout if stream is None else stream
    args = _resolve(build_parser().parse_args(argv))
    if args.ratios is None:
        args.ratios = os.environ.get(ENV_PREFIX + "RATIOS")
    try:
        return COMMANDS[args.command](args, stream)
    except OracleTooLargeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except BBSIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
