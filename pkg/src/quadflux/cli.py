"""Command-line entry point: ``quadflux run | verify | compare-irregularity``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .afem import AfemConfig, AfemResult, error_at_dofs, fit_rate, run_afem
from .benchmarks import BENCHMARKS, get_benchmark
from .errors import InsufficientDataError
from .io import write_convergence_csv, write_summary, write_vtk
from .verify import run_all

log = logging.getLogger("quadflux")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

# defaults for flags that may also come from a config file
RUN_DEFAULTS = {"benchmark": None, "theta": 0.3, "cap": 0, "tol": None, "max_dofs": 30000,
                "max_iterations": 80, "out": "out", "snapshot_every": 5, "solver": "direct"}


class UsageError(Exception):
    pass


def worker_count() -> int:
    """Upper bound on worker processes from ``QUADFLUX_THREADS`` (default 1)."""
    raw = os.environ.get("QUADFLUX_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"QUADFLUX_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _cap(value) -> int | None:
    """Command-line cap: 0 (or negative) means no irregularity bound."""
    return None if value is None or int(value) <= 0 else int(value)


def merge_config(args: argparse.Namespace, defaults: dict) -> dict:
    """Flags win over the JSON config file, which wins over built-in defaults."""
    conf = {}
    if getattr(args, "config", None):
        try:
            conf = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
        unknown = set(conf) - set(defaults)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    out = {}
    for key, default in defaults.items():
        flag = getattr(args, key, None)
        out[key] = flag if flag is not None else conf.get(key, default)
    return out


def run_benchmark(name: str, theta=0.3, cap=None, tol=None, max_dofs=30000, max_iterations=80,
                  solver="direct", callback=None) -> AfemResult:
    bench = get_benchmark(name)
    config = AfemConfig(theta=theta, cap=cap, solver=solver, max_dofs=max_dofs,
                        max_iterations=max_iterations,
                        stop_relative_error=bench.stop_relative_error if tol is None else tol)
    return run_afem(bench.problem(), config, bench.seed_mesh(), bench.energy_norm(), callback)


def summarize(name: str, result: AfemResult, settings: dict) -> dict:
    recs = result.records
    summary = {"benchmark": name, "status": result.status, "error": result.error,
               "iterations": len(recs)}
    if recs:
        last = recs[-1]
        summary.update(final_ndof=last.ndof, final_energy_error=last.energy_error,
                       final_rel_error=last.rel_error, final_eff_hat=last.eff_hat,
                       final_eff_res=last.eff_res, max_irregularity=max(r.max_irregularity for r in recs))
    for key, q in (("rate_err", "energy_error"), ("rate_eta_hat", "eta_hat"), ("rate_eta_res", "eta_res")):
        try:
            summary[key] = fit_rate(recs, q)
        except InsufficientDataError:
            summary[key] = math.nan
    summary["settings"] = settings
    return summary


def cmd_run(args) -> int:
    s = merge_config(args, RUN_DEFAULTS)
    if s["benchmark"] not in BENCHMARKS:
        raise UsageError(f"--benchmark must be one of {', '.join(BENCHMARKS)}")
    if not 0 < float(s["theta"]) < 1:
        raise UsageError("--theta must lie in (0, 1)")
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    every = int(s["snapshot_every"])

    def snapshot(rec, sol, _ind):
        if every > 0 and rec.iter % every == 0:
            write_vtk(out / f"mesh_{rec.iter:04d}.vtk", sol.top, {"u": sol.values},
                      title=f"{s['benchmark']} iteration {rec.iter}")

    result = run_benchmark(s["benchmark"], theta=float(s["theta"]), cap=_cap(s["cap"]), tol=s["tol"],
                           max_dofs=int(s["max_dofs"]), max_iterations=int(s["max_iterations"]),
                           solver=s["solver"], callback=snapshot)
    write_convergence_csv(out / "convergence.csv", result.records)
    summary = summarize(s["benchmark"], result, s)
    write_summary(out / "run_summary.json", summary)
    for key in ("status", "iterations", "final_ndof", "final_rel_error", "final_eff_hat",
                "final_eff_res", "rate_err", "rate_eta_hat"):
        if key in summary:
            print(f"{key:>16s}: {summary[key]}")
    if result.status == "failed":
        log.error("run failed: %s", result.error)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_verify(args) -> int:
    results = run_all()
    for r in results:
        print(r.line())
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAILURE


def _compare_one(job):
    name, cap, tol, max_dofs = job
    res = run_benchmark(name, cap=_cap(cap), tol=tol, max_dofs=max_dofs)
    return cap, res.records, res.status


def compare_irregularity(name: str, caps, target_dofs: float = 1000.0, tol=None,
                         max_dofs: int = 30000, workers: int = 1):
    """Run the benchmark once per cap; returns {cap: (records, error at target_dofs)}."""
    jobs = [(name, c, tol, max_dofs) for c in caps]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            done = list(pool.map(_compare_one, jobs))
    else:
        done = [_compare_one(j) for j in jobs]
    out = {}
    for cap, recs, _status in done:
        try:
            at = error_at_dofs(recs, target_dofs)
        except ValueError:
            at = math.nan
        out[cap] = (recs, at)
    return out


def cmd_compare(args) -> int:
    try:
        caps = [int(c) for c in args.caps.split(",") if c.strip()]
    except ValueError:
        raise UsageError(f"--caps must be a comma-separated list of integers, got {args.caps!r}") from None
    if args.benchmark not in BENCHMARKS:
        raise UsageError(f"--benchmark must be one of {', '.join(BENCHMARKS)}")
    table = compare_irregularity(args.benchmark, caps, args.dofs, args.tol, args.max_dofs, worker_count())
    label = lambda c: f"{c}-irregular" if c > 0 else "unbounded"  # noqa: E731
    print(f"{'cap':>10s} {'iter':>5s} {'ndof':>7s} {'rel_error':>10s} {'max_irr':>7s}")
    for cap in caps:
        for r in table[cap][0]:
            print(f"{label(cap):>10s} {r.iter:5d} {r.ndof:7d} {r.rel_error:10.4f} {r.max_irregularity:7d}")
    print(f"relative error interpolated at {args.dofs:g} DoFs:")
    for cap in caps:
        print(f"  {label(cap):>10s}: {table[cap][1]:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for cap in caps:
            write_convergence_csv(out / f"convergence_cap{cap}.csv", table[cap][0])
        write_summary(out / "compare_summary.json",
                      {f"rel_error_at_dofs_cap{c}": table[c][1] for c in caps} | {"dofs": args.dofs})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadflux", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="adaptive run on one benchmark")
    run.add_argument("--benchmark")
    run.add_argument("--theta", type=float)
    run.add_argument("--cap", type=int, help="irregularity cap; 0 means unbounded")
    run.add_argument("--tol", type=float, help="stopping relative energy error")
    run.add_argument("--max-dofs", type=int)
    run.add_argument("--max-iterations", type=int)
    run.add_argument("--out")
    run.add_argument("--snapshot-every", type=int, help="VTK snapshot period (0 disables)")
    run.add_argument("--solver", choices=("direct", "pcg"))
    run.add_argument("--config", help="JSON file with any of the flags above")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="run the numerical property suite")
    ver.set_defaults(func=cmd_verify)

    cmp_ = sub.add_parser("compare-irregularity", help="capped vs unbounded irregularity")
    cmp_.add_argument("--benchmark", default="wavefront")
    cmp_.add_argument("--caps", default="1,0", help="comma-separated caps; 0 means unbounded")
    cmp_.add_argument("--dofs", type=float, default=1000.0, help="DoF count for the comparison")
    cmp_.add_argument("--tol", type=float)
    cmp_.add_argument("--max-dofs", type=int, default=30000)
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed the message
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"quadflux: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
