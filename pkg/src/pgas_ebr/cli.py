"""``pgas-ebr-bench``: run the microbenchmarks and write a CSV."""

from __future__ import annotations

import argparse
import logging
import sys

from .bench import DEFAULT_RECLAIM_PERIOD, KINDS, InvalidWorkload, WorkloadSpec, emit_results, run

log = logging.getLogger("pgas_ebr.bench")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pgas-ebr-bench", description=__doc__)
    p.add_argument("--workload", required=True, choices=KINDS)
    p.add_argument("--locales", type=int, default=1, help="simulated locales (default 1)")
    p.add_argument("--tasks-per-locale", type=int, default=1)
    p.add_argument("--objects", type=int, default=None,
                   help="cells for atomics-mix; objects for defer workloads (default tasks x ops)")
    p.add_argument("--ops", type=int, default=1024, help="operations / iterations per task")
    p.add_argument("--remote-fraction", type=float, default=0.0)
    p.add_argument("--reclaim-period", type=int, default=DEFAULT_RECLAIM_PERIOD)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--repeat", type=int, default=1)
    p.add_argument("--baseline", action="store_true", help="atomics-mix: include the plain integer baseline")
    p.add_argument("--serial", action="store_true", help="run tasks one after another (deterministic)")
    p.add_argument("--plot", default=None, help="also write a throughput bar chart here")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.baseline and args.workload != "atomics-mix":
        parser.error("--baseline only applies to --workload atomics-mix")
    if args.repeat < 1:
        parser.error("--repeat must be >= 1")
    spec = WorkloadSpec(
        kind=args.workload,
        num_locales=args.locales,
        tasks_per_locale=args.tasks_per_locale,
        num_objects=args.objects,
        ops_per_task=args.ops,
        remote_fraction=args.remote_fraction,
        reclaim_period=args.reclaim_period,
        seed=args.seed,
        serial=args.serial,
    )
    try:
        spec.validate()
    except InvalidWorkload as exc:
        parser.error(str(exc))

    results = []
    for i in range(args.repeat):
        for res in run(spec, baseline=args.baseline):
            log.info("run %d %s: %.0f ops/s (%.3fs)", i, res.label, res.throughput, res.wall_seconds)
            results.append(res)
    try:
        emit_results(results, args.out, plot=args.plot)
    except OSError as exc:
        print(f"pgas-ebr-bench: cannot write results: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
