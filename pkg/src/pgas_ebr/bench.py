"""Desk-scale microbenchmarks for handle atomics and the epoch manager.

Workloads
---------
``atomics-mix``
    Every task runs ``ops_per_task`` operations on shared cells, a seeded
    shuffle of equal parts read / write / compare-and-swap / exchange.
    Measured for the plain 64-bit integer baseline, the handle cell, and
    the handle cell's ABA variants.
``read-only``
    pin / unpin per iteration, nothing deferred.
``defer-all``
    pin / defer / unpin per iteration; reclamation only by the final clear.
``reclaim-dense`` / ``reclaim-sparse``
    as ``defer-all`` but calling ``try_reclaim`` every iteration or every
    ``reclaim_period`` iterations.

Each object of the defer workloads is processed by locale ``i % L``; a
seeded choice of ``remote_fraction`` of them is homed on another locale.
"""

from __future__ import annotations

import csv
import math
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .atomic import AtomicHandleCell, AtomicInt64
from .epoch import EpochManager
from .runtime import DEFAULT_ARENA_CAPACITY, Runtime

ATOMICS_MIX = "atomics-mix"
EPOCH_KINDS = ("read-only", "defer-all", "reclaim-dense", "reclaim-sparse")
KINDS = (ATOMICS_MIX,) + EPOCH_KINDS
ATOMIC_VARIANTS = ("int", "object", "object-aba")
DEFAULT_RECLAIM_PERIOD = 1024

CSV_COLUMNS = (
    "kind",
    "numLocales",
    "tasksPerLocale",
    "numObjects",
    "opsPerTask",
    "remoteFraction",
    "reclaimPeriod",
    "seed",
    "wallSeconds",
    "throughput",
    "remoteReads",
    "remoteWrites",
    "remoteAtomics",
    "remoteExecutions",
    "bulkTransfers",
    "epochAdvances",
)
TIMING_COLUMNS = ("wallSeconds", "throughput")


class InvalidWorkload(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    num_locales: int = 1
    tasks_per_locale: int = 1
    num_objects: int | None = None
    ops_per_task: int = 1024
    remote_fraction: float = 0.0
    reclaim_period: int = DEFAULT_RECLAIM_PERIOD
    seed: int = 0
    serial: bool = False

    @property
    def num_tasks(self) -> int:
        return self.num_locales * self.tasks_per_locale

    def resolved_objects(self) -> int:
        """Object count: cells for atomics-mix, deferred objects for epoch workloads."""
        if self.num_objects is not None:
            return self.num_objects
        if self.kind == ATOMICS_MIX:
            return 64
        if self.kind == "read-only":
            return 0
        return self.num_tasks * self.ops_per_task

    def validate(self) -> "WorkloadSpec":
        if self.kind not in KINDS:
            raise InvalidWorkload(f"unknown workload {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.num_locales < 1 or self.tasks_per_locale < 1:
            raise InvalidWorkload("locales and tasks per locale must be >= 1")
        if self.ops_per_task < 0:
            raise InvalidWorkload("ops per task must be >= 0")
        if self.reclaim_period < 1:
            raise InvalidWorkload("reclaim period must be >= 1")
        if not 0.0 <= self.remote_fraction <= 1.0:
            raise InvalidWorkload("remote fraction must be within [0, 1]")
        n = self.resolved_objects()
        if self.kind == ATOMICS_MIX and n < 1:
            raise InvalidWorkload("atomics-mix needs at least one cell")
        if self.kind in EPOCH_KINDS and self.kind != "read-only":
            if n != self.num_tasks * self.ops_per_task:
                raise InvalidWorkload(
                    f"{self.kind}: objects ({n}) must equal tasks x ops per task "
                    f"({self.num_tasks * self.ops_per_task})"
                )
            if self.remote_fraction > 0 and self.num_locales == 1:
                raise InvalidWorkload("a remote fraction needs at least two locales")
        return self


@dataclass
class BenchResult:
    spec: WorkloadSpec
    wall_seconds: float
    total_ops: int
    comm: dict[str, int]
    epoch_advances: int = 0
    variant: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def throughput(self) -> float:
        return self.total_ops / self.wall_seconds if self.wall_seconds > 0 else math.inf

    @property
    def label(self) -> str:
        return f"{self.spec.kind}:{self.variant}" if self.variant else self.spec.kind

    def row(self) -> dict[str, Any]:
        s = self.spec
        return {
            "kind": self.label,
            "numLocales": s.num_locales,
            "tasksPerLocale": s.tasks_per_locale,
            "numObjects": s.resolved_objects(),
            "opsPerTask": s.ops_per_task,
            "remoteFraction": s.remote_fraction,
            "reclaimPeriod": s.reclaim_period,
            "seed": s.seed,
            "wallSeconds": f"{self.wall_seconds:.6f}",
            "throughput": f"{self.throughput:.1f}",
            "remoteReads": self.comm["remote_reads"],
            "remoteWrites": self.comm["remote_writes"],
            "remoteAtomics": self.comm["remote_atomics"],
            "remoteExecutions": self.comm["remote_executions"],
            "bulkTransfers": self.comm["bulk_transfers"],
            "epochAdvances": self.epoch_advances,
        }


def _timed(rt: Runtime, fn: Callable[[int, int], Any], serial: bool) -> tuple[float, list[Any]]:
    """Run ``fn`` on every task; time only the parallel region."""
    if serial:
        t0 = time.perf_counter()
        out = rt.run_tasks(fn, serial=True)
        return time.perf_counter() - t0, out
    stamps: list[float] = []
    # the action runs once, before any task is released
    gate = threading.Barrier(rt.num_tasks, action=lambda: stamps.append(time.perf_counter()))

    def gated(task: int, locale: int) -> Any:
        gate.wait()
        return fn(task, locale)

    out = rt.run_tasks(gated)
    return time.perf_counter() - stamps[0], out


# atomics-mix


def op_schedule(n_ops: int, rng: random.Random) -> list[int]:
    """Balanced shuffle of op kinds 0..3 (read, write, cas, exchange)."""
    ops = [i % 4 for i in range(n_ops)]
    rng.shuffle(ops)
    return ops


def _variant_ops(variant: str) -> list[Callable[[Any, int], Any]]:
    if variant in ("int", "object"):
        return [
            lambda c, v: c.read(),
            lambda c, v: c.write(v),
            lambda c, v: c.compare_and_swap(c.read(), v),
            lambda c, v: c.exchange(v),
        ]
    if variant == "object-aba":
        return [
            lambda c, v: c.read_aba(),
            lambda c, v: c.write_aba(v),
            lambda c, v: c.compare_and_swap_aba(c.read_aba(), v),
            lambda c, v: c.exchange_aba(v),
        ]
    raise InvalidWorkload(f"unknown atomics variant {variant!r}")


def run_atomics_variant(spec: WorkloadSpec, variant: str) -> BenchResult:
    spec.validate()
    if spec.kind != ATOMICS_MIX:
        raise InvalidWorkload(f"run_atomics_variant needs kind {ATOMICS_MIX}, got {spec.kind}")
    rt = Runtime(spec.num_locales, spec.tasks_per_locale)
    n_cells = spec.resolved_objects()
    if variant == "int":
        values = list(range(1, n_cells + 1))
        cells: list[Any] = [AtomicInt64(v) for v in values]
    else:
        values = [rt.allocate_on(i % rt.num_locales, i) for i in range(n_cells)]
        cells = [AtomicHandleCell(h) for h in values]
    fns = _variant_ops(variant)
    plans = []
    for task in range(rt.num_tasks):
        rng = random.Random(f"{spec.seed}:{task}")
        kinds = op_schedule(spec.ops_per_task, rng)
        picks = [(k, rng.randrange(n_cells), rng.randrange(n_cells)) for k in kinds]
        plans.append(picks)

    def work(task: int, locale: int) -> list[int]:
        seen = [0, 0, 0, 0]
        for k, c, v in plans[task]:
            fns[k](cells[c], values[v])
            seen[k] += 1
        return seen

    before = rt.comm.snapshot()
    wall, per_task = _timed(rt, work, spec.serial)
    mix = [sum(t[k] for t in per_task) for k in range(4)]
    return BenchResult(
        spec,
        wall,
        spec.num_tasks * spec.ops_per_task,
        rt.comm.delta(before),
        variant=variant,
        extra={"op_counts": dict(zip(("read", "write", "cas", "exchange"), mix))},
    )


def run_atomics_mix(spec: WorkloadSpec, *, baseline: bool = True) -> list[BenchResult]:
    variants = ATOMIC_VARIANTS if baseline else ATOMIC_VARIANTS[1:]
    return [run_atomics_variant(spec, v) for v in variants]


# epoch workloads


def place_objects(spec: WorkloadSpec) -> list[int]:
    """Home locale of every object; object ``i`` is processed on ``i % L``.

    Exactly ``round(remote_fraction * n)`` objects, chosen by a seeded
    shuffle, get a home different from their processing locale.
    """
    n, L = spec.resolved_objects(), spec.num_locales
    rng = random.Random(spec.seed)
    homes = [i % L for i in range(n)]
    if L > 1:
        order = list(range(n))
        rng.shuffle(order)
        for i in order[: round(spec.remote_fraction * n)]:
            homes[i] = (homes[i] + rng.randrange(1, L)) % L
    return homes


def run_epoch_workload(spec: WorkloadSpec, *, record_events: bool = False) -> BenchResult:
    spec.validate()
    if spec.kind not in EPOCH_KINDS:
        raise InvalidWorkload(f"run_epoch_workload needs one of {EPOCH_KINDS}, got {spec.kind}")
    L, T, ops = spec.num_locales, spec.tasks_per_locale, spec.ops_per_task
    n = spec.resolved_objects()
    capacity = max(DEFAULT_ARENA_CAPACITY, n + 1)
    rt = Runtime(L, T, arena_capacity=capacity, record_events=record_events)
    em = EpochManager(rt, debug=False)

    homes = place_objects(spec) if n else []
    objs = [0] * n
    for i, home in enumerate(homes):
        with rt.on(home, charge=False):
            objs[i] = rt.allocate_on(home, i)

    defer = spec.kind != "read-only"
    period = 1 if spec.kind == "reclaim-dense" else spec.reclaim_period
    reclaiming = spec.kind in ("reclaim-dense", "reclaim-sparse")

    def work(task: int, locale: int) -> int:
        r = task % T
        # objects of this locale are locale, locale + L, ...; split in blocks across its tasks
        mine = range(locale + r * ops * L, locale + (r + 1) * ops * L, L) if defer else range(ops)
        attempts = 0
        m = 0
        with em.register() as tok:
            for i in mine:
                tok.pin()
                if defer:
                    tok.defer_delete(objs[i])
                tok.unpin()
                m += 1
                if reclaiming and m % period == 0:
                    tok.try_reclaim()
                    attempts += 1
        return attempts

    before = rt.comm.snapshot()
    wall, attempts = _timed(rt, work, spec.serial)
    em.clear()
    return BenchResult(
        spec,
        wall,
        spec.num_tasks * ops,
        rt.comm.delta(before),
        epoch_advances=em.advances,
        extra={
            "reclaim_attempts": attempts,
            "epoch_history": list(em.epoch_history),
            "runtime": rt,
            "objects": objs,
            "homes": homes,
            "bulk_pairs": dict(rt.comm.bulk_pairs),
        },
    )


def run(spec: WorkloadSpec, *, baseline: bool = False) -> list[BenchResult]:
    if spec.kind == ATOMICS_MIX:
        return run_atomics_mix(spec, baseline=baseline)
    return [run_epoch_workload(spec)]


# output


def emit_results(results: Sequence[BenchResult], path: str | Path, *, plot: str | Path | None = None) -> Path:
    """Write ``results`` as CSV (header + one row each); optionally a bar plot."""
    if not results:
        raise ValueError("no results to write")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for res in results:
            writer.writerow(res.row())
    if plot is not None:
        plot_results(results, plot)
    return path


def plot_results(results: Iterable[BenchResult], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    results = list(results)
    labels = [f"{r.label}\nL={r.spec.num_locales} T={r.spec.tasks_per_locale}" for r in results]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(results)), 4))
    ax.bar(range(len(results)), [r.throughput for r in results])
    ax.set_xticks(range(len(results)), labels, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("ops / s")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def read_results(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))

