"""Acceptance gate.  Each test records one PASS/FAIL line, printed in the terminal summary."""

import itertools
import queue
import random
import threading
import time
import warnings
from collections import Counter

import pytest

from harness import criterion, is_epoch_cycle, run_canary_stress, soft_fail, switch_interval
from pgas_ebr import linearizability as lin
from pgas_ebr.atomic import (
    ADDR_LIMIT,
    MAX_LOCALES,
    NATIVE_DCAS,
    AtomicHandleCell,
    decode,
    encode,
)
from pgas_ebr.bench import WorkloadSpec, run_atomics_variant, run_epoch_workload
from pgas_ebr.epoch import EpochManager, LocalEpochManager, ReclaimOutcome, reclaim_epoch
from pgas_ebr.instrument import StepCounter, hooked
from pgas_ebr.limbo import LimboList, NodePool, RecycleStack
from pgas_ebr.runtime import Runtime, SlotState
from pgas_ebr.treiber import TreiberStack


def bitstring_encode(locale, addr):
    return int(format(locale, "016b") + format(addr, "048b"), 2)


def test_c01_handle_round_trip():
    with criterion(1, "handle round trip over 10^6 random + boundary pairs"):
        start = time.perf_counter()
        rng = random.Random(2024)
        edges = [0, 1, 2]
        loc_edges = edges + [MAX_LOCALES - 2, MAX_LOCALES - 1]
        addr_edges = edges + [ADDR_LIMIT - 2, ADDR_LIMIT - 1, 1 << 47]
        boundary = list(itertools.product(loc_edges, addr_edges))
        randoms = [(rng.randrange(MAX_LOCALES), rng.randrange(ADDR_LIMIT)) for _ in range(10**6)]
        failures = sum(decode(encode(l, a)) != (l, a) for l, a in itertools.chain(boundary, randoms))
        assert failures == 0
        for l, a in boundary + randoms[:10_000]:
            assert encode(l, a) == bitstring_encode(l, a)
        assert time.perf_counter() - start < 5.0


def _aba_trials(n, aba_counter):
    """Main thread snapshots A; a worker unlinks A, frees it, reallocates the
    same address and republishes it; then the stale CAS runs."""
    rt = Runtime(1)
    a = rt.allocate_on(0, "A")
    b = rt.allocate_on(0, "B")
    cell = AtomicHandleCell(a, aba_counter=aba_counter)
    req, done = queue.SimpleQueue(), queue.SimpleQueue()

    def worker():
        while req.get():
            old = cell.exchange_aba(b).value
            rt.mark_deferred(old)
            rt.reclaim(old)
            again = rt.allocate_on(0, "A'")
            cell.exchange_aba(again)
            done.put(again == old)

    t = threading.Thread(target=worker, daemon=True)
    t.start()
    false_successes = reused = 0
    try:
        for _ in range(n):
            stale = cell.read_aba()
            req.put(True)
            reused += done.get()
            if cell.compare_and_swap_aba(stale, b):
                false_successes += 1
                cell.write_aba(stale.value)
    finally:
        req.put(False)
        t.join()
    return false_successes, reused


def test_c02_aba_defense():
    with criterion(2, "stale CAS-ABA fails in 10^5 forced A-B-A reuse trials; control misfires"):
        start = time.perf_counter()
        bad, reused = _aba_trials(10**5, True)
        assert reused == 10**5
        assert bad == 0
        control_bad, _ = _aba_trials(1000, False)
        assert control_bad >= 1
        assert time.perf_counter() - start < 30.0


def test_c03_limbo_conservation():
    with criterion(3, "limbo list: 8 x 10^5 pushes, one pop, exact multiset, bounded push steps"):
        start = time.perf_counter()
        lst = LimboList(RecycleStack(NodePool(0)))
        steps = StepCounter(prefix="limbo.push.step")
        attempts = StepCounter(prefix="recycle.pop.read")
        n_tasks, m = 8, 10**5
        per_thread = {}

        def work(t):
            steps.reset()
            attempts.reset()
            base = t * m + 1
            for i in range(base, base + m):
                lst.push(encode(t, i))
            per_thread[t] = (steps.total(), attempts.total())

        def both(name, **info):
            steps(name, **info)
            attempts(name, **info)

        with hooked(both), switch_interval(1e-4):
            threads = [threading.Thread(target=work, args=(t,)) for t in range(n_tasks)]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
        head = lst.pop()
        got = Counter()
        n = lst.recycle.pool.get(head) if head else None
        while n is not None:
            got[n.val] += 1
            n = lst.recycle.pool.get(n.next) if n.next else None
        expected = Counter(encode(t, i) for t in range(n_tasks) for i in range(t * m + 1, t * m + m + 1))
        assert got == expected
        # exactly two steps and at most one recycle attempt per push, whatever the contention
        for t in range(n_tasks):
            assert per_thread[t][0] == 2 * m
            assert per_thread[t][1] <= m
        assert time.perf_counter() - start < 30.0


def _two_advance_case(make, start_epoch, unpin_early, blocked):
    """Defer at ``start_epoch`` and count eligible advances until reclamation.

    With ``unpin_early`` the deferring task leaves before the first advance;
    otherwise it lingers and ``blocked`` ineligible attempts happen first.
    """
    rt = Runtime(2, 1)
    em = make(rt)
    while em.epoch != start_epoch:
        assert em.try_reclaim()
    obj = rt.allocate_on(1)
    d = em.register()
    d.pin()
    d.defer_delete(obj)
    assert obj in em._instance().bucket(start_epoch).peek_chain()
    if unpin_early:
        d.unpin()
    assert em.try_reclaim() is ReclaimOutcome.ADVANCED
    assert rt.slot(obj).state is SlotState.DEFERRED
    if d.is_pinned:
        for _ in range(blocked):
            assert em.try_reclaim() is ReclaimOutcome.UNSAFE
            assert rt.slot(obj).state is SlotState.DEFERRED
        d.unpin()
    assert em.try_reclaim() is ReclaimOutcome.ADVANCED
    assert rt.slot(obj).state is SlotState.RECLAIMED
    assert reclaim_epoch(em.epoch) == start_epoch


def test_c04_two_advance_rule():
    with criterion(4, "two-advance rule, exhaustive over starting epochs"):
        makers = [EpochManager, LocalEpochManager]
        for make, s, early, blocked in itertools.product(makers, (1, 2, 3), (True, False), (0, 1, 3)):
            _two_advance_case(make, s, early, blocked)


STRESS_CONFIGS = [(2 + i % 3, [2, 4, 8, 3, 6][i % 5]) for i in range(20)]


def test_c05_epoch_scan_safety():
    with criterion(5, "canary stress: 20 seeds, 2-4 locales x 2-8 tasks, 10^5 ops each"):
        start = time.perf_counter()
        for seed, (locales, tasks) in enumerate(STRESS_CONFIGS):
            rep = run_canary_stress(seed, locales, tasks, 10**5)
            assert rep.violations == [], rep.violations[:3]
            assert rep.safety_violations == [], rep.safety_violations[:3]
            assert is_epoch_cycle(rep.epoch_history)
            assert rep.max_occupancy <= 1
            assert rep.allocated == rep.reclaimed
            assert rep.advances > 0
        assert time.perf_counter() - start < 120.0


def test_c06_non_blocking():
    with criterion(6, "parked flag holder: 10^4 try_reclaim calls, each O(1) steps, none wait"):
        start = time.perf_counter()
        rt = Runtime(4, 2)
        em = EpochManager(rt)
        parked, release = threading.Event(), threading.Event()

        def park(name, **info):
            if name == "reclaim.elected" and threading.current_thread().name == "holder":
                parked.set()
                release.wait(60)

        steps = StepCounter(prefix="reclaim.step")
        worst = {"steps": 0, "seconds": 0.0}
        outcomes = Counter()
        lock = threading.Lock()

        calls = 10**4
        share = [calls // 7 + (t < calls % 7) for t in range(7)]

        def contender(task, loc):
            mine = Counter()
            local_worst = (0, 0.0)
            for _ in range(share[task - 1]):
                steps.reset()
                t0 = time.perf_counter()
                out = em.try_reclaim()
                dt = time.perf_counter() - t0
                mine[out] += 1
                local_worst = (max(local_worst[0], steps.total()), max(local_worst[1], dt))
            with lock:
                outcomes.update(mine)
                worst["steps"] = max(worst["steps"], local_worst[0])
                worst["seconds"] = max(worst["seconds"], local_worst[1])

        def holder():
            rt._tls.locale = 0
            em.try_reclaim()

        with hooked(park), hooked(steps):
            th = threading.Thread(target=holder, name="holder")
            th.start()
            assert parked.wait(5)
            # the holder occupies task 0; tasks 1..7 contend
            contenders = [threading.Thread(target=lambda t=t: _as_task(rt, t, contender)) for t in range(1, 8)]
            for c in contenders:
                c.start()
            for c in contenders:
                c.join()
            release.set()
            th.join()
        assert sum(outcomes.values()) == calls
        assert set(outcomes) <= {ReclaimOutcome.BUSY_LOCAL, ReclaimOutcome.BUSY_GLOBAL}
        assert worst["steps"] <= 3
        assert worst["seconds"] < 0.5
        assert em.advances == 1
        assert time.perf_counter() - start < 10.0


def _as_task(rt, task, fn):
    rt._tls.locale = rt.home_of_task(task)
    fn(task, rt._tls.locale)


def test_c07_scatter_correctness():
    with criterion(7, "defer-all scatter at remote fraction 0, 0.5, 1"):
        for fraction in (0.0, 0.5, 1.0):
            spec = WorkloadSpec("defer-all", 4, 2, ops_per_task=256, remote_fraction=fraction, seed=11)
            res = run_epoch_workload(spec, record_events=True)
            rt = res.extra["runtime"]
            reclaimed = [e for e in rt.events.of_kind("slot") if e["dst"] == "reclaimed"]
            assert len(reclaimed) == len(res.extra["objects"])
            assert all(e["by"] == e["locale"] for e in reclaimed)
            for h in res.extra["objects"]:
                assert rt.slot(h).state is SlotState.RECLAIMED
            allocated = sum(a.allocated_total for a in rt.arenas)
            freed = sum(a.reclaimed_total for a in rt.arenas)
            assert allocated == freed == 4 * 2 * 256
            cross = [p for p in res.extra["bulk_pairs"] if p[0] != p[1]]
            if fraction == 0.0:
                assert cross == []
            else:
                assert cross


def test_c08_treiber():
    with criterion(8, "Treiber stack: small histories linearizable; 8-task storm conserves"):
        for seed in range(40):
            rt = Runtime(1, 3)
            em = EpochManager(rt)
            s = TreiberStack(rt)
            rec = lin.Recorder()

            def small(task, loc):
                rng = random.Random(seed * 7 + task)
                with em.register() as g:
                    g.pin()
                    for i in range(4):
                        if rng.random() < 0.5:
                            v = (task, i)
                            rec.call(task, "push", v, lambda: s.push(g, v) and None)
                        else:
                            rec.call(task, "pop", None, lambda: s.pop(g, default=lin.EMPTY))
                    g.unpin()
                    g.try_reclaim()

            with switch_interval(1e-6):
                rt.run_tasks(small)
            assert lin.check(rec.history, (), lin.stack_step) is not None

        rt = Runtime(2, 4)
        em = EpochManager(rt)
        s = TreiberStack(rt)
        pushed, popped = Counter(), Counter()
        lock = threading.Lock()
        per_task = 10**5 // 8

        def storm(task, loc):
            rng = random.Random(task)
            mp, mq = Counter(), Counter()
            with em.register() as g:
                for i in range(per_task):
                    g.pin()
                    if rng.random() < 0.5:
                        s.push(g, (task, i))
                        mp[(task, i)] += 1
                    else:
                        v = s.pop(g)
                        if v is not None:
                            mq[v] += 1
                    g.unpin()
                    if i % 256 == 0:
                        g.try_reclaim()
            with lock:
                pushed.update(mp)
                popped.update(mq)

        with switch_interval(1e-4):
            rt.run_tasks(storm)
        assert popped + Counter(s.values()) == pushed
        assert max(popped.values()) == 1
        assert em.advances > 0


def _best_wall(spec, variant, repeats=5):
    return min(run_atomics_variant(spec, variant).wall_seconds for _ in range(repeats))


def test_c09_atomics_overhead():
    title = "atomics overhead: object/int <= 1.5, aba/int <= 4, aba overhead flat 1->8 tasks"
    with criterion(9, title):
        one = WorkloadSpec("atomics-mix", 1, 1, ops_per_task=20_000, seed=1)
        eight = WorkloadSpec("atomics-mix", 1, 8, ops_per_task=20_000, seed=1)
        t_int, t_obj, t_aba = (_best_wall(one, v) for v in ("int", "object", "object-aba"))
        r1 = t_aba / t_obj
        r8 = _best_wall(eight, "object-aba", 3) / _best_wall(eight, "object", 3)
        ratios = {"object/int": t_obj / t_int, "aba/int": t_aba / t_int, "drift": r8 / r1}
        ok = ratios["object/int"] <= 1.5 and ratios["aba/int"] <= 4.0 and 1 / 1.5 <= ratios["drift"] <= 1.5
        report = ", ".join(f"{k}={v:.2f}" for k, v in ratios.items())
        if not ok:
            if not NATIVE_DCAS:
                warnings.warn(f"atomics overhead out of tolerance without native 128-bit CAS: {report}")
                soft_fail(9, title, report)
                return
            pytest.fail(report)


def _differential_script(seed, n_tokens=3, n_ops=400):
    rng = random.Random(seed)
    return [(rng.randrange(n_tokens), rng.choices("pudr", weights=(3, 2, 4, 2))[0]) for _ in range(n_ops)]


def _replay(manager_cls, script, n_tokens=3):
    rt = Runtime(1, record_events=True)
    em = manager_cls(rt)
    toks = [em.register() for _ in range(n_tokens)]
    for i, op in script:
        tok = toks[i]
        if op == "p":
            tok.pin()
        elif op == "u":
            tok.unpin()
        elif op == "d":
            if tok.is_pinned:
                tok.defer_delete(rt.allocate_on(0))
        else:
            tok.try_reclaim()
    for tok in toks:
        tok.unpin()
    em.clear()
    return [(k, tuple(sorted(f.items()))) for k, f in rt.events if k in ("slot", "advance")]


def test_c10_local_manager_differential():
    with criterion(10, "LocalEpochManager matches a 1-locale EpochManager event for event"):
        for seed in range(100):
            script = _differential_script(seed)
            a = _replay(LocalEpochManager, script)
            b = _replay(EpochManager, script)
            assert a == b
            assert any(k == "advance" for k, _ in a)
