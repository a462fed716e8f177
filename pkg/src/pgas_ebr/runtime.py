"""In-process simulation of a partitioned global address space.

A :class:`Runtime` owns ``num_locales`` locales.  Each locale has an
:class:`Arena` of object slots addressed by 48-bit indices, so every object
has a home locale and a compressed handle (see :mod:`pgas_ebr.atomic`).
Worker tasks are threads bound to a home locale; :meth:`Runtime.on` moves
the calling task to another locale for the duration of a block, the way a
remote ``on`` statement would, and the move is charged to :class:`CommStats`.

Nothing is actually sent anywhere.  Remote work runs in the caller's thread
and only the traffic counters record that it would have crossed the network.
"""

from __future__ import annotations

import enum
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Iterator, Sequence

from .atomic import ADDR_LIMIT, MAX_LOCALES, NIL, decode, encode
from .instrument import EventLog, probe

DEFAULT_ARENA_CAPACITY = 1 << 20


class UseAfterFree(RuntimeError):
    """A handle was dereferenced after its slot was reclaimed."""


class ArenaExhausted(MemoryError):
    pass


class SlotState(enum.Enum):
    LIVE = "live"
    DEFERRED = "deferred"
    RECLAIMED = "reclaimed"


_NEXT_STATE = {
    SlotState.LIVE: SlotState.DEFERRED,
    SlotState.DEFERRED: SlotState.RECLAIMED,
}


@dataclass
class ArenaSlot:
    home: int
    addr: int
    state: SlotState = SlotState.LIVE
    payload: Any = None
    # bumped on every (re)allocation; lets a reader tell reuse from survival
    generation: int = 0


class CommStats:
    """Monotone counters standing in for network traffic."""

    FIELDS = ("remote_reads", "remote_writes", "remote_atomics", "remote_executions", "bulk_transfers")

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.remote_reads = 0
        self.remote_writes = 0
        self.remote_atomics = 0
        self.remote_executions = 0
        self.bulk_transfers = 0
        self.bulk_pairs: Counter = Counter()

    def add(self, field: str, n: int = 1) -> None:
        with self._lock:
            setattr(self, field, getattr(self, field) + n)

    def bulk_transfer(self, source: int, dest: int) -> None:
        with self._lock:
            self.bulk_transfers += 1
            self.bulk_pairs[(source, dest)] += 1

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {name: getattr(self, name) for name in self.FIELDS}

    def delta(self, before: dict[str, int]) -> dict[str, int]:
        now = self.snapshot()
        return {name: now[name] - before[name] for name in self.FIELDS}


class Arena:
    """Slot allocator for one locale.

    Freed addresses go onto a LIFO free list, so a reclaimed address is the
    first one handed out again.  That makes address reuse (and therefore ABA)
    easy to provoke in tests.
    """

    def __init__(self, locale: int, capacity: int, *, reserve_zero: bool, log: EventLog | None = None) -> None:
        if not 0 < capacity <= ADDR_LIMIT:
            raise ValueError(f"arena capacity must be in 1..2^48, got {capacity}")
        self.locale = locale
        self.capacity = capacity
        self._slots: list[ArenaSlot | None] = [None] if reserve_zero else []
        self._free: list[int] = []
        self._lock = threading.Lock()
        self._log = log
        self.allocated_total = 0
        self.reclaimed_total = 0

    def allocate(self, payload: Any) -> int:
        with self._lock:
            if self._free:
                addr = self._free.pop()
                slot = self._slots[addr]
                slot.state = SlotState.LIVE
                slot.payload = payload
                slot.generation += 1
            else:
                addr = len(self._slots)
                if addr >= self.capacity:
                    raise ArenaExhausted(f"locale {self.locale}: arena full ({self.capacity} slots)")
                self._slots.append(ArenaSlot(self.locale, addr, SlotState.LIVE, payload))
            self.allocated_total += 1
        if self._log is not None:
            self._log.append("alloc", locale=self.locale, addr=addr)
        return addr

    def slot(self, addr: int) -> ArenaSlot:
        slot = self._slots[addr] if 0 <= addr < len(self._slots) else None
        if slot is None:
            raise LookupError(f"locale {self.locale}: no slot at address {addr}")
        return slot

    def transition(self, addr: int, target: SlotState, by_locale: int) -> ArenaSlot:
        """Advance one slot along Live -> Deferred -> Reclaimed."""
        with self._lock:
            slot = self.slot(addr)
            if _NEXT_STATE.get(slot.state) is not target:
                raise RuntimeError(
                    f"illegal slot transition {slot.state.value} -> {target.value} "
                    f"at locale {self.locale} addr {addr}"
                )
            prev = slot.state
            slot.state = target
            gen = slot.generation
            if target is SlotState.RECLAIMED:
                slot.payload = None
                self._free.append(addr)
                self.reclaimed_total += 1
        if self._log is not None:
            self._log.append("slot", locale=self.locale, addr=addr, src=prev.value, dst=target.value, by=by_locale)
        probe("slot", locale=self.locale, addr=addr, gen=gen, dst=target, by=by_locale)
        return slot

    def __len__(self) -> int:
        return len(self._slots)

    def slots(self) -> Iterator[ArenaSlot]:
        return (s for s in list(self._slots) if s is not None)


class Runtime:
    """A simulated PGAS machine with ``num_locales`` locales.

    Parameters
    ----------
    num_locales, tasks_per_locale:
        Machine shape.  Task ``t`` lives on locale ``t // tasks_per_locale``.
    arena_capacity:
        Slots per locale arena.
    record_events:
        Keep an :class:`EventLog` of allocations, slot transitions and epoch
        advances in ``self.events``.
    remote_delay:
        Seconds slept on every charged remote operation; zero by default.
    """

    def __init__(
        self,
        num_locales: int,
        tasks_per_locale: int = 1,
        *,
        arena_capacity: int = DEFAULT_ARENA_CAPACITY,
        record_events: bool = False,
        remote_delay: float = 0.0,
    ) -> None:
        if not 1 <= num_locales <= MAX_LOCALES:
            raise ValueError(f"num_locales must be in 1..{MAX_LOCALES}, got {num_locales}")
        if tasks_per_locale < 1:
            raise ValueError(f"tasks_per_locale must be >= 1, got {tasks_per_locale}")
        self.num_locales = num_locales
        self.tasks_per_locale = tasks_per_locale
        self.remote_delay = remote_delay
        self.comm = CommStats()
        self.events: EventLog | None = EventLog() if record_events else None
        self.arenas = [
            Arena(loc, arena_capacity, reserve_zero=(loc == 0), log=self.events) for loc in range(num_locales)
        ]
        self._private: list[list[Any]] = []
        self._private_lock = threading.Lock()
        self._tls = threading.local()

    @property
    def num_tasks(self) -> int:
        return self.num_locales * self.tasks_per_locale

    @property
    def locales(self) -> range:
        return range(self.num_locales)

    # locality

    def here(self) -> int:
        return getattr(self._tls, "locale", 0)

    def home_of_task(self, task: int) -> int:
        return task // self.tasks_per_locale

    def _charge(self, field: str) -> None:
        self.comm.add(field)
        if self.remote_delay:
            time.sleep(self.remote_delay)

    def charge_remote(self, field: str, target: int) -> None:
        """Count one ``field`` operation if ``target`` is not the current locale."""
        if target != self.here():
            self._charge(field)

    @contextmanager
    def on(self, locale: int, *, charge: bool = True) -> Iterator[int]:
        """Run the enclosed block on ``locale``.

        Charged as one remote execution when ``locale`` differs from the
        caller's; ``charge=False`` is for moves already paid for elsewhere
        (e.g. by a bulk transfer).
        """
        self._check_locale(locale)
        prev = self.here()
        if charge and locale != prev:
            self._charge("remote_executions")
        self._tls.locale = locale
        try:
            yield locale
        finally:
            self._tls.locale = prev

    def _check_locale(self, locale: int) -> None:
        if not 0 <= locale < self.num_locales:
            raise ValueError(f"no locale {locale} (runtime has {self.num_locales})")

    # objects

    def allocate_on(self, locale: int, payload: Any = None) -> int:
        """Allocate a Live slot on ``locale`` and return its handle."""
        self._check_locale(locale)
        self.charge_remote("remote_executions", locale)
        return encode(locale, self.arenas[locale].allocate(payload))

    def slot(self, handle: int) -> ArenaSlot:
        if handle == NIL:
            raise LookupError("nil handle has no slot")
        locale, addr = decode(handle)
        self._check_locale(locale)
        return self.arenas[locale].slot(addr)

    def deref(self, handle: int) -> Any:
        """Payload of ``handle``; raises :class:`UseAfterFree` on a reclaimed slot."""
        slot = self.slot(handle)
        if slot.home != self.here():
            self._charge("remote_reads")
        if slot.state is SlotState.RECLAIMED:
            raise UseAfterFree(f"handle locale={slot.home} addr={slot.addr} was reclaimed")
        return slot.payload

    def mark_deferred(self, handle: int) -> ArenaSlot:
        locale, addr = decode(handle)
        return self.arenas[locale].transition(addr, SlotState.DEFERRED, self.here())

    def reclaim(self, handle: int) -> ArenaSlot:
        locale, addr = decode(handle)
        return self.arenas[locale].transition(addr, SlotState.RECLAIMED, self.here())

    def live_slots(self) -> int:
        return sum(1 for a in self.arenas for s in a.slots() if s.state is not SlotState.RECLAIMED)

    # privatization

    def privatize(self, factory: Callable[[int], Any]) -> int:
        """Build one instance per locale with ``factory(locale)``; return its id."""
        instances = []
        for loc in self.locales:
            with self.on(loc, charge=False):
                instances.append(factory(loc))
        with self._private_lock:
            self._private.append(instances)
            return len(self._private) - 1

    def get_privatized_instance(self, pid: int) -> Any:
        """The calling locale's instance.  Never touches the network."""
        return self._private[pid][self.here()]

    def privatized_instances(self, pid: int) -> Sequence[Any]:
        return tuple(self._private[pid])

    # tasks

    def run_tasks(self, fn: Callable[[int, int], Any], *, serial: bool = False) -> list[Any]:
        """Run ``fn(task_id, locale)`` for every task, each on its home locale.

        With ``serial=True`` tasks run one after another in the calling
        thread, which makes a run fully deterministic.  The first exception
        raised by any task is re-raised after all tasks have finished.
        """
        results: list[Any] = [None] * self.num_tasks
        errors: list[BaseException] = []

        def body(task: int) -> None:
            self._tls.locale = self.home_of_task(task)
            try:
                results[task] = fn(task, self._tls.locale)
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                errors.append(exc)

        if serial:
            prev = self.here()
            try:
                for task in range(self.num_tasks):
                    body(task)
            finally:
                self._tls.locale = prev
        else:
            threads = [threading.Thread(target=body, args=(t,), name=f"task-{t}") for t in range(self.num_tasks)]
            for th in threads:
                th.start()
            for th in threads:
                th.join()
        if errors:
            raise errors[0]
        return results


def init_runtime(num_locales: int, tasks_per_locale: int = 1, **kwargs: Any) -> Runtime:
    return Runtime(num_locales, tasks_per_locale, **kwargs)
