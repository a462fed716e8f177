"""Epoch-based reclamation over the simulated PGAS runtime.

Epochs cycle through 1, 2, 3; a token's ``local_epoch`` of 0 means
"unpinned".  Each locale holds a privatized :class:`ManagerInstance` with a
cached copy of the global epoch and three limbo lists, one per epoch.

Advancing from ``e`` to ``e % 3 + 1`` is allowed only when every token on
every locale is unpinned or pinned at ``e``.  The advance then frees the
bucket that is neither the new epoch nor the previous one, i.e. whatever
was deferred two advances ago.  Only one task at a time may attempt the
advance: it must win the locale flag and then the global flag, and losers
back out at once instead of waiting.

Usage::

    rt = Runtime(4, 2)
    em = EpochManager(rt)

    def work(task, locale):
        with em.register() as tok:
            tok.pin()
            tok.defer_delete(obj)
            tok.unpin()
            tok.try_reclaim()

    rt.run_tasks(work)
    em.clear()
"""

from __future__ import annotations

import enum
import threading
from collections import deque
from typing import Iterator

from .atomic import AtomicFlag, AtomicInt64, locale_of
from .instrument import probe
from .limbo import LimboList, NodePool, RecycleStack
from .runtime import Runtime

UNPINNED = 0
EPOCHS = (1, 2, 3)
GLOBAL_EPOCH_HOME = 0


def next_epoch(epoch: int) -> int:
    return epoch % 3 + 1


def reclaim_epoch(epoch: int) -> int:
    """Bucket that is safe to free once ``epoch`` becomes current.

    On the 3-cycle this is ``epoch - 2``: the only bucket that is neither
    the current epoch nor the one just left.
    """
    if epoch not in EPOCHS:
        raise ValueError(f"epoch must be one of {EPOCHS}, got {epoch}")
    return epoch % 3 + 1


class ReclaimOutcome(enum.Enum):
    BUSY_LOCAL = "busy-local"
    BUSY_GLOBAL = "busy-global"
    UNSAFE = "unsafe"
    ADVANCED = "advanced"

    def __bool__(self) -> bool:
        return self is ReclaimOutcome.ADVANCED


class Token:
    """Registration record for one task.  ``local_epoch`` is 0 when unpinned."""

    __slots__ = ("local_epoch", "locale", "owner", "registered", "ident")

    def __init__(self, owner: "ManagerInstance", ident: int) -> None:
        # a plain int attribute: loads and stores are atomic in CPython
        self.local_epoch = UNPINNED
        self.locale = owner.locale
        self.owner = owner
        self.registered = False
        self.ident = ident

    def __repr__(self) -> str:
        return f"Token(locale={self.locale}, id={self.ident}, epoch={self.local_epoch})"


class ManagerInstance:
    """Per-locale state of an epoch manager."""

    def __init__(self, locale: int, num_locales: int, *, node_cap: int | None = None) -> None:
        self.locale = locale
        self.locale_epoch = AtomicInt64(1)
        # epoch being installed by an in-flight advance, 0 when none
        self.next_epoch = AtomicInt64(0)
        self.is_setting_epoch = AtomicFlag()
        self.pool = NodePool(locale, node_cap)
        self.recycle = RecycleStack(self.pool)
        self.limbo = [LimboList(self.recycle) for _ in EPOCHS]
        self.allocated_list: list[Token] = []
        self.free_list: deque[Token] = deque()
        self.objs_to_delete: list[list[int]] = [[] for _ in range(num_locales)]
        self._alloc_lock = threading.Lock()

    def bucket(self, epoch: int) -> LimboList:
        return self.limbo[epoch - 1]

    def defer_epoch(self) -> int:
        """Epoch under which a deferral made right now must be filed.

        The in-flight stamp is read before the cache, so the result is
        never older than the epoch any task could have pinned at when the
        object was unlinked.
        """
        return self.next_epoch.read() or self.locale_epoch.read()

    def acquire_token(self) -> Token:
        try:
            tok = self.free_list.pop()
        except IndexError:
            with self._alloc_lock:
                tok = Token(self, len(self.allocated_list))
                self.allocated_list.append(tok)
        tok.registered = True
        return tok

    def release_token(self, tok: Token) -> None:
        tok.local_epoch = UNPINNED
        tok.registered = False
        self.free_list.append(tok)

    def first_unsafe(self, current: int) -> Token | None:
        for tok in list(self.allocated_list):
            e = tok.local_epoch
            if e != UNPINNED and e != current:
                return tok
        return None

    def pinned_tokens(self) -> list[Token]:
        return [t for t in self.allocated_list if t.local_epoch != UNPINNED]

    def deferred_count(self) -> int:
        return sum(len(b.peek_chain()) for b in self.limbo)


class TokenGuard:
    """A registered token.  Leaving the ``with`` block unregisters it."""

    __slots__ = ("manager", "token")

    def __init__(self, manager: "_ManagerBase", token: Token) -> None:
        self.manager = manager
        self.token: Token | None = token

    def _tok(self) -> Token:
        if self.token is None:
            raise RuntimeError("token guard used after unregister")
        return self.token

    @property
    def local_epoch(self) -> int:
        return self._tok().local_epoch

    @property
    def is_pinned(self) -> bool:
        return self._tok().local_epoch != UNPINNED

    def pin(self) -> None:
        self.manager.pin(self._tok())

    def unpin(self) -> None:
        self.manager.unpin(self._tok())

    def defer_delete(self, obj: int) -> None:
        self.manager.defer_delete(self._tok(), obj)

    def try_reclaim(self) -> ReclaimOutcome:
        return self.manager.try_reclaim()

    def unregister(self) -> None:
        if self.token is not None:
            self.manager.unregister(self.token)
            self.token = None

    def __enter__(self) -> "TokenGuard":
        return self

    def __exit__(self, *exc: object) -> None:
        self.unregister()


class _ManagerBase:
    """Token lifecycle shared by both manager flavours."""

    runtime: Runtime
    debug: bool

    def _instance(self) -> ManagerInstance:
        raise NotImplementedError

    def instances(self) -> tuple[ManagerInstance, ...]:
        raise NotImplementedError

    def _check_home(self, tok: Token) -> None:
        if self.debug and tok.locale != self.runtime.here():
            raise RuntimeError(
                f"token from locale {tok.locale} used on locale {self.runtime.here()}"
            )

    def register(self) -> TokenGuard:
        return TokenGuard(self, self._instance().acquire_token())

    def unregister(self, tok: Token) -> None:
        if not tok.registered:
            raise RuntimeError("token is not registered")
        tok.owner.release_token(tok)

    def pin(self, tok: Token) -> None:
        self._check_home(tok)
        if tok.local_epoch == UNPINNED:
            tok.local_epoch = tok.owner.locale_epoch.read()

    def unpin(self, tok: Token) -> None:
        tok.local_epoch = UNPINNED

    def defer_delete(self, tok: Token, obj: int) -> None:
        """Queue ``obj`` for reclamation once no pinned task can still see it."""
        if tok.local_epoch == UNPINNED:
            raise RuntimeError("defer_delete requires a pinned token")
        self._check_home(tok)
        self.runtime.mark_deferred(obj)
        inst = tok.owner
        inst.bucket(inst.defer_epoch()).push(obj)

    def try_reclaim(self) -> ReclaimOutcome:
        raise NotImplementedError

    def tokens(self) -> Iterator[Token]:
        for inst in self.instances():
            yield from list(inst.allocated_list)

    def _assert_quiescent(self) -> None:
        if self.debug:
            pinned = [t for t in self.tokens() if t.local_epoch != UNPINNED]
            if pinned:
                raise RuntimeError(f"clear() called with pinned tokens: {pinned}")


class EpochManager(_ManagerBase):
    """Distributed epoch manager: one privatized instance per locale.

    Parameters
    ----------
    runtime:
        The simulated machine.  The global epoch lives on locale 0.
    debug:
        Enable fail-fast checks (token used off its home locale, ``clear``
        with pinned tokens).
    node_cap:
        Optional per-locale limit on limbo nodes, for leak tests.
    """

    def __init__(self, runtime: Runtime, *, debug: bool = True, node_cap: int | None = None) -> None:
        self.runtime = runtime
        self.debug = debug
        self.global_epoch = AtomicInt64(1)
        self.global_is_setting_epoch = AtomicFlag()
        n = runtime.num_locales
        self.pid = runtime.privatize(lambda loc: ManagerInstance(loc, n, node_cap=node_cap))
        self.epoch_history = [1]
        self.max_occupancy = 0
        self._occupancy = AtomicInt64(0)

    def _instance(self) -> ManagerInstance:
        return self.runtime.get_privatized_instance(self.pid)

    def instances(self) -> tuple[ManagerInstance, ...]:
        return tuple(self.runtime.privatized_instances(self.pid))

    @property
    def epoch(self) -> int:
        return self.global_epoch.read()

    @property
    def advances(self) -> int:
        return len(self.epoch_history) - 1

    def try_reclaim(self) -> ReclaimOutcome:
        """Try to advance the global epoch and free the expired bucket everywhere.

        Never waits: if another task on this locale is already trying, or
        any task anywhere holds the global flag, this returns immediately.
        """
        rt = self.runtime
        inst = self._instance()
        probe("reclaim.step", op="local-tas")
        if inst.is_setting_epoch.test_and_set():
            return ReclaimOutcome.BUSY_LOCAL
        probe("reclaim.step", op="global-tas")
        rt.charge_remote("remote_atomics", GLOBAL_EPOCH_HOME)
        if self.global_is_setting_epoch.test_and_set():
            probe("reclaim.step", op="local-clear")
            inst.is_setting_epoch.clear()
            return ReclaimOutcome.BUSY_GLOBAL
        try:
            occupancy = self._occupancy.fetch_add(1) + 1
            if occupancy > self.max_occupancy:
                self.max_occupancy = occupancy
            probe("reclaim.elected", manager=self)
            rt.charge_remote("remote_reads", GLOBAL_EPOCH_HOME)
            current = self.global_epoch.read()
            if not self._scan(current):
                return ReclaimOutcome.UNSAFE
            self._advance(current, next_epoch(current))
            return ReclaimOutcome.ADVANCED
        finally:
            self._occupancy.fetch_add(-1)
            rt.charge_remote("remote_atomics", GLOBAL_EPOCH_HOME)
            self.global_is_setting_epoch.clear()
            inst.is_setting_epoch.clear()

    def _scan(self, current: int) -> bool:
        rt = self.runtime
        for loc in rt.locales:
            with rt.on(loc):
                if self._instance().first_unsafe(current) is not None:
                    return False
        return True

    def _advance(self, old: int, new: int) -> None:
        rt = self.runtime
        instances = self.instances()
        for inst in instances:
            rt.charge_remote("remote_writes", inst.locale)
            inst.next_epoch.write(new)
        rt.charge_remote("remote_writes", GLOBAL_EPOCH_HOME)
        self.global_epoch.write(new)
        self.epoch_history.append(new)
        if rt.events is not None:
            rt.events.append("advance", old=old, new=new)
        probe("epoch.advance", manager=self, old=old, new=new)
        self._reclaim_buckets((reclaim_epoch(new),), new_epoch=new)
        for inst in instances:
            rt.charge_remote("remote_writes", inst.locale)
            inst.next_epoch.write(0)

    def _reclaim_buckets(self, epochs: tuple[int, ...], new_epoch: int | None = None) -> None:
        """On every locale: pop ``epochs``' buckets, scatter by home, bulk-free at home."""
        rt = self.runtime
        for loc in rt.locales:
            with rt.on(loc):
                inst = self._instance()
                if new_epoch is not None:
                    inst.locale_epoch.write(new_epoch)
                    probe("epoch.locale_updated", manager=self, locale=loc, epoch=new_epoch)
                scatter = inst.objs_to_delete
                for e in epochs:
                    for obj in inst.bucket(e).drain():
                        scatter[locale_of(obj)].append(obj)
                for home, objs in enumerate(scatter):
                    if not objs:
                        continue
                    if home != loc:
                        rt.comm.bulk_transfer(loc, home)
                    with rt.on(home, charge=False):
                        for obj in objs:
                            rt.reclaim(obj)
                    objs.clear()

    def clear(self) -> None:
        """Free everything in every bucket on every locale.  Requires quiescence."""
        self._assert_quiescent()
        self._reclaim_buckets(EPOCHS)


class LocalEpochManager(_ManagerBase):
    """Shared-memory variant: one instance, no global epoch, no scatter.

    The instance's cached epoch is the only epoch.  Deferred objects are
    freed directly wherever they live.
    """

    def __init__(self, runtime: Runtime, *, debug: bool = True, node_cap: int | None = None) -> None:
        self.runtime = runtime
        self.debug = debug
        self.locale = runtime.here()
        self._inst = ManagerInstance(self.locale, 1, node_cap=node_cap)
        self.epoch_history = [1]
        self.max_occupancy = 0
        self._occupancy = AtomicInt64(0)

    def _instance(self) -> ManagerInstance:
        return self._inst

    def instances(self) -> tuple[ManagerInstance, ...]:
        return (self._inst,)

    def _check_home(self, tok: Token) -> None:
        pass

    @property
    def epoch(self) -> int:
        return self._inst.locale_epoch.read()

    @property
    def advances(self) -> int:
        return len(self.epoch_history) - 1

    def try_reclaim(self) -> ReclaimOutcome:
        inst = self._inst
        probe("reclaim.step", op="local-tas")
        if inst.is_setting_epoch.test_and_set():
            return ReclaimOutcome.BUSY_LOCAL
        try:
            occupancy = self._occupancy.fetch_add(1) + 1
            if occupancy > self.max_occupancy:
                self.max_occupancy = occupancy
            probe("reclaim.elected", manager=self)
            current = inst.locale_epoch.read()
            if inst.first_unsafe(current) is not None:
                return ReclaimOutcome.UNSAFE
            new = next_epoch(current)
            inst.locale_epoch.write(new)
            self.epoch_history.append(new)
            if self.runtime.events is not None:
                self.runtime.events.append("advance", old=current, new=new)
            probe("epoch.advance", manager=self, old=current, new=new)
            self._free(reclaim_epoch(new))
            return ReclaimOutcome.ADVANCED
        finally:
            self._occupancy.fetch_add(-1)
            inst.is_setting_epoch.clear()

    def _free(self, *epochs: int) -> None:
        for e in epochs:
            for obj in self._inst.bucket(e).drain():
                self.runtime.reclaim(obj)

    def clear(self) -> None:
        self._assert_quiescent()
        self._free(*EPOCHS)


def new_epoch_manager(runtime: Runtime, **kwargs) -> EpochManager:
    return EpochManager(runtime, **kwargs)


def new_local_epoch_manager(runtime: Runtime, **kwargs) -> LocalEpochManager:
    return LocalEpochManager(runtime, **kwargs)
