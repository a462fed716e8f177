"""Test-build instrumentation: probe points and an event log.

Library code calls :func:`probe` at interesting points (limbo push steps,
reclaimer election, slot transitions).  With no hook installed this is a
single global lookup, so the probes stay in release paths.  Tests install a
hook to count steps, park a thread at a chosen point, or record history.
"""

from __future__ import annotations

import threading
from collections import Counter
from contextlib import contextmanager
from typing import Any, Callable, Iterator

Hook = Callable[..., None]

_hook: Hook | None = None
_hook_lock = threading.Lock()


def probe(name: str, **info: Any) -> None:
    hook = _hook
    if hook is not None:
        hook(name, **info)


def set_hook(hook: Hook | None) -> Hook | None:
    """Install ``hook`` globally and return the previous one."""
    global _hook
    with _hook_lock:
        previous, _hook = _hook, hook
    return previous


@contextmanager
def hooked(hook: Hook) -> Iterator[Hook]:
    """Chain ``hook`` in front of whatever hook is already installed."""
    previous = _hook

    def chained(name: str, **info: Any) -> None:
        hook(name, **info)
        if previous is not None:
            previous(name, **info)

    set_hook(chained)
    try:
        yield chained
    finally:
        set_hook(previous)


class StepCounter:
    """Per-thread counts of probe names, usable as a hook.

    ``counter.counts()`` returns the calling thread's tally; ``reset()``
    zeroes it.  Threads never share a tally, so the counter itself needs
    no locking.
    """

    def __init__(self, prefix: str = "") -> None:
        self.prefix = prefix
        self._local = threading.local()

    def __call__(self, name: str, **info: Any) -> None:
        if name.startswith(self.prefix):
            self.counts()[name] += 1

    def counts(self) -> Counter:
        tally = getattr(self._local, "tally", None)
        if tally is None:
            tally = self._local.tally = Counter()
        return tally

    def total(self) -> int:
        return sum(self.counts().values())

    def reset(self) -> None:
        self._local.tally = Counter()


class EventLog:
    """Thread-safe append-only record of (kind, fields) events."""

    def __init__(self) -> None:
        self._events: list[tuple[str, dict[str, Any]]] = []
        self._lock = threading.Lock()

    def append(self, kind: str, **fields: Any) -> None:
        with self._lock:
            self._events.append((kind, fields))

    def __len__(self) -> int:
        return len(self._events)

    def __iter__(self):
        with self._lock:
            snapshot = list(self._events)
        return iter(snapshot)

    def of_kind(self, kind: str) -> list[dict[str, Any]]:
        return [fields for k, fields in self if k == kind]
