"""Exhaustive linearizability checking for small concurrent histories.

A history is a list of :class:`Op` records with invocation and response
timestamps.  :func:`check` searches every sequential order that respects
real-time precedence (Wing & Gong style, memoised on the set of remaining
operations plus the model state) and returns a witness order, or ``None``
when no legal order exists.

Models are plain functions ``step(state, op) -> new_state | INVALID``.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Sequence

INVALID = object()
EMPTY = "<empty>"

Step = Callable[[Hashable, "Op"], Any]


@dataclass(frozen=True)
class Op:
    task: int
    name: str
    arg: Any
    result: Any
    invoked: int
    responded: int
    index: int = field(default=0, compare=False)


class Recorder:
    """Collects timestamped operations from concurrent tasks."""

    def __init__(self) -> None:
        self._ops: list[Op] = []
        self._lock = threading.Lock()

    def call(self, task: int, name: str, arg: Any, fn: Callable[[], Any]) -> Any:
        t0 = time.perf_counter_ns()
        result = fn()
        t1 = time.perf_counter_ns()
        with self._lock:
            self._ops.append(Op(task, name, arg, result, t0, t1, len(self._ops)))
        return result

    @property
    def history(self) -> list[Op]:
        with self._lock:
            return list(self._ops)


def check(history: Sequence[Op], init: Hashable, step: Step) -> list[Op] | None:
    ops = [Op(o.task, o.name, o.arg, o.result, o.invoked, o.responded, i) for i, o in enumerate(history)]
    n = len(ops)
    # preds[i]: bitmask of ops that responded before op i was invoked
    preds = [0] * n
    for i, a in enumerate(ops):
        for j, b in enumerate(ops):
            if b.responded < a.invoked:
                preds[i] |= 1 << j
    full = (1 << n) - 1
    dead: set[tuple[int, Hashable]] = set()
    order: list[Op] = []

    def search(done: int, state: Hashable) -> bool:
        if done == full:
            return True
        key = (done, state)
        if key in dead:
            return False
        for i in range(n):
            bit = 1 << i
            if done & bit or preds[i] & ~done:
                continue
            nxt = step(state, ops[i])
            if nxt is INVALID:
                continue
            order.append(ops[i])
            if search(done | bit, nxt):
                return True
            order.pop()
        dead.add(key)
        return False

    return list(order) if search(0, init) else None


def stack_step(state: tuple, op: Op) -> Any:
    """LIFO model.  State is a tuple with the top at the end."""
    if op.name == "push":
        return state + (op.arg,)
    if op.name == "pop":
        if not state:
            return state if op.result == EMPTY else INVALID
        return state[:-1] if op.result == state[-1] else INVALID
    raise ValueError(f"unknown stack op {op.name}")


def cell_step(state: tuple[int, int], op: Op) -> Any:
    """Model of an atomic (value, counter) cell."""
    value, counter = state
    name, arg, res = op.name, op.arg, op.result
    if name == "read":
        return state if res == value else INVALID
    if name == "read_aba":
        return state if tuple(res) == state else INVALID
    if name == "write":
        return (arg, counter)
    if name == "write_aba":
        return (arg, counter + 1)
    if name == "exchange":
        return (arg, counter) if res == value else INVALID
    if name == "exchange_aba":
        return (arg, counter + 1) if tuple(res) == state else INVALID
    if name == "cas":
        expected, desired = arg
        ok = value == expected
        if res != ok:
            return INVALID
        return (desired, counter) if ok else state
    if name == "cas_aba":
        expected, desired = arg
        ok = tuple(expected) == state
        if res != ok:
            return INVALID
        return (desired, counter + 1) if ok else state
    raise ValueError(f"unknown cell op {name}")
