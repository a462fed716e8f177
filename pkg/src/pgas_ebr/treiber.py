"""Treiber stack on ABA-protected handle atomics, reclaimed through an epoch manager."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .atomic import NIL, AtomicHandleCell
from .epoch import TokenGuard
from .instrument import probe
from .runtime import Runtime


@dataclass(eq=False)
class StackNode:
    value: Any
    next: int = NIL


class TreiberStack:
    """Lock-free LIFO whose nodes live in the runtime's arenas.

    Every operation takes the caller's pinned :class:`TokenGuard`.  Popped
    nodes are handed to ``defer_delete`` rather than freed, so a slower
    task that still holds the old head never sees its slot reclaimed.

    ``aba_counter=False`` swaps in the control head cell whose counter
    never moves; only tests should want that.
    """

    def __init__(self, runtime: Runtime, *, aba_counter: bool = True) -> None:
        self.runtime = runtime
        self.head = AtomicHandleCell(NIL, aba_counter=aba_counter)

    def push(self, tok: TokenGuard, value: Any) -> int:
        if not tok.is_pinned:
            raise RuntimeError("push requires a pinned token")
        rt = self.runtime
        node = StackNode(value)
        handle = rt.allocate_on(rt.here(), node)
        while True:
            old = self.head.read_aba()
            node.next = old.value
            if self.head.compare_and_swap_aba(old, handle):
                return handle

    def pop(self, tok: TokenGuard, default: Any = None) -> Any:
        if not tok.is_pinned:
            raise RuntimeError("pop requires a pinned token")
        rt = self.runtime
        while True:
            old = self.head.read_aba()
            if old.value == NIL:
                return default
            node = rt.deref(old.value)
            nxt = node.next
            probe("treiber.pop.read", stack=self, seen=old, next=nxt)
            if self.head.compare_and_swap_aba(old, nxt):
                value = node.value
                tok.defer_delete(old.value)
                return value

    def __len__(self) -> int:
        """Chain length from the current head (quiescent use only)."""
        n, h = 0, self.head.read()
        while h != NIL:
            n += 1
            h = self.runtime.deref(h).next
        return n

    def values(self) -> list[Any]:
        out, h = [], self.head.read()
        while h != NIL:
            node = self.runtime.deref(h)
            out.append(node.value)
            h = node.next
        return out
