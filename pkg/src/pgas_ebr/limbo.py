"""Limbo lists: wait-free deferral with one-shot bulk removal.

A :class:`LimboList` has two phases that never overlap.  While an epoch is
current, any number of tasks :meth:`~LimboList.push` into it, each with a
single unconditional exchange on the head.  Once the epoch rules guarantee
nobody can push any more, the reclaimer :meth:`~LimboList.pop`\\ s the whole
chain with one exchange against nil.

List nodes are :class:`DeferNode` records owned by a per-locale
:class:`NodePool` and recycled through a lock-free Treiber-style
:class:`RecycleStack` whose top is ABA-protected.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

from .atomic import NIL, AtomicHandleCell, addr_of, encode
from .instrument import probe
from .runtime import ArenaExhausted


@dataclass(eq=False)
class DeferNode:
    handle: int
    val: int = NIL
    next: int = NIL
    # incremented each time the node is handed to a new owner
    generation: int = 0


class NodePool:
    """Storage for a locale's DeferNodes, addressed by compressed handles."""

    def __init__(self, locale: int, cap: int | None = None) -> None:
        self.locale = locale
        self.cap = cap
        self._nodes: dict[int, DeferNode] = {}
        # address 0 is skipped so no node handle is ever nil
        self._ids = itertools.count(1)

    def fresh(self) -> DeferNode:
        idx = next(self._ids)
        if self.cap is not None and idx > self.cap:
            raise ArenaExhausted(f"locale {self.locale}: defer-node cap of {self.cap} reached")
        node = DeferNode(encode(self.locale, idx))
        self._nodes[idx] = node
        return node

    def get(self, handle: int) -> DeferNode:
        return self._nodes[addr_of(handle)]

    def __len__(self) -> int:
        return len(self._nodes)


class RecycleStack:
    """Lock-free LIFO of free DeferNodes.

    ``push`` retries until its CAS lands.  ``try_pop`` makes exactly one
    attempt so that callers on a wait-free path stay bounded.
    """

    def __init__(self, pool: NodePool, *, aba_counter: bool = True) -> None:
        self.pool = pool
        self.top = AtomicHandleCell(NIL, aba_counter=aba_counter)

    def push(self, node: DeferNode) -> None:
        node.val = NIL
        while True:
            old = self.top.read_aba()
            node.next = old.value
            if self.top.compare_and_swap_aba(old, node.handle):
                return

    def try_pop(self) -> DeferNode | None:
        old = self.top.read_aba()
        if old.value == NIL:
            return None
        node = self.pool.get(old.value)
        nxt = node.next
        probe("recycle.pop.read", stack=self, seen=old, next=nxt)
        if self.top.compare_and_swap_aba(old, nxt):
            node.generation += 1
            return node
        return None

    def pop(self) -> DeferNode | None:
        """Pop, retrying on contention; ``None`` only if the stack is empty."""
        while True:
            if self.top.read() == NIL:
                return None
            node = self.try_pop()
            if node is not None:
                return node

    def __iter__(self) -> Iterator[DeferNode]:
        """Walk the stack (quiescent use only)."""
        h = self.top.read()
        while h != NIL:
            node = self.pool.get(h)
            yield node
            h = node.next


def recycle_node(stack: RecycleStack, obj: int) -> DeferNode:
    """A node holding ``obj``: reused from ``stack`` if one pops cleanly, else fresh."""
    probe("limbo.push.step", op="recycle")
    node = stack.try_pop()
    if node is None:
        node = stack.pool.fresh()
    node.val = obj
    node.next = NIL
    return node


def return_node(stack: RecycleStack, node: DeferNode) -> None:
    stack.push(node)


class LimboList:
    def __init__(self, recycle: RecycleStack) -> None:
        self.recycle = recycle
        self._head = AtomicHandleCell(NIL)

    def push(self, obj: int) -> None:
        """Add ``obj``.  Wait-free: a bounded node fetch plus one exchange."""
        node = recycle_node(self.recycle, obj)
        probe("limbo.push.step", op="exchange")
        old = self._head.exchange(node.handle)
        node.next = old

    def pop(self) -> int:
        """Detach the whole chain; returns its head handle (nil if empty)."""
        return self._head.exchange(NIL)

    def drain(self) -> Iterator[int]:
        """Pop the chain and yield every deferred object, recycling the nodes."""
        h = self.pop()
        pool = self.recycle.pool
        while h != NIL:
            node = pool.get(h)
            obj, h = node.val, node.next
            self.recycle.push(node)
            yield obj

    def is_empty(self) -> bool:
        return self._head.read() == NIL

    def peek_chain(self) -> list[int]:
        """Objects currently in the list, head first, without removing them."""
        out, h = [], self._head.read()
        pool = self.recycle.pool
        while h != NIL:
            node = pool.get(h)
            out.append(node.val)
            h = node.next
        return out

