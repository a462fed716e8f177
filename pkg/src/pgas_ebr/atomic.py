"""Atomic operations on compressed object references.

A reference is packed into one 64-bit word: the owning locale id in the
high 16 bits and a 48-bit arena address in the low bits.  ``0`` is the nil
reference.  :class:`AtomicHandleCell` stores such a word next to a 64-bit
modification counter so that the ``*_aba`` operations can detect an
A -> B -> A history that a plain compare-and-swap would miss.

CPython exposes no 128-bit compare-exchange, so cells fall back to a pool
of striped locks (:data:`NATIVE_DCAS` is ``False``).  Plain reads never
take the lock.
"""

from __future__ import annotations

import itertools
import threading
from typing import NamedTuple

LOCALE_BITS = 16
ADDR_BITS = 48
MAX_LOCALES = 1 << LOCALE_BITS
ADDR_LIMIT = 1 << ADDR_BITS
ADDR_MASK = ADDR_LIMIT - 1

NIL = 0

# Capability flag: True only where a hardware double-word CAS backs the cells.
NATIVE_DCAS = False

_N_STRIPES = 64
_stripes = tuple(threading.Lock() for _ in range(_N_STRIPES))
_next_stripe = itertools.count()


def _stripe() -> threading.Lock:
    return _stripes[next(_next_stripe) % _N_STRIPES]


def encode(locale: int, addr: int) -> int:
    """Pack ``(locale, addr)`` into a 64-bit handle."""
    if not 0 <= locale < MAX_LOCALES:
        raise ValueError(f"locale id {locale} does not fit in {LOCALE_BITS} bits")
    if not 0 <= addr < ADDR_LIMIT:
        raise ValueError(f"address {addr} does not fit in {ADDR_BITS} bits")
    return (locale << ADDR_BITS) | addr


def decode(handle: int) -> tuple[int, int]:
    """Inverse of :func:`encode`."""
    return handle >> ADDR_BITS, handle & ADDR_MASK


def locale_of(handle: int) -> int:
    return handle >> ADDR_BITS


def addr_of(handle: int) -> int:
    return handle & ADDR_MASK


class AbaVersioned(NamedTuple):
    """A handle paired with the cell's modification counter."""

    value: int
    counter: int


class AtomicHandleCell:
    """Atomically updatable (handle, counter) pair.

    Plain operations (``read``, ``write``, ``exchange``,
    ``compare_and_swap``) act on the handle alone and leave the counter
    untouched, so they can be mixed freely with the ABA variants.  Every
    successful ABA mutation bumps the counter by exactly one.

    ``aba_counter=False`` builds the control variant whose counter never
    moves; it exists to show what the counter protects against.
    """

    __slots__ = ("_value", "_counter", "_lock", "_bump")

    def __init__(self, value: int = NIL, *, aba_counter: bool = True) -> None:
        self._value = value
        self._counter = 0
        self._lock = _stripe()
        self._bump = 1 if aba_counter else 0

    @property
    def aba_protected(self) -> bool:
        return self._bump == 1

    # plain variants

    def read(self) -> int:
        return self._value

    def write(self, value: int) -> None:
        with self._lock:
            self._value = value

    def exchange(self, value: int) -> int:
        with self._lock:
            old = self._value
            self._value = value
        return old

    def compare_and_swap(self, expected: int, desired: int) -> bool:
        with self._lock:
            if self._value != expected:
                return False
            self._value = desired
        return True

    # ABA variants

    def read_aba(self) -> AbaVersioned:
        with self._lock:
            return AbaVersioned(self._value, self._counter)

    def write_aba(self, value: int) -> None:
        with self._lock:
            self._value = value
            self._counter += self._bump

    def exchange_aba(self, value: int) -> AbaVersioned:
        with self._lock:
            old = AbaVersioned(self._value, self._counter)
            self._value = value
            self._counter += self._bump
        return old

    def compare_and_swap_aba(self, expected: AbaVersioned, desired: int) -> bool:
        with self._lock:
            if self._value != expected[0] or self._counter != expected[1]:
                return False
            self._value = desired
            self._counter = expected[1] + self._bump
        return True

    def __repr__(self) -> str:
        loc, addr = decode(self._value)
        return f"AtomicHandleCell(locale={loc}, addr={addr}, counter={self._counter})"


class AtomicInt64:
    """Plain 64-bit atomic integer, the baseline the handle cell is measured against."""

    __slots__ = ("_value", "_lock")

    def __init__(self, value: int = 0) -> None:
        self._value = value
        self._lock = _stripe()

    def read(self) -> int:
        return self._value

    def write(self, value: int) -> None:
        with self._lock:
            self._value = value

    def exchange(self, value: int) -> int:
        with self._lock:
            old = self._value
            self._value = value
        return old

    def compare_and_swap(self, expected: int, desired: int) -> bool:
        with self._lock:
            if self._value != expected:
                return False
            self._value = desired
        return True

    def fetch_add(self, delta: int) -> int:
        with self._lock:
            old = self._value
            self._value = old + delta
        return old


class AtomicFlag:
    """Test-and-set flag.  ``test_and_set`` returns the previous state."""

    __slots__ = ("_lock",)

    def __init__(self) -> None:
        self._lock = threading.Lock()

    def test_and_set(self) -> bool:
        return not self._lock.acquire(blocking=False)

    def clear(self) -> None:
        try:
            self._lock.release()
        except RuntimeError:
            pass  # already clear

    def is_set(self) -> bool:
        return self._lock.locked()
