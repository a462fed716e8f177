"""Distributed epoch-based reclamation and atomic object references on a simulated PGAS runtime."""

from .atomic import (
    NATIVE_DCAS,
    NIL,
    AbaVersioned,
    AtomicFlag,
    AtomicHandleCell,
    AtomicInt64,
    decode,
    encode,
)
from .epoch import (
    EpochManager,
    LocalEpochManager,
    ReclaimOutcome,
    Token,
    TokenGuard,
    new_epoch_manager,
    new_local_epoch_manager,
    reclaim_epoch,
)
from .limbo import LimboList, RecycleStack
from .runtime import ArenaExhausted, CommStats, Runtime, SlotState, UseAfterFree, init_runtime
from .treiber import TreiberStack

__version__ = "0.1.0"

__all__ = [
    "NATIVE_DCAS",
    "NIL",
    "AbaVersioned",
    "ArenaExhausted",
    "AtomicFlag",
    "AtomicHandleCell",
    "AtomicInt64",
    "CommStats",
    "EpochManager",
    "LimboList",
    "LocalEpochManager",
    "ReclaimOutcome",
    "RecycleStack",
    "Runtime",
    "SlotState",
    "Token",
    "TokenGuard",
    "TreiberStack",
    "UseAfterFree",
    "decode",
    "encode",
    "init_runtime",
    "new_epoch_manager",
    "new_local_epoch_manager",
    "reclaim_epoch",
]
