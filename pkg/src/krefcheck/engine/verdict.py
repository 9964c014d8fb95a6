"""Verification outcomes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union


@dataclass(frozen=True)
class TraceStep:
    instr: str   # "function:^block#index"
    digest: str  # 8 hex digits of a canonical state summary


@dataclass(frozen=True)
class Safe:
    # True when exploration cut paths at a loop bound (bmc).
    bounded: bool = False
    notes: tuple[str, ...] = ()
    status = "safe"


@dataclass(frozen=True)
class Bug:
    message: str
    trace: tuple[TraceStep, ...] = ()
    choices: tuple[int, ...] = ()
    notes: tuple[str, ...] = ()
    status = "bug"


@dataclass(frozen=True)
class Timeout:
    budget: Union[int, float]
    notes: tuple[str, ...] = ()
    status = "timeout"


@dataclass(frozen=True)
class Unknown:
    reason: str
    notes: tuple[str, ...] = field(default=())
    status = "unknown"


Verdict = Union[Safe, Bug, Timeout, Unknown]
