"""Verification engines: explicit-state enumeration, BMC and CHC emission."""
from .interp import (
    DEFAULT_BUDGET, DEFAULT_DOMAIN, Addr, Config, EngineError, FinalState,
    Program, State, bmc, enumerate_final_states, enumerate_paths, replay,
    replay_state,
)
from .verdict import Bug, Safe, Timeout, TraceStep, Unknown, Verdict

__all__ = [
    "DEFAULT_BUDGET", "DEFAULT_DOMAIN", "Addr", "Config", "EngineError",
    "FinalState", "Program", "State", "bmc", "enumerate_final_states",
    "enumerate_paths", "replay", "replay_state", "Bug", "Safe", "Timeout",
    "TraceStep", "Unknown", "Verdict",
]
