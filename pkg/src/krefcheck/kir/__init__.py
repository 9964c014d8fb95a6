"""KIR: the kernel-flavored SSA IR the verifier operates on."""
from .cfg import (
    AbstractObject, UnderlyingObjects, back_edges, cfg_predecessors,
    cfg_successors, dominators, liveness, underlying_object,
)
from .ir import *  # noqa: F401,F403
from .parser import ParseError, SourceSpan, parse_module
from .printer import format_function, format_instruction, print_module
from .transform import canonicalize, inline_call
from .validate import Violation, validate

__all__ = [
    "AbstractObject", "UnderlyingObjects", "back_edges", "cfg_predecessors",
    "cfg_successors", "dominators", "liveness", "underlying_object",
    "ParseError", "SourceSpan", "parse_module", "format_function",
    "format_instruction", "print_module", "canonicalize", "inline_call",
    "Violation", "validate",
]
