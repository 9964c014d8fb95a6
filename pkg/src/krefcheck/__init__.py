"""Refcount bug verifier for KIR driver programs.

A program is rewritten with kernel API models, wrapped in a harness that
asserts every refcount class is balanced when initialization fails,
sliced down to the refcount-relevant instructions, and handed to one of
three engines: exhaustive enumeration, bounded model checking, or
Horn-clause emission for an external solver.

>>> from krefcheck import load, check
>>> verdict, _ = check(load(open("tpm_leak.kir").read()))  # doctest: +SKIP
"""
from .engine import Bug, Safe, Timeout, Unknown, Verdict
from .pipeline import Options, StageError, check, load, prepare

__version__ = "0.1.0"

__all__ = ["Bug", "Options", "Safe", "StageError", "Timeout", "Unknown", "Verdict",
           "__version__", "check", "load", "prepare"]
