"""The end-to-end pipeline: models, harness, slicing, then one engine."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

from .engine import bmc, enumerate_paths
from .engine.verdict import Verdict
from .harness import HarnessProgram, build_harness
from .kir import parse_module, validate
from .kir.ir import EntryDescriptor, KirModule
from .refmodel import ModelRegistry, apply_models, default_registry
from .slicer import SliceMarking, mark_module, slice_module

ENGINES = ("enum", "bmc", "chc")


class StageError(Exception):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


@dataclass
class Options:
    engine: str = "enum"
    bound: int = 1
    domain: int = 2
    budget: int = 200_000
    underflow_check: bool = True
    slice: bool = True
    solver_cmd: Optional[str] = None
    timeout: float = 300.0


@dataclass
class Prepared:
    module: KirModule                 # verification target (harnessed, maybe sliced)
    harness: HarnessProgram
    markings: dict = field(default_factory=dict)
    before: int = 0                   # instructions before slicing
    after: int = 0                    # of those, how many the slicer retained
    timings: dict = field(default_factory=dict)

    def rule_counts(self) -> dict[str, int]:
        total: dict[str, int] = {}
        for m in self.markings.values():
            for rule, n in m.rule_counts().items():
                total[rule] = total.get(rule, 0) + n
        return total


def load(text: str, file: str = "<input>", registry: Optional[ModelRegistry] = None) -> KirModule:
    """Parse and validate a module."""
    from .kir import ParseError
    registry = registry or default_registry()
    try:
        module = parse_module(text, file)
    except ParseError as err:
        raise StageError("parse", str(err)) from err
    problems = validate(module, api_names=registry.names())
    if problems:
        raise StageError("validate", "; ".join(str(v) for v in problems[:5]))
    return module


def prepare(module: KirModule, entry: Optional[str] = None, do_slice: bool = True,
            registry: Optional[ModelRegistry] = None) -> Prepared:
    """Apply models, build the harness and (optionally) slice."""
    registry = registry or default_registry()
    timings = {}
    t0 = time.perf_counter()
    try:
        modeled = apply_models(module, registry)
    except Exception as err:  # ModelError and malformed template use
        raise StageError("model", str(err)) from err
    timings["model"] = time.perf_counter() - t0
    descriptor = module.entry
    if entry is not None:
        recipe = module.entry.input_recipe if module.entry and module.entry.init_function == entry else ()
        descriptor = EntryDescriptor(entry, recipe)
    t0 = time.perf_counter()
    try:
        if modeled.function("main") is not None and (descriptor is None or descriptor.init_function != "main"):
            # already harnessed (e.g. re-slicing sliced output)
            from .harness import HARNESS_NAME
            harness = HarnessProgram(modeled, HARNESS_NAME, tuple(modeled.refclasses),
                                     descriptor or modeled.entry)
        else:
            harness = build_harness(modeled, descriptor)
    except Exception as err:
        raise StageError("harness", str(err)) from err
    timings["harness"] = time.perf_counter() - t0
    target = harness.module
    before = target.instruction_count()
    markings: dict[str, SliceMarking] = {}
    if do_slice:
        t0 = time.perf_counter()
        markings = mark_module(target)
        target = slice_module(target, markings)
        timings["slice"] = time.perf_counter() - t0
    problems = validate(target, api_names=registry.names())
    if problems:
        raise StageError("slice" if do_slice else "harness",
                         "transform broke well-formedness: " + str(problems[0]))
    # Synthesized nondet replacements and writeonly back-fills are not
    # counted, so ``after`` never exceeds ``before``.
    after = sum(len(m.necessary) for m in markings.values()) if do_slice else before
    return Prepared(target, harness, markings, before, after, timings)


def run_engine(prepared: Prepared, opts: Options) -> Verdict:
    module = prepared.module
    if opts.engine == "enum":
        return enumerate_paths(module, "main", opts.domain, opts.budget, opts.underflow_check)
    if opts.engine == "bmc":
        return bmc(module, opts.bound, "main", opts.domain, opts.budget, opts.underflow_check)
    if opts.engine == "chc":
        from .engine.chc import check_chc
        return check_chc(module, opts.solver_cmd, opts.timeout,
                         domain=opts.domain, underflow_check=opts.underflow_check)
    raise StageError("engine", f"unknown engine {opts.engine!r}")


def check(module: KirModule, entry: Optional[str] = None,
          opts: Optional[Options] = None) -> tuple[Verdict, Prepared]:
    opts = opts or Options()
    prepared = prepare(module, entry, opts.slice)
    t0 = time.perf_counter()
    try:
        verdict = run_engine(prepared, opts)
    except StageError:
        raise
    except Exception as err:
        raise StageError("engine", f"{type(err).__name__}: {err}") from err
    prepared.timings["engine"] = time.perf_counter() - t0
    return verdict, prepared


__all__ = ["ENGINES", "Options", "Prepared", "StageError", "check", "load",
           "prepare", "run_engine"]
