"""Why a bounded SAFE is only a bounded SAFE.

loop_leak walks child nodes and leaks a reference only on its third
iteration. Bound k lets each loop take its back edge k times, so k + 1
iterations, and bmc misses the leak at bound 1. Enumeration and the Horn engine look at every iteration.
"""
from krefcheck import Options, check, load
from krefcheck.corpus import corpus_file
from krefcheck.engine.solver import resolve_solver_cmd

module = load(corpus_file("loop_leak.kir").read_text(), "loop_leak.kir")

for k in (1, 2, 3, 4):
    verdict, _ = check(module, None, Options(engine="bmc", bound=k))
    tag = "  (bounded: says nothing past the bound)" if verdict.status == "safe" else ""
    print(f"bmc, bound {k}: {verdict.status.upper()}{tag}")

verdict, _ = check(module, None, Options(engine="enum"))
print(f"enum:          {verdict.status.upper()}")

if resolve_solver_cmd() is None:
    print("chc:           skipped (no z3 on PATH and no KREFCHECK_SOLVER_CMD)")
else:
    verdict, _ = check(module, None, Options(engine="chc", timeout=60))
    print(f"chc:           {verdict.status.upper()}")
    fixed = load(corpus_file("loop_fixed.kir").read_text(), "loop_fixed.kir")
    verdict, _ = check(fixed, None, Options(engine="chc", timeout=60))
    print(f"chc, fixed:    {verdict.status.upper()}  (an invariant covers every iteration)")
