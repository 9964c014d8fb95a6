"""Checks shared by the unit tests and the acceptance script."""
from krefcheck.kir import canonicalize, parse_module
from krefcheck.kir.ir import Call
from krefcheck.pipeline import prepare
from krefcheck.slicer import closure_violations, collect_essential_args, dce_baseline

from conftest import load_corpus

# The right-hand side of the slicing illustration, written by hand.
TPM_SLICED = """
type device { kref: kref_t, of_node: ptr } kref kref
type tpm_chip { dev: device, id: i32 }
type inode_priv { chip: ptr<tpm_chip> }
type inode { i_private: ptr<inode_priv>, i_lock: i32 }
type file { private_data: ptr }
refclass device

fn @open(%inode: ptr<inode>, %file: ptr<file>) -> i32 {
^entry:
  %chip = nondet ptr<tpm_chip>
  %dev = fieldaddr tpm_chip, %chip, dev
  rc_inc device, %dev
  %err = nondet i32
  %failed = cmp ne i32 %err, 0
  condbr %failed, ^put, ^out
^put:
  rc_dec device, %dev
  br ^out
^out:
  ret i32 %err
}
"""
TPM_FUNCTION = "tpm_bios_measurements_open"


def tpm_sliced_function():
    return prepare(load_corpus("tpm_locked_open"), None, True).module.function(TPM_FUNCTION)


def tpm_slice_matches() -> bool:
    want = parse_module(TPM_SLICED).function("open")
    return canonicalize(tpm_sliced_function()) == canonicalize(want)


def minimality_failures(name: str, limit: int = 50) -> list[str]:
    """Marked non-R1 instructions whose removal leaves the marking closed."""
    prep = prepare(load_corpus(name), None, True)
    module = prep.harness.module
    essential = collect_essential_args(module)
    bad = []
    for fn in module.functions:
        if fn.instruction_count() > limit:
            continue
        marking = prep.markings[fn.name]
        if closure_violations(fn, marking, essential, module):
            bad.append(f"{name}:{fn.name} not closed")
        for loc in marking.necessary:
            if marking.provenance[loc] == "R1":
                continue
            smaller = type(marking)(fn.name, marking.necessary - {loc}, marking.provenance)
            if not closure_violations(fn, smaller, essential, module):
                bad.append(f"{name}:{fn.name}:{loc} removable")
    return bad


def irrelevant_calls(name: str) -> int:
    """Calls in the harnessed program that the slicer does not retain."""
    prep = prepare(load_corpus(name), None, True)
    return sum(1 for fn in prep.harness.module.functions
               for loc, inst in fn.instructions()
               if isinstance(inst, Call) and loc not in prep.markings[fn.name].necessary)


def dce_vs_slice(name: str) -> tuple[int, int]:
    """Original instructions retained by the DCE baseline and by the slicer.

    The slicer's count excludes the nondet values and back-fill stores it
    synthesizes; DCE output consists of original instructions only.
    """
    full = prepare(load_corpus(name), None, False).module
    sliced = prepare(load_corpus(name), None, True)
    return dce_baseline(full).instruction_count(), sliced.after


def ledger_conservation(module, choices, domain=2) -> bool:
    """Replay ``choices`` and compare each class delta with the count of
    executed increments minus decrements on non-null objects."""
    from krefcheck.engine.interp import Config, Program
    from krefcheck.kir.ir import RcDec, RcInc
    prog = Program(module, "main", Config(domain=domain))
    choices = list(choices)
    st, k = prog.initial_state(), 0
    counted: dict[str, int] = {}
    while st.status == "run":
        fr = st.frames[-1]
        inst = prog.blocks[fr.fn][fr.block].instrs[fr.idx]
        if isinstance(inst, (RcInc, RcDec)) and prog._eval(st, inst.obj) is not None:
            step = 1 if isinstance(inst, RcInc) else -1
            counted[inst.refclass] = counted.get(inst.refclass, 0) + step
        succ = prog.successors(st)
        st = succ[choices[k]] if len(succ) > 1 else succ[0]
        k += len(succ) > 1
    final = st.deltas()
    classes = set(counted) | set(final)
    return all(counted.get(c, 0) == final.get(c, 0) for c in classes)
