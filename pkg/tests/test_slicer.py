from collections import Counter

import pytest

from conftest import PROGRAMS, load_corpus
from support import (
    TPM_FUNCTION, dce_vs_slice, tpm_slice_matches, tpm_sliced_function,
    irrelevant_calls, minimality_failures,
)
from krefcheck.engine import enumerate_final_states
from krefcheck.kir import cfg_successors, parse_module, print_module
from krefcheck.kir.ir import Call, Load, Nondet, RcDec, RcInc, Store
from krefcheck.pipeline import load, prepare
from krefcheck.refmodel import apply_models
from krefcheck.slicer import (
    collect_essential_args, mark_module, mark_necessary, slice_function, slice_module,
)

KREF = "type device { kref: kref_t } kref kref\nrefclass device\n"


def test_tpm_slice_structure():
    assert tpm_slice_matches()


def test_tpm_slice_instruction_multiset():
    fn = tpm_sliced_function()
    kinds = Counter(type(i).__name__ for _, i in fn.instructions())
    assert kinds["RcInc"] == 1 and kinds["RcDec"] == 1
    assert not any(isinstance(i, Call) for _, i in fn.instructions())
    err = fn.definitions()["err"]
    assert isinstance(err, Nondet)


def test_tpm_slice_marking():
    prep = prepare(load_corpus("tpm_locked_open"), None, True)
    fn = prep.harness.module.function(TPM_FUNCTION)
    marked = prep.markings[TPM_FUNCTION].necessary
    by_callee = {}
    for loc, inst in fn.instructions():
        if isinstance(inst, Call):
            by_callee[inst.callee] = loc in marked
        if isinstance(inst, (RcInc, RcDec)):
            assert loc in marked
    assert by_callee == {"inode_lock": False, "inode_unlock": False, "seq_open": False}


def test_essential_args_direct_and_transitive():
    m = apply_models(parse_module(KREF + """
fn @w(%d: ptr<device>, %n: i32) -> void {
^entry:
  call ptr @get_device(%d)
  ret void
}
fn @outer(%d: ptr<device>) -> void {
^entry:
  call void @w(%d, 3)
  ret void
}
fn @idle(%d: ptr<device>) -> void {
^entry:
  ret void
}
"""))
    ess = collect_essential_args(m)
    assert ess[("w", 0)] and ess[("outer", 0)]
    assert not ess[("w", 1)] and not ess[("idle", 0)]


def test_pure_arithmetic_only_ret():
    m = parse_module("fn @f(%a: i32) -> void {\n^entry:\n  %b = add i32 %a, 1\n"
                     "  %c = mul i32 %b, %b\n  ret void\n}\n")
    fn = m.functions[0]
    marking = mark_necessary(fn, collect_essential_args(m), m)
    assert marking.necessary == {("entry", 2)}


def test_store_feeding_marked_load():
    m = apply_models(parse_module(KREF + """
fn @f(%d: ptr<device>) -> void {
^entry:
  %slot = alloca ptr<device>
  store ptr<device> %d, %slot
  %x = load ptr<device>, %slot
  call ptr @get_device(%x)
  ret void
}
"""))
    fn = m.functions[0]
    marking = mark_necessary(fn, collect_essential_args(m), m)
    kinds = {type(fn.block_map()[b].instrs[i]) for b, i in marking.necessary}
    assert Store in kinds and Load in kinds


def test_fully_necessary_function_unchanged():
    m = apply_models(parse_module(KREF + """
fn @f(%d: ptr<device>) -> void {
^entry:
  call ptr @get_device(%d)
  call void @put_device(%d)
  ret void
}
"""))
    fn = m.functions[0]
    marking = mark_necessary(fn, collect_essential_args(m), m)
    assert slice_function(fn, marking, m) == fn


WRITEONLY = """
extern @fill(ptr, ptr<i32>) -> void
fn @f(%src: ptr) -> i32 {
^entry:
  %slot = alloca i32
  call void @fill(%src, writeonly %slot)
  %v = load i32, %slot
  %c = cmp ne i32 %v, 0
  condbr %c, ^one, ^zero
^one:
  ret i32 1
^zero:
  ret i32 0
}
"""


def test_writeonly_backfill_observable():
    m = parse_module(WRITEONLY)
    sliced = slice_module(m)
    fn = sliced.function("f")
    assert not any(isinstance(i, Call) for _, i in fn.instructions())
    rets = {f.ret for f in enumerate_final_states(sliced, "f", ("fresh",))}
    assert rets == {0, 1}


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_closure_and_minimality(name):
    assert minimality_failures(name) == []


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_cfg_preserved(name):
    prep = prepare(load_corpus(name), None, True)
    for fn in prep.harness.module.functions:
        assert cfg_successors(fn) == cfg_successors(prep.module.function(fn.name))


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_after_not_above_before(name):
    prep = prepare(load_corpus(name), None, True)
    assert 0 < prep.after <= prep.before


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_slice_idempotent(name):
    once = print_module(prepare(load_corpus(name), None, True).module)
    twice = print_module(prepare(load(once), None, True).module)
    assert once == twice


@pytest.mark.parametrize("name", sorted(PROGRAMS))
def test_dce_keeps_strictly_more_when_calls_are_irrelevant(name):
    dce, sliced = dce_vs_slice(name)
    if irrelevant_calls(name):
        assert dce > sliced
    else:
        assert dce >= sliced


def test_more_essential_args_never_shrink_marking():
    m = prepare(load_corpus("q6v5_leak"), None, False).module
    base = collect_essential_args(m)
    bigger = {k: True for k in base}
    small, large = mark_module(m, base), mark_module(m, bigger)
    for fn in small:
        assert small[fn].necessary <= large[fn].necessary


def test_rule_provenance_is_known():
    for name in PROGRAMS:
        prep = prepare(load_corpus(name), None, True)
        for m in prep.markings.values():
            assert set(m.provenance) == set(m.necessary)
            assert set(m.provenance.values()) <= {"R1", "R2", "R3", "R4", "R5",
                                                  "root", "demand", "pred"}
