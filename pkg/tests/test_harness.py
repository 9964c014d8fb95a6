import pytest

from conftest import load_corpus
from krefcheck.engine import enumerate_paths
from krefcheck.harness import HARNESS_NAME, HarnessError, build_harness
from krefcheck.kir import parse_module, validate
from krefcheck.kir.ir import Assert, EntryDescriptor, RcDelta
from krefcheck.pipeline import Options, check
from krefcheck.refmodel import apply_models, default_registry

BASE = """
type device { kref: kref_t } kref kref
refclass device
refclass of_node
fn @init(%d: ptr<device>) -> i32 {
^entry:
BODY
}
entry @init (fresh)
"""


def _module(body: str):
    return parse_module(BASE.replace("BODY", body))


def _verdict(body: str) -> str:
    return check(_module(body))[0].status


def test_one_assert_per_class_on_failure_path():
    h = build_harness(apply_models(_module("  ret i32 0")))
    main = h.module.function(HARNESS_NAME)
    fail = main.block_map()["fail"]
    asserted = [i for i in fail.instrs if isinstance(i, Assert)]
    deltas = [i.refclass for i in fail.instrs if isinstance(i, RcDelta)]
    assert len(asserted) == 2 and deltas == ["device", "of_node"]
    assert not any(isinstance(i, Assert) for i in main.block_map()["done"].instrs)
    assert h.asserted_classes == ("device", "of_node")


def test_existing_functions_untouched(program_name):
    m = apply_models(load_corpus(program_name))
    h = build_harness(m)
    assert h.module.functions[:-1] == m.functions
    assert h.module.functions[-1].name == HARNESS_NAME
    assert validate(h.module, default_registry().names()) == []


def test_always_succeeding_init_is_safe():
    assert _verdict("  call ptr @get_device(%d)\n  ret i32 0") == "safe"


def test_tpm_shaped_leak():
    body = """  call ptr @get_device(%d)
  %e = nondet i1
  condbr %e, ^bad, ^ok
^bad:
  ret i32 -1
^ok:
  ret i32 0"""
    verdict, _ = check(_module(body))
    assert verdict.status == "bug"
    assert any("main:^fail" in s.instr for s in verdict.trace)
    fixed = body.replace("^bad:\n", "^bad:\n  call void @put_device(%d)\n")
    assert _verdict(fixed) == "safe"


def test_balanced_paths_safe_everywhere():
    body = """  call ptr @get_device(%d)
  %e = nondet i32
  call void @put_device(%d)
  ret i32 %e"""
    m = _module(body)
    for engine, bound in (("enum", 1), ("bmc", 1), ("bmc", 4)):
        assert check(m, None, Options(engine=engine, bound=bound))[0].status == "safe"


def test_missing_init_rejected():
    with pytest.raises(HarnessError):
        build_harness(_module("  ret i32 0"), EntryDescriptor("nope"))


def test_non_integer_init_rejected():
    m = parse_module("fn @f() -> void {\n^entry:\n  ret void\n}\nentry @f ()\n")
    with pytest.raises(HarnessError):
        build_harness(m)


def test_ledger_starts_at_zero():
    # Nothing happens before the call: a failing init with no rc ops is safe.
    assert _verdict("  ret i32 -5") == "safe"


def test_underflow_toggle():
    body = "  call void @put_device(%d)\n  ret i32 0"
    m = _module(body)
    assert check(m, None, Options(underflow_check=True))[0].status == "bug"
    assert check(m, None, Options(underflow_check=False))[0].status == "safe"


def test_harness_runs_on_engine_directly():
    h = build_harness(apply_models(_module("  ret i32 1")))
    assert enumerate_paths(h.module).status == "safe"
