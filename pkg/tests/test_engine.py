import pytest

from conftest import PROGRAMS, load_corpus, needs_solver
from support import ledger_conservation
from krefcheck.engine import (
    Bug, EngineError, Safe, Timeout, Unknown, bmc, enumerate_final_states, enumerate_paths,
)
from krefcheck.engine.interp import Config, Program
from krefcheck.engine.chc import check_chc, emit_smtlib, encode_chc
from krefcheck.engine.solver import SOLVER_ENV, resolve_solver_cmd, run_external_solver
from krefcheck.kir import back_edges, parse_module
from krefcheck.pipeline import Options, check, prepare

LOOP_PROGRAMS = ["loop_leak", "loop_fixed", "tegra_double_put", "tegra_fixed"]


def _harness(name, sliced=True):
    return prepare(load_corpus(name), None, sliced).module


def _loop_free(name):
    m = _harness(name)
    return not any(back_edges(fn) for fn in m.functions)


def test_rc_inc_updates_ledger():
    m = parse_module("type d { kref: kref_t } kref kref\nrefclass device\n"
                     "fn @f(%x: ptr<d>) -> void {\n^entry:\n  rc_inc device, %x\n  ret void\n}\n")
    (final,) = enumerate_final_states(m, "f", ("fresh",))
    assert list(final.ledger.values()) == [1]
    assert next(iter(final.ledger))[0] == "device"


def test_condbr_on_nondet_has_two_successors():
    m = parse_module("fn @f() -> void {\n^entry:\n  %c = nondet i1\n  condbr %c, ^a, ^b\n"
                     "^a:\n  ret void\n^b:\n  ret void\n}\n")
    prog = Program(m, "f")
    st = prog.successors(prog.initial_state())[0]     # after %c: first outcome
    assert len(prog.successors(prog.initial_state())) == 2
    assert len(prog.successors(st)) == 1


def test_tpm_sliced_finals():
    from support import tpm_sliced_function
    from krefcheck.kir.ir import KirModule
    m = load_corpus("tpm_locked_open")
    module = KirModule(types=m.types, refclasses=m.refclasses,
                       functions=(tpm_sliced_function(),))
    finals = enumerate_final_states(module, "tpm_bios_measurements_open", ("fresh", "fresh"))
    # %chip is an address nondet (null or fresh) and %err ranges over {0,1}.
    # The failure path is balanced, so the failure assertion holds.
    assert len(finals) == 4
    assert {f.ret for f in finals} == {0, 1}
    assert all(sum(f.ledger.values()) == 0 for f in finals if f.ret != 0)
    assert any(sum(f.ledger.values()) == 1 for f in finals if f.ret == 0)


def test_never_written_field_is_unknown():
    m = parse_module("fn @main() -> i32 {\n^entry:\n  %a = alloca i32\n"
                     "  %v = load i32, %a\n  ret i32 %v\n}\n")
    assert isinstance(enumerate_paths(m), Unknown)


def test_tpm_leak_and_fixed():
    assert isinstance(enumerate_paths(_harness("tpm_leak")), Bug)
    assert isinstance(enumerate_paths(_harness("tpm_fixed")), Safe)


def test_loop_leak_trace_spans_iterations():
    v = enumerate_paths(_harness("loop_leak"))
    assert isinstance(v, Bug)
    heads = [s for s in v.trace if s.instr.startswith("dsa_probe_ports:^head#")]
    assert len(heads) >= 3


def test_bmc_bound_miss_and_hit():
    m = _harness("loop_leak")
    one = bmc(m, 1)
    assert isinstance(one, Safe) and one.bounded
    assert isinstance(bmc(m, 3), Bug)


@pytest.mark.parametrize("name", LOOP_PROGRAMS)
def test_bmc_monotone(name):
    m = _harness(name)
    seen_bug = False
    for k in (1, 2, 3, 4):
        is_bug = isinstance(bmc(m, k), Bug)
        assert is_bug or not seen_bug, f"bmc({k}) lost a bug found at a smaller bound"
        seen_bug = seen_bug or is_bug


@pytest.mark.parametrize("name", [n for n in sorted(PROGRAMS) if _loop_free(n)])
def test_bmc_equals_enum_without_loops(name):
    m = _harness(name)
    assert bmc(m, 1).status == enumerate_paths(m).status


def test_bmc_rejects_zero_bound():
    with pytest.raises(ValueError):
        bmc(_harness("tpm_fixed"), 0)


BUG_RUNS = [(n, sliced) for n, e in sorted(PROGRAMS.items()) for sliced in (True, False)
            if e.expected("enum", sliced) == "bug"]


@pytest.mark.parametrize("name,sliced", BUG_RUNS)
def test_ledger_conservation_on_bug_replay(name, sliced):
    verdict, prep = check(load_corpus(name), None, Options(slice=sliced))
    assert isinstance(verdict, Bug)
    assert ledger_conservation(prep.module, verdict.choices)


@pytest.mark.parametrize("name", ["tpm_leak", "loop_leak", "q6v5_leak"])
def test_determinism(name):
    m = _harness(name)
    assert enumerate_paths(m) == enumerate_paths(m)


def test_budget_exhaustion_is_timeout():
    v = enumerate_paths(_harness("stress_regs", sliced=False))
    assert isinstance(v, Timeout)
    assert isinstance(enumerate_paths(_harness("stress_regs")), Safe)


def test_entry_must_exist():
    with pytest.raises(EngineError):
        Program(_harness("tpm_fixed"), "nope", Config())


# ------------------------------------------------------------------ CHC

def test_emission_format():
    text = emit_smtlib(encode_chc(_harness("tpm_leak")))
    lines = text.splitlines()
    assert lines[0] == "(set-logic HORN)"
    assert text.count("(check-sat)") == 1
    assert "(declare-fun P_main_entry (" in text
    assert "(declare-fun Err () Bool)" in text
    assert text.count("(") == text.count(")")


def test_emission_without_inlining_uses_summaries():
    text = emit_smtlib(encode_chc(_harness("tpm_leak"), inline=False))
    assert "S_tpm_bios_measurements_open" in text
    assert "P_tpm_bios_measurements_open_entry" in text


def test_loop_collapse_is_noted():
    system = encode_chc(_harness("loop_leak"))
    assert any("loops" in n for n in system.notes)


def test_trivially_unsat_script():
    script = "(set-logic HORN)\n(assert false)\n(check-sat)\n"
    if resolve_solver_cmd() is None:
        pytest.skip("no Horn solver configured")
    assert run_external_solver(script, resolve_solver_cmd(), 30).status == "unsat"


def test_solver_timeout():
    res = run_external_solver("(check-sat)\n", 'sh -c "sleep 1" {file}', timeout=0.1)
    assert res.status == "timeout"


def test_solver_without_verdict_is_error():
    res = run_external_solver("(check-sat)\n", 'sh -c "echo oops; exit 3" {file}', timeout=5)
    assert res.status == "solver-error" and "oops" in res.output


def test_solver_output_parsing():
    for word, status in (("unsat", "unsat"), ("sat", "sat"), ("unknown", "solver-error")):
        assert run_external_solver("", f'sh -c "echo {word}" {{file}}', 5).status == status


def test_no_solver_is_unknown(monkeypatch):
    monkeypatch.delenv(SOLVER_ENV, raising=False)
    monkeypatch.setenv("PATH", "/nonexistent")
    v = check_chc(_harness("tpm_leak"))
    assert isinstance(v, Unknown) and "no Horn solver" in v.reason


def test_env_solver_command(monkeypatch):
    monkeypatch.setenv(SOLVER_ENV, 'sh -c "echo sat" {file}')
    assert isinstance(check_chc(_harness("tpm_leak")), Safe)
    monkeypatch.setenv(SOLVER_ENV, 'sh -c "echo unsat" {file}')
    assert isinstance(check_chc(_harness("tpm_leak")), Bug)


@needs_solver
@pytest.mark.parametrize("name", sorted(PROGRAMS))
@pytest.mark.parametrize("inline", [True, False])
def test_chc_agrees_with_enum(name, inline):
    m = _harness(name)
    want = enumerate_paths(m).status
    assert check_chc(m, resolve_solver_cmd(), 60, inline=inline).status == want


@needs_solver
def test_chc_finds_loop_bug_missed_by_bmc1():
    m = _harness("loop_leak")
    assert isinstance(bmc(m, 1), Safe)
    assert isinstance(check_chc(m, resolve_solver_cmd(), 60), Bug)


RECURSIVE = """
type device { kref: kref_t } kref kref
refclass device
fn @grab(%d: ptr<device>, %n: i32) -> i32 {
^entry:
  %z = cmp eq i32 %n, 0
  condbr %z, ^base, ^step
^base:
  ret i32 0
^step:
  call ptr @get_device(%d)
  %m = sub i32 %n, 1
  %r = call i32 @grab(%d, %m)
  call void @put_device(%d)
  ret i32 %r
}
fn @probe(%d: ptr<device>) -> i32 {
^entry:
  %r = call i32 @grab(%d, 2)
  call ptr @get_device(%d)
  %e = nondet i1
  condbr %e, ^bad, ^ok
^bad:
  LEAK
  ret i32 -1
^ok:
  ret i32 0
}
entry @probe (fresh)
"""


@needs_solver
@pytest.mark.parametrize("leak,want", [(True, "bug"), (False, "safe")])
def test_recursive_calls_use_summaries(leak, want):
    text = RECURSIVE.replace("  LEAK\n", "" if leak else "  call void @put_device(%d)\n")
    m = prepare(parse_module(text), None, True).module
    assert enumerate_paths(m).status == want
    assert check_chc(m, resolve_solver_cmd(), 60).status == want
