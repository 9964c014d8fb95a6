import json
import subprocess
import sys

import pytest

from conftest import PROGRAMS, needs_solver
from krefcheck.cli import main
from krefcheck.report import from_machine


def _path(name):
    return str(PROGRAMS[name].path)


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_check_leak_and_fixed(capsys):
    code, out, _ = run(capsys, "check", _path("tpm_leak"), "--engine", "enum")
    assert code == 1 and "BUG" in out and "trace" in out
    code, out, _ = run(capsys, "check", _path("tpm_fixed"), "--engine", "enum")
    assert code == 0 and "SAFE" in out


def test_bounded_safe_warns(capsys):
    code, out, _ = run(capsys, "check", _path("loop_leak"), "--engine", "bmc", "--bound", "1")
    assert code == 0
    assert "warning: safe only within loop bound 1" in out
    code, out, err = run(capsys, "check", _path("loop_leak"), "--engine", "bmc", "--bound", "1",
                         "--format", "machine")
    assert code == 0 and from_machine(out).bounded
    assert "warning" in err


def test_machine_report_round_trips(capsys):
    code, out, _ = run(capsys, "check", _path("tegra_double_put"), "--format", "machine")
    report = from_machine(out)
    assert code == 1 and report.verdict == "bug"
    assert report.slicing.after <= report.slicing.before
    assert json.loads(out)["schema"] == "krefcheck.check/1"


def test_no_slice_and_underflow_flags(capsys):
    code, out, _ = run(capsys, "check", _path("tegra_double_put"))
    assert code == 1 and "underflow" in out
    # Without the underflow check the failure-path assertion still fires.
    code, out, _ = run(capsys, "check", _path("tegra_double_put"), "--underflow-check=off")
    assert code == 1 and "underflow" not in out and "assertion failed" in out
    code, out, _ = run(capsys, "check", _path("acer_fp"), "--no-slice")
    assert code == 0 and "slicing: off" in out


def test_entry_flag_overrides(capsys):
    code, out, _ = run(capsys, "check", _path("tpm_leak"), "--entry", "tpm_bios_measurements_open")
    assert code == 1
    code, _, err = run(capsys, "check", _path("tpm_leak"), "--entry", "missing")
    assert code == 4 and "error [harness]" in err


def test_budget_timeout_exit(capsys):
    code, out, _ = run(capsys, "check", _path("stress_regs"), "--no-slice")
    assert code == 2 and "TIMEOUT" in out


def test_slice_output_and_idempotence(capsys, tmp_path):
    code, out, err = run(capsys, "slice", _path("tpm_leak"))
    assert code == 0 and "rc_inc device" in out and "instructions retained" in err
    first = tmp_path / "once.kir"
    first.write_text(out)
    code, again, _ = run(capsys, "slice", str(first))
    assert again == out


def test_slice_machine_provenance(capsys):
    code, out, _ = run(capsys, "slice", _path("tpm_locked_open"), "--format", "machine")
    report = from_machine(out)
    assert {p["rule"] for p in report.provenance} >= {"R1", "root"}
    assert report.stats.after == len(report.provenance)


def test_emit_chc(capsys, tmp_path):
    target = tmp_path / "q.smt2"
    code, *_ = run(capsys, "emit-chc", _path("tpm_leak"), "-o", str(target))
    text = target.read_text()
    assert code == 0 and text.startswith("(set-logic HORN)") and "(check-sat)" in text


@needs_solver
def test_check_chc_engine(capsys):
    code, *_ = run(capsys, "check", _path("loop_leak"), "--engine", "chc")
    assert code == 1
    code, *_ = run(capsys, "check", _path("loop_fixed"), "--engine", "chc")
    assert code == 0


def test_corpus_run(capsys):
    code, out, _ = run(capsys, "corpus", "run", "--engines", "enum,bmc1")
    assert code == 0
    assert "0 mismatch" in out and "bmc-bound-miss" in out


def test_corpus_machine(capsys):
    code, out, _ = run(capsys, "corpus", "run", "--format", "machine")
    report = from_machine(out)
    assert code == 0 and len(report.rows) == len(PROGRAMS)


@pytest.mark.parametrize("argv", [
    ["check"], ["check", "x.kir", "--bound", "0"], ["check", "x.kir", "--engine", "z3"],
    ["frobnicate"], ["check", "x.kir", "--underflow-check", "maybe"],
])
def test_usage_errors_exit_3(argv, capsys):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 3


def test_bad_corpus_engine_exit_3(capsys):
    code, _, err = run(capsys, "corpus", "run", "--engines", "bmc0")
    assert code == 3 and "bound" in err


def test_stage_errors_exit_4(capsys, tmp_path):
    code, _, err = run(capsys, "check", str(tmp_path / "absent.kir"))
    assert code == 4 and "error [input]" in err
    bad = tmp_path / "bad.kir"
    bad.write_text("fn @f(\n")
    code, _, err = run(capsys, "check", str(bad))
    assert code == 4 and "error [parse]" in err
    invalid = tmp_path / "invalid.kir"
    invalid.write_text("fn @f() -> i32 {\n^entry:\n  ret i32 0\n  ret i32 0\n}\nentry @f ()\n")
    code, _, err = run(capsys, "check", str(invalid))
    assert code == 4 and "error [validate]" in err
    code, _, err = run(capsys, "corpus", "run", str(tmp_path / "none.json"))
    assert code == 4 and "error [manifest]" in err


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "krefcheck.cli", "check", _path("tpm_fixed")],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "SAFE" in proc.stdout
