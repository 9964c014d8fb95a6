import json
import shutil

import pytest

from conftest import MANIFEST, PROGRAMS
from krefcheck.corpus import ManifestError, load_manifest, parse_engine, run_corpus
from krefcheck.pipeline import Options
from krefcheck.report import (
    CheckReport, CorpusReport, CorpusRow, ReportError, SliceStats, from_machine,
    render_corpus, to_machine,
)


def test_manifest_covers_required_programs():
    assert len(MANIFEST.entries) >= 10
    for name in ("tpm_leak", "tpm_fixed", "q6v5_leak", "q6v5_fixed", "tegra_double_put",
                 "tegra_fixed", "devlink_misuse", "loop_leak", "loop_fixed", "devres_probe",
                 "acer_fp", "indirect_flow_miss"):
        assert name in PROGRAMS


def test_expectation_lookup_order():
    loop = PROGRAMS["loop_leak"]
    assert loop.expected("bmc1") == "safe"
    assert loop.expected("bmc3") == "bug"
    assert PROGRAMS["acer_fp"].expected("enum", sliced=False) == "safe"
    assert PROGRAMS["tpm_leak"].expected("enum", sliced=False) == "bug"


def test_parse_engine():
    assert parse_engine("enum") == ("enum", None)
    assert parse_engine("bmc12") == ("bmc", 12)
    for bad in ("bmc", "bmc0", "z3", ""):
        with pytest.raises(ValueError):
            parse_engine(bad)


def test_bundled_corpus_enum_all_ok():
    report = run_corpus(MANIFEST, ["enum"])
    assert report.exit_code == 0
    assert report.totals() == {"ok": len(MANIFEST.entries), "mismatch": 0, "skipped": 0}
    exhibits = {r.program: r.exhibit for r in report.rows if r.exhibit}
    assert exhibits == {"acer_fp": "false-positive", "indirect_flow_miss": "false-negative"}


def test_bmc1_misses_loop_bug_in_table():
    report = run_corpus(MANIFEST, ["enum", "bmc1"])
    rows = {(r.program, r.engine): r for r in report.rows}
    assert rows["loop_leak", "enum"].got == "bug"
    assert rows["loop_leak", "bmc1"].got == "safe"
    assert rows["loop_leak", "bmc1"].exhibit == "bmc-bound-miss"
    assert "bmc-bound-miss" in render_corpus(report)


def test_parallel_rows_keep_manifest_order():
    serial = run_corpus(MANIFEST, ["enum", "bmc2"])
    parallel = run_corpus(MANIFEST, ["enum", "bmc2"], jobs=4)
    key = [(r.program, r.engine, r.got) for r in serial.rows]
    assert key == [(r.program, r.engine, r.got) for r in parallel.rows]


def _copy_manifest(tmp_path, edit):
    data = json.loads(MANIFEST.path.read_text())
    for row in data["programs"]:
        shutil.copy(MANIFEST.path.parent / row["file"], tmp_path / row["file"])
    edit(data)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(data))
    return path


def test_wrong_expectation_names_row(tmp_path):
    def edit(data):
        data["programs"] = data["programs"][:3]
        data["programs"][0]["expect"] = {"*": "safe"}
    report = run_corpus(load_manifest(_copy_manifest(tmp_path, edit)), ["enum"])
    assert report.exit_code == 1
    assert "MISMATCH tpm_leak [enum]: expected safe, got bug" in render_corpus(report)


@pytest.mark.parametrize("edit,message", [
    (lambda d: d["programs"][0].update(file="missing.kir"), "not found"),
    (lambda d: d["programs"][0].update(extra=1), "unknown keys"),
    (lambda d: d["programs"][0].update(expect={"*": "maybe"}), "verdict"),
    (lambda d: d["programs"][0].update(entry="nope"), "no function"),
    (lambda d: d["programs"].append(dict(d["programs"][0])), "duplicate"),
])
def test_manifest_errors(tmp_path, edit, message):
    with pytest.raises(ManifestError, match=message):
        load_manifest(_copy_manifest(tmp_path, edit))


def test_no_solver_rows_are_skipped(monkeypatch):
    monkeypatch.delenv("KREFCHECK_SOLVER_CMD", raising=False)
    monkeypatch.setenv("PATH", "/nonexistent")
    report = run_corpus(MANIFEST, ["chc"], options=Options())
    assert {r.status for r in report.rows} == {"skipped"}
    assert report.exit_code == 0


# ------------------------------------------------------------ report schema

def _check_report(**kw):
    base = dict(file="x.kir", entry="probe", engine="enum", bound=None, domain=2,
                verdict="bug", bounded=False, message="m",
                trace=[{"instr": "main:^entry#0", "digest": "0a1b2c3d"}], choices=[1],
                notes=["n"], slicing=SliceStats(True, 10, 4, {"R1": 3, "R2": 1}),
                timings={"engine": 0.1})
    base.update(kw)
    return CheckReport(**base)


def test_check_report_round_trip():
    r = _check_report()
    assert from_machine(to_machine(r)) == r


def test_corpus_report_round_trip():
    r = CorpusReport("m.json", [CorpusRow("p", "enum", True, "bug", "bug", "ok", None, "", 0.1)])
    data = json.loads(to_machine(r))
    assert data["totals"] == {"ok": 1, "mismatch": 0, "skipped": 0}
    assert from_machine(to_machine(r)) == r


def test_unknown_and_missing_fields_rejected():
    data = json.loads(to_machine(_check_report()))
    data["surprise"] = 1
    with pytest.raises(ReportError, match="unknown"):
        from_machine(json.dumps(data))
    del data["surprise"], data["trace"]
    with pytest.raises(ReportError, match="missing"):
        from_machine(json.dumps(data))


def test_report_value_checks():
    with pytest.raises(ReportError):
        from_machine(to_machine(_check_report(verdict="maybe")))
    with pytest.raises(ReportError):
        from_machine(to_machine(_check_report(slicing=SliceStats(True, 3, 5))))
    with pytest.raises(ReportError):
        from_machine('{"schema": "other/1"}')


def test_exit_codes_follow_verdict():
    codes = {v: _check_report(verdict=v).exit_code for v in ("safe", "bug", "timeout", "unknown")}
    assert codes == {"safe": 0, "bug": 1, "timeout": 2, "unknown": 2}
