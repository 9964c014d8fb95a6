import re
from pathlib import Path

import pytest

from krefcheck.kir import parse_module, print_module, validate
from krefcheck.pipeline import check, load
from krefcheck.refmodel import default_registry

DOCS = Path(__file__).resolve().parent.parent / "docs"
BLOCKS = re.findall(r"```kir\n(.*?)```", (DOCS / "kir.md").read_text(), re.S)


def test_every_instruction_kind_has_an_example():
    text = "\n".join(BLOCKS)
    for op in ("alloca", "load", "store", "fieldaddr", "call", "br", "condbr", "switch",
               "phi", "ret", "add", "sub", "mul", "and", "or", "xor", "cmp", "cast",
               "nondet", "assume", "assert", "rc_inc", "rc_dec", "rc_delta", "asm"):
        assert re.search(rf"\b{op}\b", text), op


@pytest.mark.parametrize("text", BLOCKS)
def test_example_parses_and_validates(text):
    m = parse_module(text)
    assert validate(m, default_registry().names()) == []
    assert parse_module(print_module(m)) == m


def test_complete_driver_example_is_a_bug():
    verdict, _ = check(load(BLOCKS[-1]))
    assert verdict.status == "bug"


def _documented_fields():
    text = (DOCS / "report.md").read_text()
    return set(re.findall(r"^\| `(\w+)` \|", text, re.M))


def test_report_doc_lists_every_machine_field():
    from dataclasses import fields

    from krefcheck import report as rp
    documented = _documented_fields()
    for cls in (rp.CheckReport, rp.SliceStats, rp.SliceReport, rp.CorpusReport, rp.CorpusRow):
        missing = {f.name for f in fields(cls)} - documented
        assert not missing, (cls.__name__, missing)
    assert {"totals", "instr", "digest", "function", "block", "index", "rule"} <= documented
