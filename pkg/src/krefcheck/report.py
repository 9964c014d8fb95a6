"""Reports for ``check`` and ``corpus run``, as text or machine JSON.

The machine form is documented field by field in ``docs/report.md``.
:func:`from_machine` rejects unknown or missing fields, so the schema and
the documentation cannot silently drift apart.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .engine.verdict import Bug, Safe, Timeout, Unknown, Verdict

CHECK_SCHEMA = "krefcheck.check/1"
CORPUS_SCHEMA = "krefcheck.corpus/1"
SLICE_SCHEMA = "krefcheck.slice/1"
VERDICTS = ("safe", "bug", "timeout", "unknown")
ROW_STATUSES = ("ok", "mismatch", "skipped")


class ReportError(ValueError):
    """A machine report does not match the documented schema."""


@dataclass
class SliceStats:
    enabled: bool
    before: int
    after: int
    rules: dict[str, int] = field(default_factory=dict)


@dataclass
class CheckReport:
    file: str
    entry: str
    engine: str
    bound: Optional[int]
    domain: int
    verdict: str
    bounded: bool
    message: Optional[str]
    trace: list[dict] = field(default_factory=list)
    choices: list[int] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    slicing: SliceStats = field(default_factory=lambda: SliceStats(False, 0, 0))
    timings: dict[str, float] = field(default_factory=dict)
    schema: str = CHECK_SCHEMA

    @property
    def exit_code(self) -> int:
        return {"safe": 0, "bug": 1}.get(self.verdict, 2)


@dataclass
class SliceReport:
    file: str
    entry: str
    stats: SliceStats
    provenance: list[dict] = field(default_factory=list)   # function, block, index, rule
    program: str = ""
    schema: str = SLICE_SCHEMA


@dataclass
class CorpusRow:
    program: str
    engine: str
    sliced: bool
    expected: str
    got: str
    status: str
    exhibit: Optional[str]
    detail: str
    seconds: float


@dataclass
class CorpusReport:
    manifest: str
    rows: list[CorpusRow] = field(default_factory=list)
    schema: str = CORPUS_SCHEMA

    def totals(self) -> dict[str, int]:
        out = {s: 0 for s in ROW_STATUSES}
        for r in self.rows:
            out[r.status] += 1
        return out

    @property
    def exit_code(self) -> int:
        return 1 if any(r.status == "mismatch" for r in self.rows) else 0


def verdict_fields(v: Verdict) -> dict:
    """The verdict-derived part of a check report."""
    if isinstance(v, Bug):
        return dict(verdict="bug", bounded=False, message=v.message,
                    trace=[{"instr": s.instr, "digest": s.digest} for s in v.trace],
                    choices=list(v.choices), notes=list(v.notes))
    if isinstance(v, Safe):
        return dict(verdict="safe", bounded=v.bounded, message=None, trace=[],
                    choices=[], notes=list(v.notes))
    if isinstance(v, Timeout):
        return dict(verdict="timeout", bounded=False, message=f"budget {v.budget} exhausted",
                    trace=[], choices=[], notes=list(v.notes))
    if isinstance(v, Unknown):
        return dict(verdict="unknown", bounded=False, message=v.reason, trace=[],
                    choices=[], notes=list(v.notes))
    raise TypeError(f"not a verdict: {v!r}")


# ------------------------------------------------------------ machine form

def to_machine(report) -> str:
    data = asdict(report)
    if isinstance(report, CorpusReport):
        data["totals"] = report.totals()
    return json.dumps(data, indent=2, sort_keys=True)


def _exact(data: dict, cls, extra: tuple = ()) -> None:
    if not isinstance(data, dict):
        raise ReportError(f"{cls.__name__}: expected an object")
    want = {f.name for f in fields(cls)} | set(extra)
    have = set(data)
    if have - want:
        raise ReportError(f"{cls.__name__}: unknown fields {sorted(have - want)}")
    if want - have:
        raise ReportError(f"{cls.__name__}: missing fields {sorted(want - have)}")


def from_machine(text: str):
    """Parse a machine report back into a report object."""
    data = json.loads(text)
    schema = data.get("schema") if isinstance(data, dict) else None
    if schema == CHECK_SCHEMA:
        _exact(data, CheckReport)
        _exact(data["slicing"], SliceStats)
        if data["verdict"] not in VERDICTS:
            raise ReportError(f"verdict {data['verdict']!r} not in {VERDICTS}")
        for step in data["trace"]:
            if set(step) != {"instr", "digest"}:
                raise ReportError(f"trace step fields {sorted(step)}")
        stats = data["slicing"]
        if min(stats["before"], stats["after"]) < 0 or stats["after"] > stats["before"]:
            raise ReportError("slicing counts out of range")
        data["slicing"] = SliceStats(**stats)
        return CheckReport(**data)
    if schema == SLICE_SCHEMA:
        _exact(data, SliceReport)
        _exact(data["stats"], SliceStats)
        for p in data["provenance"]:
            if set(p) != {"function", "block", "index", "rule"}:
                raise ReportError(f"provenance entry fields {sorted(p)}")
        data["stats"] = SliceStats(**data["stats"])
        return SliceReport(**data)
    if schema == CORPUS_SCHEMA:
        _exact(data, CorpusReport, extra=("totals",))
        rows = []
        for r in data["rows"]:
            _exact(r, CorpusRow)
            if r["status"] not in ROW_STATUSES:
                raise ReportError(f"row status {r['status']!r}")
            rows.append(CorpusRow(**r))
        report = CorpusReport(data["manifest"], rows)
        if data["totals"] != report.totals():
            raise ReportError("totals do not match the rows")
        return report
    raise ReportError(f"unknown schema {schema!r}")


# --------------------------------------------------------------- text form

def render_check(report: CheckReport) -> str:
    engine = report.engine + (f" (bound {report.bound})" if report.bound is not None else "")
    lines = [f"{report.file}: {report.verdict.upper()}  [{engine}, entry @{report.entry}]"]
    if report.message:
        lines.append(f"  {report.message}")
    if report.bounded:
        lines.append(f"  warning: safe only within loop bound {report.bound}")
    s = report.slicing
    if s.enabled:
        rules = ", ".join(f"{k}={v}" for k, v in s.rules.items() if v)
        lines.append(f"  slicing: {s.before} -> {s.after} instructions ({rules})")
    else:
        lines.append(f"  slicing: off ({s.before} instructions)")
    if report.trace:
        lines.append(f"  trace ({len(report.trace)} steps, choices {report.choices}):")
        for step in report.trace:
            lines.append(f"    {step['instr']:<40} {step['digest']}")
    for note in report.notes:
        lines.append(f"  note: {note}")
    return "\n".join(lines)


def render_slice_stats(report: SliceReport) -> str:
    s = report.stats
    lines = [f"{report.file}: {s.before} -> {s.after} instructions retained"]
    lines += [f"  {rule:<7}{n}" for rule, n in s.rules.items() if n]
    for p in report.provenance:
        lines.append(f"  @{p['function']}:^{p['block']}#{p['index']}  {p['rule']}")
    return "\n".join(lines)


def render_corpus(report: CorpusReport) -> str:
    head = ("program", "engine", "slice", "expected", "got", "status")
    body = [(r.program, r.engine, "yes" if r.sliced else "no", r.expected, r.got,
             r.status + (f" ({r.exhibit})" if r.exhibit else "")) for r in report.rows]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*head), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row) for row in body]
    t = report.totals()
    lines.append(f"{len(report.rows)} runs: {t['ok']} ok, {t['mismatch']} mismatch, "
                 f"{t['skipped']} skipped")
    for r in report.rows:
        if r.status == "mismatch":
            lines.append(f"MISMATCH {r.program} [{r.engine}]: expected {r.expected}, "
                         f"got {r.got}{' - ' + r.detail if r.detail else ''}")
    return "\n".join(lines)
