"""The bundled ground-truth corpus and its runner.

``manifest.json`` lists each program with the verdict the tool is
expected to produce per engine. Expectations may deliberately differ from
the ground truth (``truth``); those rows carry an ``exhibit`` label naming
the phenomenon they document.
"""
from __future__ import annotations

import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

from ..engine.verdict import Unknown
from ..pipeline import Options, StageError, check, load
from ..report import VERDICTS, CorpusReport, CorpusRow

_ENGINE_RE = re.compile(r"^(enum|chc|bmc(\d+))$")
_ROW_KEYS = {"name", "file", "entry", "truth", "expect", "expect_unsliced",
             "provenance", "exhibit", "note"}
NO_SOLVER = "no Horn solver configured"


class ManifestError(Exception):
    """The manifest is malformed or names a missing or broken file."""


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    path: Path
    entry: str
    truth: str
    expect: dict
    expect_unsliced: dict
    provenance: str = ""
    exhibit: Optional[str] = None
    note: str = ""

    def expected(self, engine: str, sliced: bool = True) -> str:
        """Most specific expectation: exact key, then family, then ``*``."""
        table = self.expect if sliced else (self.expect_unsliced or self.expect)
        family = "bmc" if engine.startswith("bmc") else engine
        for key in (engine, family, "*"):
            if key in table:
                return table[key]
        raise ManifestError(f"{self.name}: no expectation for engine {engine}")


@dataclass
class Manifest:
    path: Path
    entries: list[ManifestEntry] = field(default_factory=list)


def default_manifest_path() -> Path:
    return Path(str(resources.files(__package__).joinpath("manifest.json")))


def parse_engine(spec: str) -> tuple[str, Optional[int]]:
    """``enum`` | ``chc`` | ``bmc<k>`` into (engine, bound)."""
    m = _ENGINE_RE.match(spec.strip())
    if m is None:
        raise ValueError(f"unknown engine spec {spec!r} (use enum, chc or bmc<k>)")
    if m.group(2):
        bound = int(m.group(2))
        if bound < 1:
            raise ValueError("bmc bound must be at least 1")
        return "bmc", bound
    return m.group(1), None


def _verdict_table(row: dict, key: str, where: str) -> dict:
    table = row.get(key, {})
    if not isinstance(table, dict):
        raise ManifestError(f"{where}: {key} must be an object")
    for eng, verdict in table.items():
        if eng != "*" and eng != "bmc":
            try:
                parse_engine(eng)
            except ValueError as err:
                raise ManifestError(f"{where}: {err}") from None
        if verdict not in VERDICTS:
            raise ManifestError(f"{where}: verdict {verdict!r} not in {VERDICTS}")
    return dict(table)


def load_manifest(path=None) -> Manifest:
    path = Path(path) if path is not None else default_manifest_path()
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest {path} not found") from None
    except json.JSONDecodeError as err:
        raise ManifestError(f"{path}: {err}") from None
    if not isinstance(data, dict) or not isinstance(data.get("programs"), list):
        raise ManifestError(f"{path}: expected an object with a 'programs' list")
    entries, names = [], set()
    for i, row in enumerate(data["programs"]):
        where = f"{path.name} row {i + 1}"
        if not isinstance(row, dict):
            raise ManifestError(f"{where}: expected an object")
        unknown = set(row) - _ROW_KEYS
        if unknown:
            raise ManifestError(f"{where}: unknown keys {sorted(unknown)}")
        for key in ("name", "file", "entry", "truth", "expect"):
            if key not in row:
                raise ManifestError(f"{where}: missing {key!r}")
        where = f"{path.name} row {i + 1} ({row['name']})"
        if row["name"] in names:
            raise ManifestError(f"{where}: duplicate name")
        names.add(row["name"])
        if row["truth"] not in ("safe", "bug"):
            raise ManifestError(f"{where}: truth must be safe or bug")
        file = (path.parent / row["file"]).resolve()
        if not file.is_file():
            raise ManifestError(f"{where}: file {row['file']} not found")
        try:
            module = load(file.read_text(), str(file))
        except StageError as err:
            raise ManifestError(f"{where}: {err}") from None
        if module.function(row["entry"]) is None:
            raise ManifestError(f"{where}: no function @{row['entry']}")
        entries.append(ManifestEntry(
            row["name"], file, row["entry"], row["truth"],
            _verdict_table(row, "expect", where),
            _verdict_table(row, "expect_unsliced", where),
            row.get("provenance", ""), row.get("exhibit"), row.get("note", "")))
    return Manifest(path, entries)


def _run_one(item: ManifestEntry, engine: str, sliced: bool, base: Options) -> CorpusRow:
    kind, bound = parse_engine(engine)
    opts = replace(base, engine=kind, bound=bound or base.bound, slice=sliced)
    expected = item.expected(engine, sliced)
    t0 = time.perf_counter()
    try:
        module = load(item.path.read_text(), str(item.path))
        verdict, _ = check(module, item.entry, opts)
        got = verdict.status
        detail = getattr(verdict, "message", None) or getattr(verdict, "reason", "")
    except StageError as err:
        verdict, got, detail = None, "error", str(err)
    seconds = time.perf_counter() - t0
    if isinstance(verdict, Unknown) and verdict.reason == NO_SOLVER:
        status = "skipped"
    else:
        status = "ok" if got == expected else "mismatch"
    return CorpusRow(item.name, engine, sliced, expected, got, status,
                     item.exhibit if got == expected and got != item.truth else None,
                     detail, round(seconds, 4))


def run_corpus(manifest: Manifest, engines=("enum",), sliced: bool = True,
               options: Optional[Options] = None, jobs: int = 1) -> CorpusReport:
    """Run every (program, engine) pair; rows come back in manifest order."""
    base = options or Options()
    for eng in engines:
        parse_engine(eng)
    tasks = [(item, eng) for item in manifest.entries for eng in engines]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda t: _run_one(t[0], t[1], sliced, base), tasks))
    else:
        rows = [_run_one(item, eng, sliced, base) for item, eng in tasks]
    return CorpusReport(str(manifest.path), rows)


def corpus_file(name: str) -> Path:
    """Path of a bundled program, e.g. ``corpus_file("tpm_leak.kir")``."""
    return Path(str(resources.files(__package__).joinpath(name)))


__all__ = ["Manifest", "ManifestEntry", "ManifestError", "corpus_file",
           "default_manifest_path", "load_manifest", "parse_engine", "run_corpus"]
