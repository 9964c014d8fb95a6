"""Running an external Horn solver on an SMT-LIB2 script."""
from __future__ import annotations

import os
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass
from typing import Optional

SOLVER_ENV = "KREFCHECK_SOLVER_CMD"


@dataclass(frozen=True)
class SolverResult:
    status: str   # sat | unsat | timeout | solver-error
    output: str


def resolve_solver_cmd(explicit: Optional[str] = None) -> Optional[str]:
    """Command template with a ``{file}`` placeholder, or None.

    Order: the explicit argument, ``$KREFCHECK_SOLVER_CMD``, then ``z3`` if
    it is on PATH.
    """
    if explicit:
        return explicit
    env = os.environ.get(SOLVER_ENV)
    if env:
        return env
    if shutil.which("z3"):
        return "z3 {file}"
    return None


def run_external_solver(script: str, cmd_template: str, timeout: float = 300.0) -> SolverResult:
    with tempfile.NamedTemporaryFile("w", suffix=".smt2", delete=False) as fh:
        fh.write(script)
        path = fh.name
    try:
        if "{file}" in cmd_template:
            argv = [a.replace("{file}", path) for a in shlex.split(cmd_template)]
        else:
            argv = shlex.split(cmd_template) + [path]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        except subprocess.TimeoutExpired:
            return SolverResult("timeout", "")
        except OSError as err:
            return SolverResult("solver-error", str(err))
        out = proc.stdout + proc.stderr
        m = re.search(r"^\s*(sat|unsat|unknown|timeout)\s*$", proc.stdout, re.M)
        if m is None:
            return SolverResult("solver-error", out)
        word = m.group(1)
        if word in ("sat", "unsat"):
            return SolverResult(word, out)
        if word == "timeout":
            return SolverResult("timeout", out)
        return SolverResult("solver-error", out)
    finally:
        os.unlink(path)
