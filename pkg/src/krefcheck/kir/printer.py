"""Canonical text form of KIR modules."""
from __future__ import annotations

from .ir import (
    Alloca, AsmOp, Assert, Assume, BinOp, Br, Call, Cast, Cmp,
    CondBr, FieldAddr, Instruction, KirFunction, KirModule, Load, Nondet,
    Phi, RcDec, RcDelta, RcInc, Ret, Store, Switch, TypeDef,
)


def format_instruction(inst: Instruction) -> str:
    body = _format_body(inst)
    if inst.result is not None:
        return f"%{inst.result} = {body}"
    return body


def _format_body(inst: Instruction) -> str:
    if isinstance(inst, Alloca):
        return f"alloca {inst.ty}"
    if isinstance(inst, Load):
        return f"load {inst.ty}, {inst.addr}"
    if isinstance(inst, Store):
        return f"store {inst.ty} {inst.value}, {inst.addr}"
    if isinstance(inst, FieldAddr):
        return f"fieldaddr {inst.agg}, {inst.base}, {'.'.join(inst.path)}"
    if isinstance(inst, Call):
        args = []
        for i, arg in enumerate(inst.args):
            attrs = sorted(inst.attrs_of(i))
            args.append(" ".join(attrs + [str(arg)]))
        return f"call {inst.ty} @{inst.callee}({', '.join(args)})"
    if isinstance(inst, Br):
        return f"br ^{inst.target}"
    if isinstance(inst, CondBr):
        return f"condbr {inst.cond}, ^{inst.then_target}, ^{inst.else_target}"
    if isinstance(inst, Switch):
        cases = ", ".join(f"{c}: ^{t}" for c, t in inst.cases)
        return f"switch {inst.ty} {inst.value}, ^{inst.default} [{cases}]"
    if isinstance(inst, Phi):
        inc = ", ".join(f"[^{b}: {op}]" for b, op in inst.incoming)
        return f"phi {inst.ty} {inc}"
    if isinstance(inst, Ret):
        if inst.value is None:
            return "ret void"
        return f"ret {inst.ty} {inst.value}"
    if isinstance(inst, BinOp):
        return f"{inst.op} {inst.ty} {inst.lhs}, {inst.rhs}"
    if isinstance(inst, Cmp):
        return f"cmp {inst.op} {inst.ty} {inst.lhs}, {inst.rhs}"
    if isinstance(inst, Cast):
        return f"cast {inst.value} to {inst.ty}"
    if isinstance(inst, Nondet):
        return f"nondet {inst.ty}"
    if isinstance(inst, Assert):
        return f"assert {inst.cond}"
    if isinstance(inst, Assume):
        return f"assume {inst.cond}"
    if isinstance(inst, RcInc):
        return f"rc_inc {inst.refclass}, {inst.obj}"
    if isinstance(inst, RcDec):
        return f"rc_dec {inst.refclass}, {inst.obj}"
    if isinstance(inst, RcDelta):
        return f"rc_delta {inst.refclass}"
    if isinstance(inst, AsmOp):
        args = ", ".join(str(a) for a in inst.args)
        return f'asm "{inst.mnemonic}" {inst.ty} ({args})'
    raise TypeError(f"unknown instruction {inst!r}")


def format_typedef(td: TypeDef) -> str:
    fields = ", ".join(f"{n}: {t}" for n, t in td.fields)
    text = f"type {td.name} {{ {fields} }}" if fields else f"type {td.name} {{ }}"
    if td.kref_path is not None:
        text += " kref " + ".".join(td.kref_path)
    return text


def format_function(fn: KirFunction) -> str:
    params = []
    for p in fn.params:
        attrs = "".join(f" {a}" for a in sorted(p.attrs))
        params.append(f"%{p.name}: {p.ty}{attrs}")
    lines = [f"fn @{fn.name}({', '.join(params)}) -> {fn.ret_ty} {{"]
    for blk in fn.blocks:
        lines.append(f"^{blk.label}:")
        lines.extend("  " + format_instruction(i) for i in blk.instrs)
    lines.append("}")
    return "\n".join(lines)


def print_module(module: KirModule) -> str:
    """Render ``module`` in the canonical textual form."""
    sections: list[list[str]] = []
    if module.types:
        sections.append([format_typedef(t) for t in module.types])
    if module.refclasses:
        sections.append([f"refclass {c}" for c in module.refclasses])
    if module.globals:
        sections.append([f"global @{g.name} : {g.ty}" for g in module.globals])
    if module.externs:
        sections.append([
            f"extern @{e.name}({', '.join(str(t) for t in e.param_tys)}) -> {e.ret_ty}"
            for e in module.externs])
    for fn in module.functions:
        sections.append([format_function(fn)])
    if module.entry is not None:
        line = f"entry @{module.entry.init_function}"
        if module.entry.input_recipe:
            line += " (" + ", ".join(module.entry.input_recipe) + ")"
        sections.append([line])
    return "\n\n".join("\n".join(s) for s in sections) + "\n"
