"""Well-formedness checks for KIR modules.

Violations are returned as data; nothing here raises on a bad module.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .cfg import cfg_predecessors, dominators, reverse_postorder
from .ir import (
    BUILTIN_AGGREGATES, KREF_TYPE, AddrTy, AggRef, Alloca, AsmOp, Assert,
    Assume, BinOp, Call, Cast, Cmp, CondBr, Const, FieldAddr, Global, IntTy,
    KirFunction, KirModule, KirType, Load, Nondet, Operand, Phi, RcDec,
    RcDelta, RcInc, Ret, Store, Switch, TypeDef, Value, VoidTy,
    field_path_type, operand_type, successors,
)


@dataclass(frozen=True)
class Violation:
    message: str
    function: Optional[str] = None
    block: Optional[str] = None
    index: Optional[int] = None

    def __str__(self) -> str:
        where = ""
        if self.function is not None:
            where = f"@{self.function}"
            if self.block is not None:
                where += f" ^{self.block}"
                if self.index is not None:
                    where += f" #{self.index}"
            where += ": "
        return where + self.message


def _type_refs(ty: KirType) -> Iterable[str]:
    if isinstance(ty, AggRef):
        yield ty.name
    elif isinstance(ty, AddrTy) and ty.pointee is not None:
        yield from _type_refs(ty.pointee)


def _check_types(module: KirModule, out: list[Violation]) -> None:
    typedefs = module.typedefs()
    seen = set()
    for td in module.types:
        if td.name in seen or td.name in BUILTIN_AGGREGATES:
            out.append(Violation(f"duplicate aggregate type {td.name}"))
        seen.add(td.name)
        names = [n for n, _ in td.fields]
        for dup in {n for n in names if names.count(n) > 1}:
            out.append(Violation(f"aggregate {td.name} repeats field {dup}"))
        for _, fty in td.fields:
            if isinstance(fty, VoidTy):
                out.append(Violation(f"aggregate {td.name} has a void field"))
            for ref in _type_refs(fty):
                if ref not in typedefs:
                    out.append(Violation(f"aggregate {td.name} references unknown type {ref}"))
        if td.kref_path is not None:
            fty = field_path_type(typedefs, td.name, td.kref_path)
            if fty != AggRef(KREF_TYPE):
                out.append(Violation(
                    f"kref path {'.'.join(td.kref_path)} of {td.name} does not end in a {KREF_TYPE} field"))
    # aggregates embedded by value must not contain themselves
    for td in module.types:
        if _embeds_by_value(td.name, td.name, typedefs, set()):
            out.append(Violation(f"aggregate {td.name} recursively embeds itself"))


def _embeds_by_value(target: str, cur: str, typedefs: dict[str, TypeDef], seen: set) -> bool:
    td = typedefs.get(cur)
    if td is None or cur in seen:
        return False
    seen.add(cur)
    for _, fty in td.fields:
        if isinstance(fty, AggRef):
            if fty.name == target or _embeds_by_value(target, fty.name, typedefs, seen):
                return True
    return False


def _compatible(expected: KirType, actual: Optional[KirType]) -> bool:
    if actual is None:
        return True
    if isinstance(expected, AddrTy):
        return isinstance(actual, AddrTy)
    return expected == actual


class _FunctionChecker:
    def __init__(self, module: KirModule, fn: KirFunction, api_names: frozenset,
                 out: list[Violation]):
        self.module = module
        self.fn = fn
        self.api_names = api_names
        self.out = out
        self.types = fn.value_types()

    def report(self, msg, block=None, index=None):
        self.out.append(Violation(msg, self.fn.name, block, index))

    def check(self) -> None:
        fn = self.fn
        labels = [b.label for b in fn.blocks]
        for dup in {l for l in labels if labels.count(l) > 1}:
            self.report(f"duplicate block label ^{dup}")
        label_set = set(labels)
        # SSA: single assignment
        defined: dict[str, tuple[str, int]] = {}
        for p in fn.params:
            if p.name in defined:
                self.report(f"parameter %{p.name} declared twice")
            defined[p.name] = ("", -1)
        for loc, inst in fn.instructions():
            if inst.result is not None:
                if inst.result in defined:
                    self.report(f"%{inst.result} assigned more than once", *loc)
                defined[inst.result] = loc
        # block structure
        for blk in fn.blocks:
            if not blk.instrs or not blk.instrs[-1].is_terminator():
                self.report("block does not end in a terminator", blk.label)
            for i, inst in enumerate(blk.instrs[:-1]):
                if inst.is_terminator():
                    self.report("terminator before the end of the block", blk.label, i)
            for tgt in successors(blk.instrs[-1]) if blk.instrs else ():
                if tgt not in label_set:
                    self.report(f"branch to unknown block ^{tgt}", blk.label, len(blk.instrs) - 1)
        preds = cfg_predecessors(fn)
        if preds.get(fn.entry.label):
            self.report("entry block has predecessors", fn.entry.label)
        for blk in fn.blocks:
            in_phis = True
            for i, inst in enumerate(blk.instrs):
                if isinstance(inst, Phi):
                    if not in_phis:
                        self.report("phi after a non-phi instruction", blk.label, i)
                    srcs = [b for b, _ in inst.incoming]
                    if sorted(srcs) != sorted(preds.get(blk.label, set())):
                        self.report("phi incoming blocks do not match predecessors", blk.label, i)
                else:
                    in_phis = False
        self._check_dominance(defined)
        for (lbl, i), inst in fn.instructions():
            self._check_instruction(inst, lbl, i)

    def _check_dominance(self, defined) -> None:
        fn = self.fn
        dom = dominators(fn)
        reachable = set(reverse_postorder(fn))
        globals_ = {g.name for g in self.module.globals}
        funcs = {f.name for f in self.module.functions} | {e.name for e in self.module.externs}
        for (lbl, i), inst in fn.instructions():
            if lbl not in reachable:
                continue
            if isinstance(inst, Phi):
                pairs = [(op, src) for src, op in inst.incoming]
            else:
                pairs = [(op, None) for op in inst.operands()]
            for op, src in pairs:
                if isinstance(op, Global):
                    if op.name not in globals_ and op.name not in funcs:
                        self.report(f"unknown global @{op.name}", lbl, i)
                    continue
                if not isinstance(op, Value):
                    continue
                if op.name not in defined:
                    self.report(f"use of undefined value %{op.name}", lbl, i)
                    continue
                dlbl, di = defined[op.name]
                if dlbl == "":
                    continue
                if src is not None:
                    # must dominate the end of the incoming block
                    if src in dom and dlbl not in dom[src]:
                        self.report(f"%{op.name} does not dominate incoming edge from ^{src}", lbl, i)
                elif dlbl == lbl:
                    if di >= i:
                        self.report(f"%{op.name} used before its definition", lbl, i)
                elif dlbl not in dom.get(lbl, set()):
                    self.report(f"%{op.name} does not dominate its use", lbl, i)

    def _t(self, op: Operand) -> Optional[KirType]:
        return operand_type(op, self.types, self.module)

    def _expect_int(self, op, lbl, i, what, width=None):
        ty = self._t(op)
        if isinstance(op, Const):
            return
        if not isinstance(ty, IntTy) or (width is not None and ty.width != width):
            self.report(f"{what} must be {'i%d' % width if width else 'an integer'}, got {ty}", lbl, i)

    def _expect_ptr(self, op, lbl, i, what):
        if isinstance(op, Const):
            self.report(f"{what} must be an address, got literal {op}", lbl, i)
            return
        if not isinstance(self._t(op), AddrTy):
            self.report(f"{what} must be an address, got {self._t(op)}", lbl, i)

    def _check_type_ref(self, ty: KirType, lbl, i):
        typedefs = self.module.typedefs()
        for ref in _type_refs(ty):
            if ref not in typedefs:
                self.report(f"unknown type {ref}", lbl, i)

    def _check_instruction(self, inst, lbl, i) -> None:
        m = self.module
        classes = set(m.refclasses)
        if isinstance(inst, (RcInc, RcDec, RcDelta)) and inst.refclass not in classes:
            self.report(f"undeclared refclass {inst.refclass}", lbl, i)
        if isinstance(inst, (RcInc, RcDec)):
            self._expect_ptr(inst.obj, lbl, i, "refcounted object")
        if isinstance(inst, Alloca):
            self._check_type_ref(inst.ty, lbl, i)
            if isinstance(inst.ty, VoidTy):
                self.report("alloca of void", lbl, i)
        elif isinstance(inst, Load):
            self._check_type_ref(inst.ty, lbl, i)
            self._expect_ptr(inst.addr, lbl, i, "load address")
            if isinstance(inst.ty, (AggRef, VoidTy)):
                self.report("load of a non-scalar type", lbl, i)
        elif isinstance(inst, Store):
            self._expect_ptr(inst.addr, lbl, i, "store address")
            if isinstance(inst.ty, (AggRef, VoidTy)):
                self.report("store of a non-scalar type", lbl, i)
            if not _compatible(inst.ty, self._t(inst.value)):
                self.report(f"stored value is not {inst.ty}", lbl, i)
        elif isinstance(inst, FieldAddr):
            self._expect_ptr(inst.base, lbl, i, "fieldaddr base")
            if field_path_type(m.typedefs(), inst.agg, inst.path) is None:
                self.report(f"no field path {'.'.join(inst.path)} in {inst.agg}", lbl, i)
        elif isinstance(inst, Call):
            self._check_call(inst, lbl, i)
        elif isinstance(inst, CondBr):
            self._expect_int(inst.cond, lbl, i, "branch condition", 1)
        elif isinstance(inst, (Assert, Assume)):
            self._expect_int(inst.cond, lbl, i, "condition", 1)
        elif isinstance(inst, Switch):
            self._expect_int(inst.value, lbl, i, "switch operand")
            vals = [c for c, _ in inst.cases]
            if len(set(vals)) != len(vals):
                self.report("duplicate switch case", lbl, i)
        elif isinstance(inst, Phi):
            for _, op in inst.incoming:
                if not _compatible(inst.ty, self._t(op)):
                    self.report(f"phi operand {op} is not {inst.ty}", lbl, i)
        elif isinstance(inst, Ret):
            want = self.fn.ret_ty
            if isinstance(want, VoidTy) != (inst.value is None):
                self.report(f"return does not match function type {want}", lbl, i)
            elif inst.value is not None and not _compatible(want, self._t(inst.value)):
                self.report(f"returned value is not {want}", lbl, i)
        elif isinstance(inst, BinOp):
            if not isinstance(inst.ty, IntTy):
                self.report("arithmetic on a non-integer type", lbl, i)
            for op in (inst.lhs, inst.rhs):
                if not _compatible(inst.ty, self._t(op)):
                    self.report(f"operand {op} is not {inst.ty}", lbl, i)
        elif isinstance(inst, Cmp):
            for op in (inst.lhs, inst.rhs):
                if not _compatible(inst.ty, self._t(op)):
                    self.report(f"operand {op} is not {inst.ty}", lbl, i)
            if isinstance(inst.ty, AddrTy) and inst.op not in ("eq", "ne"):
                self.report("ordered comparison of addresses", lbl, i)
        elif isinstance(inst, Cast):
            src = self._t(inst.value)
            if src is not None and isinstance(src, AddrTy) != isinstance(inst.ty, AddrTy):
                self.report(f"cast between {src} and {inst.ty} is not supported", lbl, i)
            self._check_type_ref(inst.ty, lbl, i)
        elif isinstance(inst, Nondet):
            if isinstance(inst.ty, (AggRef, VoidTy)):
                self.report("nondet of a non-scalar type", lbl, i)
            self._check_type_ref(inst.ty, lbl, i)

    def _check_call(self, inst: Call, lbl, i) -> None:
        m = self.module
        callee = m.function(inst.callee)
        if callee is not None:
            ptys = [p.ty for p in callee.params]
            ret = callee.ret_ty
        else:
            ext = m.extern(inst.callee)
            if ext is None:
                if inst.callee not in self.api_names:
                    self.report(f"call to unknown function @{inst.callee}", lbl, i)
                return
            ptys, ret = list(ext.param_tys), ext.ret_ty
        if len(ptys) != len(inst.args):
            self.report(f"@{inst.callee} expects {len(ptys)} arguments, got {len(inst.args)}", lbl, i)
            return
        for k, (pty, arg) in enumerate(zip(ptys, inst.args)):
            if isinstance(arg, Const) and isinstance(pty, IntTy):
                continue
            if not _compatible(pty, self._t(arg)) or (isinstance(arg, Const) and not isinstance(pty, IntTy)):
                self.report(f"argument {k} of @{inst.callee} is not {pty}", lbl, i)
        if not _compatible(ret, inst.ty) and not (isinstance(ret, AddrTy) and isinstance(inst.ty, AddrTy)):
            self.report(f"@{inst.callee} returns {ret}, call site expects {inst.ty}", lbl, i)


def validate(module: KirModule, api_names: Iterable[str] = ()) -> list[Violation]:
    """Return every well-formedness violation of ``module`` (empty if valid).

    ``api_names`` lists callees that resolve through a model registry even
    without an ``extern`` declaration.
    """
    out: list[Violation] = []
    _check_types(module, out)
    for dup in {c for c in module.refclasses if module.refclasses.count(c) > 1}:
        out.append(Violation(f"refclass {dup} declared twice"))
    names = [f.name for f in module.functions] + [e.name for e in module.externs]
    for dup in {n for n in names if names.count(n) > 1}:
        out.append(Violation(f"symbol @{dup} defined twice"))
    gnames = [g.name for g in module.globals]
    for dup in {n for n in gnames if gnames.count(n) > 1}:
        out.append(Violation(f"global @{dup} defined twice"))
    typedefs = module.typedefs()
    for g in module.globals:
        for ref in _type_refs(g.ty):
            if ref not in typedefs:
                out.append(Violation(f"global @{g.name} has unknown type {ref}"))
    for ext in module.externs:
        for ty in ext.param_tys + (ext.ret_ty,):
            for ref in _type_refs(ty):
                if ref not in typedefs:
                    out.append(Violation(f"extern @{ext.name} uses unknown type {ref}"))
    api = frozenset(api_names)
    for fn in module.functions:
        for p in fn.params:
            for ref in _type_refs(p.ty):
                if ref not in typedefs:
                    out.append(Violation(f"parameter %{p.name} has unknown type {ref}", fn.name))
        _FunctionChecker(module, fn, api, out).check()
    if module.entry is not None:
        init = module.function(module.entry.init_function)
        if init is None:
            out.append(Violation(f"entry names unknown function @{module.entry.init_function}"))
        elif module.entry.input_recipe and len(module.entry.input_recipe) != len(init.params):
            out.append(Violation("entry recipe length differs from the parameter count",
                                 init.name))
    return out
