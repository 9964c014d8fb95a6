"""Data model for KIR, a small SSA IR for driver-style programs.

Every node is a frozen dataclass, so modules are immutable values that
compare structurally. Transforms build new modules instead of mutating.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class IntTy:
    width: int = 64

    def __str__(self) -> str:
        return f"i{self.width}"


@dataclass(frozen=True)
class AddrTy:
    pointee: Optional["KirType"] = None  # None = opaque

    def __str__(self) -> str:
        return "ptr" if self.pointee is None else f"ptr<{self.pointee}>"


@dataclass(frozen=True)
class AggRef:
    """Reference to an aggregate declared with ``type``."""
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class VoidTy:
    def __str__(self) -> str:
        return "void"


KirType = Union[IntTy, AddrTy, AggRef, VoidTy]

I1 = IntTy(1)
I32 = IntTy(32)
I64 = IntTy(64)
PTR = AddrTy()
VOID = VoidTy()

# The distinguished counter aggregate every module knows about.
KREF_TYPE = "kref_t"
# Pointee name of the opaque device-link token (see refmodel).
TOKEN_TYPE = "token"
BUILTIN_AGGREGATES = (KREF_TYPE, TOKEN_TYPE)

BUILTIN_REFCLASSES = ("device", "of_node", "fwnode")


def is_ptr(ty: KirType) -> bool:
    return isinstance(ty, AddrTy)


def is_int(ty: KirType) -> bool:
    return isinstance(ty, IntTy)


def is_token_ptr(ty: KirType) -> bool:
    return isinstance(ty, AddrTy) and ty.pointee == AggRef(TOKEN_TYPE)


@dataclass(frozen=True)
class TypeDef:
    name: str
    fields: tuple[tuple[str, KirType], ...]
    kref_path: Optional[tuple[str, ...]] = None

    def field_type(self, name: str) -> Optional[KirType]:
        for fname, fty in self.fields:
            if fname == name:
                return fty
        return None


KREF_TYPEDEF = TypeDef(KREF_TYPE, (("count", I32),))
TOKEN_TYPEDEF = TypeDef(TOKEN_TYPE, ())


# ------------------------------------------------------------- operands

@dataclass(frozen=True)
class Value:
    """An SSA value: instruction result or function parameter (``%x``)."""
    name: str

    def __str__(self) -> str:
        return f"%{self.name}"


@dataclass(frozen=True)
class Global:
    """A global variable or function symbol (``@x``)."""
    name: str

    def __str__(self) -> str:
        return f"@{self.name}"


@dataclass(frozen=True)
class Const:
    value: int

    def __str__(self) -> str:
        return str(self.value)


@dataclass(frozen=True)
class Null:
    def __str__(self) -> str:
        return "null"


Operand = Union[Value, Global, Const, Null]
NULL = Null()


# --------------------------------------------------------- instructions

BINOPS = ("add", "sub", "mul", "and", "or", "xor")
CMPOPS = ("eq", "ne", "slt", "sle", "sgt", "sge")
WRITEONLY = "writeonly"


@dataclass(frozen=True)
class Instruction:
    result: Optional[str] = None

    def operands(self) -> tuple[Operand, ...]:
        return ()

    def result_type(self) -> Optional[KirType]:
        return None

    def with_operands(self, ops: tuple[Operand, ...]) -> "Instruction":
        return self

    @property
    def opcode(self) -> str:
        return _OPCODES[type(self)]

    def is_terminator(self) -> bool:
        return isinstance(self, (Br, CondBr, Switch, Ret))


@dataclass(frozen=True)
class Alloca(Instruction):
    ty: KirType = I64

    def result_type(self):
        return AddrTy(self.ty)


@dataclass(frozen=True)
class Load(Instruction):
    ty: KirType = I64
    addr: Operand = NULL

    def operands(self):
        return (self.addr,)

    def result_type(self):
        return self.ty

    def with_operands(self, ops):
        return replace(self, addr=ops[0])


@dataclass(frozen=True)
class Store(Instruction):
    ty: KirType = I64
    value: Operand = NULL
    addr: Operand = NULL

    def operands(self):
        return (self.value, self.addr)

    def with_operands(self, ops):
        return replace(self, value=ops[0], addr=ops[1])


@dataclass(frozen=True)
class FieldAddr(Instruction):
    agg: str = ""
    base: Operand = NULL
    path: tuple[str, ...] = ()
    # Type of the addressed field, filled in by the parser from the typedefs.
    field_ty: KirType = I64

    def operands(self):
        return (self.base,)

    def result_type(self):
        return AddrTy(self.field_ty)

    def with_operands(self, ops):
        return replace(self, base=ops[0])


@dataclass(frozen=True)
class Call(Instruction):
    ty: KirType = VOID
    callee: str = ""
    args: tuple[Operand, ...] = ()
    arg_attrs: tuple[frozenset, ...] = ()

    def operands(self):
        return self.args

    def result_type(self):
        return None if isinstance(self.ty, VoidTy) else self.ty

    def with_operands(self, ops):
        return replace(self, args=tuple(ops))

    def attrs_of(self, i: int) -> frozenset:
        return self.arg_attrs[i] if i < len(self.arg_attrs) else frozenset()


@dataclass(frozen=True)
class Br(Instruction):
    target: str = ""


@dataclass(frozen=True)
class CondBr(Instruction):
    cond: Operand = NULL
    then_target: str = ""
    else_target: str = ""

    def operands(self):
        return (self.cond,)

    def with_operands(self, ops):
        return replace(self, cond=ops[0])


@dataclass(frozen=True)
class Switch(Instruction):
    ty: KirType = I64
    value: Operand = NULL
    default: str = ""
    cases: tuple[tuple[int, str], ...] = ()

    def operands(self):
        return (self.value,)

    def with_operands(self, ops):
        return replace(self, value=ops[0])


@dataclass(frozen=True)
class Phi(Instruction):
    ty: KirType = I64
    incoming: tuple[tuple[str, Operand], ...] = ()

    def operands(self):
        return tuple(op for _, op in self.incoming)

    def result_type(self):
        return self.ty

    def with_operands(self, ops):
        return replace(self, incoming=tuple(
            (blk, op) for (blk, _), op in zip(self.incoming, ops)))


@dataclass(frozen=True)
class Ret(Instruction):
    ty: KirType = VOID
    value: Optional[Operand] = None

    def operands(self):
        return () if self.value is None else (self.value,)

    def with_operands(self, ops):
        return replace(self, value=ops[0]) if ops else self


@dataclass(frozen=True)
class BinOp(Instruction):
    op: str = "add"
    ty: KirType = I64
    lhs: Operand = NULL
    rhs: Operand = NULL

    def operands(self):
        return (self.lhs, self.rhs)

    def result_type(self):
        return self.ty

    def with_operands(self, ops):
        return replace(self, lhs=ops[0], rhs=ops[1])


@dataclass(frozen=True)
class Cmp(Instruction):
    op: str = "eq"
    ty: KirType = I64
    lhs: Operand = NULL
    rhs: Operand = NULL

    def operands(self):
        return (self.lhs, self.rhs)

    def result_type(self):
        return I1

    def with_operands(self, ops):
        return replace(self, lhs=ops[0], rhs=ops[1])


@dataclass(frozen=True)
class Cast(Instruction):
    value: Operand = NULL
    ty: KirType = I64

    def operands(self):
        return (self.value,)

    def result_type(self):
        return self.ty

    def with_operands(self, ops):
        return replace(self, value=ops[0])


@dataclass(frozen=True)
class Nondet(Instruction):
    ty: KirType = I64

    def result_type(self):
        return self.ty


@dataclass(frozen=True)
class Assert(Instruction):
    cond: Operand = NULL

    def operands(self):
        return (self.cond,)

    def with_operands(self, ops):
        return replace(self, cond=ops[0])


@dataclass(frozen=True)
class Assume(Instruction):
    cond: Operand = NULL

    def operands(self):
        return (self.cond,)

    def with_operands(self, ops):
        return replace(self, cond=ops[0])


@dataclass(frozen=True)
class RcInc(Instruction):
    refclass: str = "device"
    obj: Operand = NULL

    def operands(self):
        return (self.obj,)

    def with_operands(self, ops):
        return replace(self, obj=ops[0])


@dataclass(frozen=True)
class RcDec(Instruction):
    refclass: str = "device"
    obj: Operand = NULL

    def operands(self):
        return (self.obj,)

    def with_operands(self, ops):
        return replace(self, obj=ops[0])


@dataclass(frozen=True)
class RcDelta(Instruction):
    """Reads the aggregate refcount delta of one class (harness use)."""
    refclass: str = "device"

    def result_type(self):
        return I64


@dataclass(frozen=True)
class AsmOp(Instruction):
    mnemonic: str = ""
    ty: KirType = VOID
    args: tuple[Operand, ...] = ()

    def operands(self):
        return self.args

    def result_type(self):
        return None if isinstance(self.ty, VoidTy) else self.ty

    def with_operands(self, ops):
        return replace(self, args=tuple(ops))


_OPCODES = {
    Alloca: "alloca", Load: "load", Store: "store", FieldAddr: "fieldaddr",
    Call: "call", Br: "br", CondBr: "condbr", Switch: "switch", Phi: "phi",
    Ret: "ret", BinOp: "binop", Cmp: "cmp", Cast: "cast", Nondet: "nondet",
    Assert: "assert", Assume: "assume", RcInc: "rc_inc", RcDec: "rc_dec",
    RcDelta: "rc_delta", AsmOp: "asm",
}

RC_OPS = (RcInc, RcDec)


def successors(term: Instruction) -> tuple[str, ...]:
    if isinstance(term, Br):
        return (term.target,)
    if isinstance(term, CondBr):
        return (term.then_target, term.else_target)
    if isinstance(term, Switch):
        seen = [term.default]
        for _, tgt in term.cases:
            if tgt not in seen:
                seen.append(tgt)
        return tuple(seen)
    return ()


def retarget(term: Instruction, old: str, new: str) -> Instruction:
    """Rename a successor label inside a terminator."""
    sub = (lambda lbl: new if lbl == old else lbl)
    if isinstance(term, Br):
        return replace(term, target=sub(term.target))
    if isinstance(term, CondBr):
        return replace(term, then_target=sub(term.then_target),
                       else_target=sub(term.else_target))
    if isinstance(term, Switch):
        return replace(term, default=sub(term.default),
                       cases=tuple((c, sub(t)) for c, t in term.cases))
    return term


# ----------------------------------------------------- functions/modules

@dataclass(frozen=True)
class Param:
    name: str
    ty: KirType
    attrs: frozenset = frozenset()


@dataclass(frozen=True)
class Block:
    label: str
    instrs: tuple[Instruction, ...]

    @property
    def terminator(self) -> Optional[Instruction]:
        if self.instrs and self.instrs[-1].is_terminator():
            return self.instrs[-1]
        return None

    def phis(self) -> Iterator[Phi]:
        for inst in self.instrs:
            if not isinstance(inst, Phi):
                break
            yield inst


# (block label, index within block); the instruction id within a function.
Loc = tuple[str, int]


@dataclass(frozen=True)
class KirFunction:
    name: str
    params: tuple[Param, ...]
    ret_ty: KirType
    blocks: tuple[Block, ...]

    @property
    def entry(self) -> Block:
        return self.blocks[0]

    def block(self, label: str) -> Block:
        for blk in self.blocks:
            if blk.label == label:
                return blk
        raise KeyError(label)

    def block_map(self) -> dict[str, Block]:
        return {b.label: b for b in self.blocks}

    def instructions(self) -> Iterator[tuple[Loc, Instruction]]:
        for blk in self.blocks:
            for i, inst in enumerate(blk.instrs):
                yield (blk.label, i), inst

    def instruction_count(self) -> int:
        return sum(len(b.instrs) for b in self.blocks)

    def at(self, loc: Loc) -> Instruction:
        return self.block(loc[0]).instrs[loc[1]]

    def definitions(self) -> dict[str, Instruction]:
        return {inst.result: inst for _, inst in self.instructions()
                if inst.result is not None}

    def def_locs(self) -> dict[str, Loc]:
        return {inst.result: loc for loc, inst in self.instructions()
                if inst.result is not None}

    def value_types(self) -> dict[str, KirType]:
        types = {p.name: p.ty for p in self.params}
        for _, inst in self.instructions():
            if inst.result is not None:
                rty = inst.result_type()
                if rty is not None:
                    types[inst.result] = rty
        return types


@dataclass(frozen=True)
class Extern:
    name: str
    param_tys: tuple[KirType, ...]
    ret_ty: KirType


@dataclass(frozen=True)
class GlobalVar:
    name: str
    ty: KirType


RECIPES = ("fresh", "nondet", "null-or-fresh")


@dataclass(frozen=True)
class EntryDescriptor:
    init_function: str
    # One recipe per parameter, or empty for defaults by type.
    input_recipe: tuple[str, ...] = ()


@dataclass(frozen=True)
class KirModule:
    types: tuple[TypeDef, ...] = ()
    refclasses: tuple[str, ...] = ()
    globals: tuple[GlobalVar, ...] = ()
    externs: tuple[Extern, ...] = ()
    functions: tuple[KirFunction, ...] = ()
    entry: Optional[EntryDescriptor] = None

    def typedefs(self) -> dict[str, TypeDef]:
        defs = {KREF_TYPE: KREF_TYPEDEF, TOKEN_TYPE: TOKEN_TYPEDEF}
        defs.update((t.name, t) for t in self.types)
        return defs

    def function(self, name: str) -> Optional[KirFunction]:
        for fn in self.functions:
            if fn.name == name:
                return fn
        return None

    def function_map(self) -> dict[str, KirFunction]:
        return {f.name: f for f in self.functions}

    def extern(self, name: str) -> Optional[Extern]:
        for ext in self.externs:
            if ext.name == name:
                return ext
        return None

    def global_var(self, name: str) -> Optional[GlobalVar]:
        for g in self.globals:
            if g.name == name:
                return g
        return None

    def with_function(self, fn: KirFunction) -> "KirModule":
        """Replace the function of the same name (or append it)."""
        funcs = list(self.functions)
        for i, old in enumerate(funcs):
            if old.name == fn.name:
                funcs[i] = fn
                break
        else:
            funcs.append(fn)
        return replace(self, functions=tuple(funcs))

    def with_refclass(self, name: str) -> "KirModule":
        if name in self.refclasses:
            return self
        return replace(self, refclasses=self.refclasses + (name,))

    def instruction_count(self) -> int:
        return sum(f.instruction_count() for f in self.functions)


def operand_type(op: Operand, types: dict[str, KirType],
                 module: Optional[KirModule] = None) -> Optional[KirType]:
    """Static type of an operand; None for untyped literals."""
    if isinstance(op, Value):
        return types.get(op.name)
    if isinstance(op, Null):
        return PTR
    if isinstance(op, Global):
        if module is not None:
            g = module.global_var(op.name)
            if g is not None:
                return AddrTy(g.ty)
        return PTR
    return None


def field_path_type(typedefs: dict[str, TypeDef], agg: str,
                    path: tuple[str, ...]) -> Optional[KirType]:
    """Walk ``path`` through nested aggregates starting at ``agg``."""
    cur: KirType = AggRef(agg)
    for name in path:
        if not isinstance(cur, AggRef) or cur.name not in typedefs:
            return None
        nxt = typedefs[cur.name].field_type(name)
        if nxt is None:
            return None
        cur = nxt
    return cur
