"""Necessity-based slicing of KIR modules.

Two steps: find the essential function arguments (kref-embedding
parameters through which a function can change a refcount), then grow the
set of necessary instructions per function to a fixpoint and delete the
rest. Deleted values still read by retained code become ``nondet``.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

from .kir.cfg import AbstractObject, UnderlyingObjects, cfg_predecessors
from .kir.ir import (
    AddrTy, AggRef, Alloca, Assert, Assume, BinOp, Block, Br, Call, Cast, Cmp,
    CondBr, FieldAddr, Instruction, IntTy, KirFunction, KirModule, Load, Loc,
    Nondet, Phi, RcDec, RcDelta, RcInc, Ret, Store, Switch, Value,
    WRITEONLY, operand_type,
)
from .kir.transform import NameSupply, used_names
from .refmodel.kref import addresses_kref, find_kref_types

HARNESS_NAME = "main"

# (function name, parameter index) -> essential?
EssentialArgs = dict

RULES = ("R1", "R2", "R3", "R4", "R5", "root", "demand", "pred")

_R1_KINDS = (Br, CondBr, Switch, Ret, Phi, Alloca,
             Assert, Assume, RcInc, RcDec, RcDelta)
_PURE_KINDS = (Cmp, BinOp, Cast, FieldAddr, Phi)


@dataclass(frozen=True)
class SliceMarking:
    """Necessary instructions of one function and the rule that added each."""
    function: str
    necessary: frozenset
    provenance: Mapping[Loc, str] = field(default_factory=dict)

    def rule_counts(self) -> dict[str, int]:
        counts = Counter(self.provenance.values())
        return {r: counts.get(r, 0) for r in RULES}


# ------------------------------------------------------ essential arguments

def collect_essential_args(module: KirModule) -> EssentialArgs:
    """Least fixpoint of the essential-argument relation over the call graph.

    ``(f, i)`` is essential iff parameter ``i`` addresses a kref-embedding
    aggregate and either f applies an rc operation to an object whose
    underlying objects include that parameter, or f forwards it to an
    essential parameter of a callee.
    """
    krefs = find_kref_types(module)
    result = {(fn.name, i): False for fn in module.functions
              for i in range(len(fn.params))}
    candidates = {(fn.name, i) for fn in module.functions
                  for i, p in enumerate(fn.params) if addresses_kref(p.ty, krefs)}
    resolvers = {fn.name: UnderlyingObjects(fn, module) for fn in module.functions}

    def underlying(fn, op) -> frozenset:
        try:
            return resolvers[fn.name].of(op)
        except TypeError:
            return frozenset()

    changed = True
    while changed:
        changed = False
        for fn in module.functions:
            for i, p in enumerate(fn.params):
                key = (fn.name, i)
                if key not in candidates or result[key]:
                    continue
                me = AbstractObject("param", p.name)
                for _, inst in fn.instructions():
                    if isinstance(inst, (RcInc, RcDec)) and me in underlying(fn, inst.obj):
                        hit = True
                    elif isinstance(inst, Call):
                        hit = any(result.get((inst.callee, j), False) and me in underlying(fn, a)
                                  for j, a in enumerate(inst.args))
                    else:
                        hit = False
                    if hit:
                        result[key] = True
                        changed = True
                        break
    return result


# ----------------------------------------------------------- the fixpoint

class _Context:
    def __init__(self, fn: KirFunction, essential: EssentialArgs, module: KirModule,
                 roots: frozenset):
        self.fn = fn
        self.module = module
        self.essential = essential
        self.roots = roots
        self.locs = [loc for loc, _ in fn.instructions()]
        self.insts = dict(fn.instructions())
        self.def_locs = fn.def_locs()
        self.types = fn.value_types()
        self.uobj = UnderlyingObjects(fn, module)
        self.preds = cfg_predecessors(fn)
        krefs = find_kref_types(module)
        self.essential_formals = {AbstractObject("param", p.name)
                                  for i, p in enumerate(fn.params)
                                  if essential.get((fn.name, i), False)}
        self.kref_allocs = set()
        for loc, inst in fn.instructions():
            if isinstance(inst, Alloca) and isinstance(inst.ty, AggRef) and inst.ty.name in krefs:
                self.kref_allocs.add(AbstractObject("alloca", inst.result))
            if isinstance(inst, Nondet) and addresses_kref(inst.ty, krefs):
                self.kref_allocs.add(AbstractObject("value", inst.result))
        for g in module.globals:
            if isinstance(g.ty, AggRef) and g.ty.name in krefs:
                self.kref_allocs.add(AbstractObject("global", g.name))

    def objects(self, op) -> frozenset:
        ty = operand_type(op, self.types, self.module)
        if not isinstance(ty, AddrTy):
            return frozenset()
        return self.uobj.of(op)

    def is_root(self, inst: Instruction) -> bool:
        return isinstance(inst, Call) and inst.callee in self.roots


def _r2(ctx: _Context, inst: Instruction) -> bool:
    if not isinstance(inst, Call):
        return False
    sources = ctx.essential_formals | ctx.kref_allocs
    for j, arg in enumerate(inst.args):
        if ctx.essential.get((inst.callee, j), False) and ctx.objects(arg) & sources:
            return True
    return False


def _apply_rules(ctx: _Context, marked: set) -> dict[Loc, str]:
    """One rule-major round; returns newly derived locations and their rule."""
    new: dict[Loc, str] = {}

    def add(loc, rule):
        if loc not in marked and loc not in new:
            new[loc] = rule

    def is_marked(loc):
        return loc in marked or loc in new

    for loc in ctx.locs:
        if isinstance(ctx.insts[loc], _R1_KINDS):
            add(loc, "R1")
    for loc in ctx.locs:
        if ctx.is_root(ctx.insts[loc]):
            add(loc, "root")
    for loc in ctx.locs:
        if _r2(ctx, ctx.insts[loc]):
            add(loc, "R2")
    for loc in ctx.locs:
        inst = ctx.insts[loc]
        if isinstance(inst, Load):
            for obj in ctx.objects(inst.addr):
                if obj.kind == "alloca" or (obj.kind == "value"
                                            and is_marked(ctx.def_locs[obj.name])):
                    add(loc, "R3")
                    break
    read = set()
    for loc in ctx.locs:
        inst = ctx.insts[loc]
        if isinstance(inst, Load) and is_marked(loc):
            read |= ctx.objects(inst.addr)
    for loc in ctx.locs:
        inst = ctx.insts[loc]
        if isinstance(inst, Store) and ctx.objects(inst.addr) & read:
            add(loc, "R4")
    for loc in ctx.locs:
        inst = ctx.insts[loc]
        vals = [op for op in inst.operands() if isinstance(op, Value)]
        if vals and all(v.name in ctx.def_locs and is_marked(ctx.def_locs[v.name])
                        for v in vals):
            add(loc, "R5")
    # pure operands of necessary instructions
    for loc in ctx.locs:
        if not is_marked(loc):
            continue
        for op in ctx.insts[loc].operands():
            if isinstance(op, Value) and op.name in ctx.def_locs:
                dloc = ctx.def_locs[op.name]
                if isinstance(ctx.insts[dloc], _PURE_KINDS):
                    add(dloc, "demand")
    # terminators of predecessors of blocks holding necessary instructions
    blocks = {loc[0] for loc in ctx.locs if is_marked(loc)}
    for lbl in blocks:
        for pred in ctx.preds.get(lbl, ()):
            blk = ctx.fn.block(pred)
            add((pred, len(blk.instrs) - 1), "pred")
    return new


def _default_roots(fn: KirFunction, module: KirModule) -> frozenset:
    if fn.name == HARNESS_NAME and module.entry is not None:
        return frozenset({module.entry.init_function})
    return frozenset()


def mark_necessary(fn: KirFunction, essential: EssentialArgs, module: KirModule,
                   roots: Optional[Iterable[str]] = None) -> SliceMarking:
    """Least set of necessary instructions of ``fn``.

    ``roots`` names callees whose calls are always kept; by default that is
    the init function when ``fn`` is the harness.
    """
    roots = frozenset(roots) if roots is not None else _default_roots(fn, module)
    ctx = _Context(fn, essential, module, roots)
    marked: set = set()
    provenance: dict[Loc, str] = {}
    while True:
        new = _apply_rules(ctx, marked)
        if not new:
            break
        marked |= set(new)
        provenance.update(new)
    order = {loc: k for k, loc in enumerate(ctx.locs)}
    provenance = dict(sorted(provenance.items(), key=lambda kv: order[kv[0]]))
    return SliceMarking(fn.name, frozenset(marked), provenance)


def closure_violations(fn: KirFunction, marking: SliceMarking, essential: EssentialArgs,
                       module: KirModule, roots: Optional[Iterable[str]] = None) -> dict:
    """Locations one more rule round would add (empty for a fixpoint)."""
    roots = frozenset(roots) if roots is not None else _default_roots(fn, module)
    return _apply_rules(_Context(fn, essential, module, roots), set(marking.necessary))


def mark_module(module: KirModule, essential: Optional[EssentialArgs] = None) -> dict[str, SliceMarking]:
    essential = collect_essential_args(module) if essential is None else essential
    return {fn.name: mark_necessary(fn, essential, module) for fn in module.functions}


# ---------------------------------------------------------------- slicing

def _backfill(arg, ty, supply: NameSupply, typedefs) -> list[Instruction]:
    """Stores of nondet values into every scalar cell reachable at ``arg``."""
    pointee = ty.pointee if isinstance(ty, AddrTy) else None
    if isinstance(pointee, AggRef) and pointee.name in typedefs:
        out = []
        for fname, fty in typedefs[pointee.name].fields:
            sub = supply.fresh("__wo.f")
            out.append(FieldAddr(result=sub, agg=pointee.name, base=arg,
                                 path=(fname,), field_ty=fty))
            out.extend(_backfill(Value(sub), AddrTy(fty), supply, typedefs))
        return out
    if pointee is None or isinstance(pointee, AggRef):
        pointee = IntTy(64)
    name = supply.fresh("__wo")
    return [Nondet(result=name, ty=pointee), Store(ty=pointee, value=Value(name), addr=arg)]


def slice_function(fn: KirFunction, marking: SliceMarking, module: KirModule) -> KirFunction:
    keep = marking.necessary
    types = fn.value_types()
    uobj = UnderlyingObjects(fn, module)

    def objects(op):
        ty = operand_type(op, types, module)
        return uobj.of(op) if isinstance(ty, AddrTy) else frozenset()

    read = set()
    for loc, inst in fn.instructions():
        if loc in keep and isinstance(inst, Load):
            read |= objects(inst.addr)
    supply = NameSupply(used_names(fn))
    typedefs = module.typedefs()
    backfills: dict[Loc, list[Instruction]] = {}
    for loc, inst in fn.instructions():
        if loc in keep or not isinstance(inst, Call):
            continue
        fills = []
        for j, arg in enumerate(inst.args):
            if WRITEONLY in inst.attrs_of(j) and objects(arg) & read:
                fills.extend(_backfill(arg, operand_type(arg, types, module), supply, typedefs))
        if fills:
            backfills[loc] = fills

    needed: set[str] = set()
    for loc, inst in fn.instructions():
        if loc in keep:
            needed |= {op.name for op in inst.operands() if isinstance(op, Value)}
    for fills in backfills.values():
        for inst in fills:
            needed |= {op.name for op in inst.operands() if isinstance(op, Value)}

    blocks = []
    for blk in fn.blocks:
        out: list[Instruction] = []
        for i, inst in enumerate(blk.instrs):
            loc = (blk.label, i)
            if loc in keep:
                out.append(inst)
                continue
            if inst.result is not None and inst.result in needed:
                out.append(Nondet(result=inst.result, ty=inst.result_type()))
            out.extend(backfills.get(loc, ()))
        blocks.append(Block(blk.label, tuple(out)))
    return replace(fn, blocks=tuple(blocks))


def slice_module(module: KirModule, markings: Optional[Mapping[str, SliceMarking]] = None) -> KirModule:
    """Delete unmarked instructions of every function."""
    markings = mark_module(module) if markings is None else markings
    funcs = tuple(slice_function(fn, markings[fn.name], module) if fn.name in markings else fn
                  for fn in module.functions)
    return replace(module, functions=funcs)


slice = slice_module  # noqa: A001  (the operation's public name)


# ------------------------------------------------------------ DCE baseline

_DCE_REMOVABLE = (Alloca, Load, FieldAddr, BinOp, Cmp, Cast, Nondet, Phi, RcDelta)


def dce_baseline(module: KirModule) -> KirModule:
    """Remove side-effect-free instructions whose results are unused."""
    funcs = []
    for fn in module.functions:
        while True:
            used = set()
            for _, inst in fn.instructions():
                used |= {op.name for op in inst.operands() if isinstance(op, Value)}
            dead = {loc for loc, inst in fn.instructions()
                    if isinstance(inst, _DCE_REMOVABLE) and inst.result not in used}
            if not dead:
                break
            fn = replace(fn, blocks=tuple(
                Block(b.label, tuple(inst for i, inst in enumerate(b.instrs)
                                     if (b.label, i) not in dead))
                for b in fn.blocks))
        funcs.append(fn)
    return replace(module, functions=tuple(funcs))
