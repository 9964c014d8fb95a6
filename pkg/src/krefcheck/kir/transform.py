"""Structural rewrites shared by the model, slicing and CHC passes."""
from __future__ import annotations

from dataclasses import replace
from typing import Callable, Iterable, Mapping, Optional

from .ir import (
    Block, Br, Call, Const, Global, Instruction, KirFunction, Loc, Null,
    Operand, Phi, Ret, Value, VoidTy, retarget, successors,
)


def substitute(inst: Instruction, mapping: Mapping[str, Operand]) -> Instruction:
    """Replace ``%name`` operands found in ``mapping``."""
    ops = inst.operands()
    new = tuple(mapping.get(op.name, op) if isinstance(op, Value) else op for op in ops)
    if new == ops:
        return inst
    return inst.with_operands(new)


def substitute_function(fn: KirFunction, mapping: Mapping[str, Operand]) -> KirFunction:
    if not mapping:
        return fn
    blocks = tuple(Block(b.label, tuple(substitute(i, mapping) for i in b.instrs))
                   for b in fn.blocks)
    return replace(fn, blocks=blocks)


def used_names(fn: KirFunction) -> set[str]:
    names = {p.name for p in fn.params}
    names |= {b.label for b in fn.blocks}
    for _, inst in fn.instructions():
        if inst.result is not None:
            names.add(inst.result)
    return names


class NameSupply:
    """Fresh SSA/label names that do not clash with a function's names."""

    def __init__(self, taken: Iterable[str]):
        self.taken = set(taken)
        self.counter = 0

    def fresh(self, base: str) -> str:
        name = base
        while name in self.taken:
            self.counter += 1
            name = f"{base}.{self.counter}"
        self.taken.add(name)
        return name

    def prefix(self, stem: str) -> str:
        """A prefix ``stem<N>`` such that no taken name starts with it."""
        while True:
            self.counter += 1
            pre = f"{stem}{self.counter}"
            if not any(t == pre or t.startswith(pre + ".") for t in self.taken):
                self.taken.add(pre)
                return pre


def _rename_instruction(inst: Instruction, vmap: Mapping[str, Operand],
                        lmap: Mapping[str, str], result: Optional[str]) -> Instruction:
    inst = substitute(inst, vmap)
    if isinstance(inst, Phi):
        inst = replace(inst, incoming=tuple((lmap.get(b, b), op) for b, op in inst.incoming))
    if inst.is_terminator():
        for old in successors(inst):
            if old in lmap:
                inst = retarget(inst, old, lmap[old])
    return replace(inst, result=result)


def inline_call(fn: KirFunction, loc: Loc, callee: KirFunction,
                supply: Optional[NameSupply] = None,
                stem: str = "inl") -> KirFunction:
    """Inline ``callee`` at the call instruction ``loc`` of ``fn``.

    The block holding the call is split: its tail moves to a fresh
    continuation block, the callee's blocks are copied in with fresh names,
    and every callee ``ret`` branches to the continuation. A returned value
    reaches the call's result through a phi at the head of the continuation.
    """
    supply = supply or NameSupply(used_names(fn))
    label, idx = loc
    blk = fn.block(label)
    call = blk.instrs[idx]
    assert isinstance(call, Call)
    pre = supply.prefix(stem)
    vmap: dict[str, Operand] = {p.name: a for p, a in zip(callee.params, call.args)}
    lmap: dict[str, str] = {}
    for b in callee.blocks:
        lmap[b.label] = supply.fresh(f"{pre}.{b.label}")
    for _, inst in callee.instructions():
        if inst.result is not None:
            vmap[inst.result] = Value(supply.fresh(f"{pre}.{inst.result}"))
    cont = supply.fresh(f"{pre}.cont")

    copied = []
    returns: list[tuple[str, Optional[Operand]]] = []
    for b in callee.blocks:
        instrs = []
        for inst in b.instrs:
            if isinstance(inst, Ret):
                val = inst.value
                if isinstance(val, Value):
                    val = vmap.get(val.name, val)
                returns.append((lmap[b.label], val))
                instrs.append(Br(target=cont))
                continue
            new_result = vmap[inst.result].name if inst.result is not None else None
            instrs.append(_rename_instruction(inst, vmap, lmap, new_result))
        copied.append(Block(lmap[b.label], tuple(instrs)))

    head = blk.instrs[:idx] + (Br(target=lmap[callee.entry.label]),)
    tail = list(blk.instrs[idx + 1:])
    if call.result is not None and not isinstance(callee.ret_ty, VoidTy):
        phi = Phi(result=call.result, ty=call.ty,
                  incoming=tuple((b, v if v is not None else Const(0)) for b, v in returns))
        tail.insert(0, phi)
    cont_block = Block(cont, tuple(tail))

    blocks = []
    for b in fn.blocks:
        if b.label == label:
            blocks.append(Block(label, head))
            blocks.extend(copied)
            blocks.append(cont_block)
        else:
            blocks.append(b)
    # successors of the split block now see the continuation as predecessor
    old_succs = set(successors(blk.instrs[-1])) if blk.instrs else set()
    fixed = []
    for b in blocks:
        if b.label in old_succs:
            b = Block(b.label, tuple(
                replace(i, incoming=tuple((cont if s == label else s, op) for s, op in i.incoming))
                if isinstance(i, Phi) else i for i in b.instrs))
        fixed.append(b)
    return replace(fn, blocks=tuple(fixed))


def map_instructions(fn: KirFunction,
                     fun: Callable[[Loc, Instruction], Optional[list[Instruction]]]) -> KirFunction:
    """Rebuild ``fn``; ``fun`` returns replacement instructions or None to keep."""
    blocks = []
    for b in fn.blocks:
        out: list[Instruction] = []
        for i, inst in enumerate(b.instrs):
            rep = fun((b.label, i), inst)
            out.extend([inst] if rep is None else rep)
        blocks.append(Block(b.label, tuple(out)))
    return replace(fn, blocks=tuple(blocks))


def canonicalize(fn: KirFunction, name: str = "f") -> KirFunction:
    """Alpha-rename values and labels in order of appearance.

    Two functions are equal modulo SSA and label names iff their
    canonical forms are equal.
    """
    vmap: dict[str, Operand] = {}
    for k, p in enumerate(fn.params):
        vmap[p.name] = Value(f"a{k}")
    n = 0
    for _, inst in fn.instructions():
        if inst.result is not None:
            vmap[inst.result] = Value(f"v{n}")
            n += 1
    lmap = {b.label: f"b{k}" for k, b in enumerate(fn.blocks)}
    blocks = []
    for b in fn.blocks:
        instrs = tuple(
            _rename_instruction(i, vmap, lmap,
                                vmap[i.result].name if i.result is not None else None)
            for i in b.instrs)
        blocks.append(Block(lmap[b.label], instrs))
    params = tuple(replace(p, name=f"a{k}") for k, p in enumerate(fn.params))
    return KirFunction(name, params, fn.ret_ty, tuple(blocks))


def is_literal(op: Operand) -> bool:
    return isinstance(op, (Const, Null, Global))
