"""Control-flow and value-flow queries over KIR functions."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .ir import (
    AddrTy, Alloca, Cast, FieldAddr, Global, Instruction, KirFunction,
    KirModule, Loc, Null, Operand, Phi, Value, operand_type, successors,
)


def cfg_successors(fn: KirFunction) -> dict[str, tuple[str, ...]]:
    out = {}
    for blk in fn.blocks:
        term = blk.terminator
        out[blk.label] = successors(term) if term is not None else ()
    return out


def cfg_predecessors(fn: KirFunction) -> dict[str, set[str]]:
    """Map each block label to the set of blocks branching to it."""
    preds: dict[str, set[str]] = {b.label: set() for b in fn.blocks}
    for src, dsts in cfg_successors(fn).items():
        for dst in dsts:
            preds.setdefault(dst, set()).add(src)
    return preds


def reverse_postorder(fn: KirFunction) -> list[str]:
    succ = cfg_successors(fn)
    seen, order = set(), []

    def visit(lbl):
        # iterative DFS keeps deep CFGs off the Python stack
        stack = [(lbl, iter(succ.get(lbl, ())))]
        seen.add(lbl)
        while stack:
            node, it = stack[-1]
            for nxt in it:
                if nxt not in seen and nxt in succ:
                    seen.add(nxt)
                    stack.append((nxt, iter(succ[nxt])))
                    break
            else:
                order.append(node)
                stack.pop()

    visit(fn.entry.label)
    return order[::-1]


def dominators(fn: KirFunction) -> dict[str, set[str]]:
    """Dominator sets for blocks reachable from the entry."""
    order = reverse_postorder(fn)
    preds = cfg_predecessors(fn)
    reachable = set(order)
    dom = {lbl: set(reachable) for lbl in order}
    entry = fn.entry.label
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for lbl in order:
            if lbl == entry:
                continue
            ps = [dom[p] for p in preds[lbl] if p in reachable]
            new = set.intersection(*ps) if ps else set()
            new = new | {lbl}
            if new != dom[lbl]:
                dom[lbl] = new
                changed = True
    return dom


def back_edges(fn: KirFunction) -> set[tuple[str, str]]:
    """Edges u -> v where v dominates u (natural-loop back-edges)."""
    dom = dominators(fn)
    edges = set()
    for src, dsts in cfg_successors(fn).items():
        if src not in dom:
            continue
        for dst in dsts:
            if dst in dom[src]:
                edges.add((src, dst))
    return edges


def blocks_in_cycles(fn: KirFunction) -> set[str]:
    """Labels of blocks that lie on some CFG cycle."""
    succ = cfg_successors(fn)
    out = set()
    for start in succ:
        stack, seen = list(succ[start]), set()
        while stack:
            lbl = stack.pop()
            if lbl == start:
                out.add(start)
                break
            if lbl in seen or lbl not in succ:
                continue
            seen.add(lbl)
            stack.extend(succ[lbl])
    return out


def uses(inst: Instruction) -> set[str]:
    return {op.name for op in inst.operands() if isinstance(op, Value)}


@dataclass
class Liveness:
    """Per-instruction live sets; ``before[(b, i)]`` is live on entry to i."""
    before: dict[Loc, frozenset]
    live_in: dict[str, frozenset]
    live_out: dict[str, frozenset]

    def after(self, loc: Loc, fn: KirFunction) -> frozenset:
        blk = fn.block(loc[0])
        if loc[1] + 1 < len(blk.instrs):
            return self.before[(loc[0], loc[1] + 1)]
        return self.live_out[loc[0]]


def liveness(fn: KirFunction) -> Liveness:
    """Classic backward liveness; phi operands are live-out of the
    corresponding predecessor, phi results are defined at block entry."""
    succ = cfg_successors(fn)
    phi_uses: dict[str, set[str]] = {b.label: set() for b in fn.blocks}
    for blk in fn.blocks:
        for phi in blk.phis():
            for pred, op in phi.incoming:
                if isinstance(op, Value) and pred in phi_uses:
                    phi_uses[pred].add(op.name)
    live_in = {b.label: frozenset() for b in fn.blocks}
    live_out = {b.label: frozenset() for b in fn.blocks}
    changed = True
    while changed:
        changed = False
        for blk in reversed(fn.blocks):
            out = set(phi_uses[blk.label])
            for s in succ[blk.label]:
                if s in live_in:
                    out |= live_in[s]
            live = set(out)
            for inst in reversed(blk.instrs):
                if isinstance(inst, Phi):
                    live.discard(inst.result)
                    continue
                if inst.result is not None:
                    live.discard(inst.result)
                live |= uses(inst)
            fout, fin = frozenset(out), frozenset(live)
            if fout != live_out[blk.label] or fin != live_in[blk.label]:
                live_out[blk.label], live_in[blk.label] = fout, fin
                changed = True
    before = {}
    for blk in fn.blocks:
        live = set(live_out[blk.label])
        for i in range(len(blk.instrs) - 1, -1, -1):
            inst = blk.instrs[i]
            if inst.result is not None:
                live.discard(inst.result)
            if not isinstance(inst, Phi):
                live |= uses(inst)
            before[(blk.label, i)] = frozenset(live)
    return Liveness(before, live_in, live_out)


# ------------------------------------------------------ underlying objects

@dataclass(frozen=True, order=True)
class AbstractObject:
    """Origin of an address: an alloca, parameter, global or opaque value.

    ``kind`` is one of ``alloca``, ``param``, ``global``, ``null`` or
    ``value`` (any other defining instruction, e.g. a load, call or nondet).
    """
    kind: str
    name: str

    def __str__(self) -> str:
        if self.kind == "null":
            return "null"
        sigil = "@" if self.kind == "global" else "%"
        return f"{sigil}{self.name}"


class UnderlyingObjects:
    """Memoized underlying-object resolution for one function."""

    def __init__(self, fn: KirFunction, module: Optional[KirModule] = None):
        self.fn = fn
        self.module = module
        self.defs = fn.definitions()
        self.params = {p.name for p in fn.params}
        self.types = fn.value_types()
        self._cache: dict[str, frozenset] = {}

    def of(self, op: Operand) -> frozenset:
        ty = operand_type(op, self.types, self.module)
        if ty is not None and not isinstance(ty, AddrTy):
            raise TypeError(f"underlying_object of non-address operand {op} : {ty}")
        if isinstance(op, Null):
            return frozenset({AbstractObject("null", "null")})
        if isinstance(op, Global):
            return frozenset({AbstractObject("global", op.name)})
        if not isinstance(op, Value):
            raise TypeError(f"underlying_object of literal {op}")
        return self._value(op.name)

    def _value(self, name: str) -> frozenset:
        if name in self._cache:
            return self._cache[name]
        result: set[AbstractObject] = set()
        seen: set[str] = set()
        work = [name]
        while work:
            cur = work.pop()
            if cur in seen:
                continue
            seen.add(cur)
            if cur in self.params:
                result.add(AbstractObject("param", cur))
                continue
            inst = self.defs.get(cur)
            if isinstance(inst, FieldAddr):
                self._push(inst.base, work, result)
            elif isinstance(inst, Cast) and isinstance(self.types.get(cur), AddrTy):
                self._push(inst.value, work, result)
            elif isinstance(inst, Phi):
                for _, op in inst.incoming:
                    self._push(op, work, result)
            elif isinstance(inst, Alloca):
                result.add(AbstractObject("alloca", cur))
            else:
                result.add(AbstractObject("value", cur))
        out = frozenset(result)
        self._cache[name] = out
        return out

    @staticmethod
    def _push(op: Operand, work: list, result: set) -> None:
        if isinstance(op, Value):
            work.append(op.name)
        elif isinstance(op, Global):
            result.add(AbstractObject("global", op.name))
        elif isinstance(op, Null):
            result.add(AbstractObject("null", "null"))


def underlying_object(fn: KirFunction, op, module: Optional[KirModule] = None) -> frozenset:
    """Objects an address operand may originate from.

    Strips ``fieldaddr`` and pointer casts transitively. A phi whose
    incoming values all reduce to one object is transparent; otherwise the
    result is the may-set of every source. Applied to an
    :class:`AbstractObject` (or a set of them) it is the identity.
    """
    if isinstance(op, AbstractObject):
        return frozenset({op})
    if isinstance(op, frozenset):
        return frozenset().union(*(underlying_object(fn, o, module) for o in op))
    return UnderlyingObjects(fn, module).of(op)
