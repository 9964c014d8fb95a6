"""Allocation sites and a flow-insensitive points-to analysis.

Every address the CHC encoding manipulates is a *location*: an allocation
site plus a field path. Sites are allocas, nondet and extern-returned
pointers, globals, and lazily materialized child objects of pointer-valued
cells (bounded in depth).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from ..kir.cfg import blocks_in_cycles
from ..kir.ir import (
    AddrTy, AggRef, Alloca, AsmOp, Call, Cast, FieldAddr, IntTy,
    KirFunction, KirModule, KirType, Load, Nondet, Null, Phi, Ret, Store,
    Global, Value, WRITEONLY, is_token_ptr,
)

MAX_CHILD_DEPTH = 4
MAX_PATH = 6
NULL_LOC = 0


@dataclass(frozen=True)
class Site:
    name: str
    ty: Optional[KirType]      # pointee type; None for opaque objects
    kind: str                  # alloca | nondet | extern | global | child | token
    depth: int = 0
    collapsed: bool = False    # may stand for several runtime objects


@dataclass
class Locations:
    """Numbering of (site, path) pairs; 0 is reserved for null."""
    sites: dict = field(default_factory=dict)          # name -> Site
    ids: dict = field(default_factory=dict)            # (site, path) -> int
    leaves: dict = field(default_factory=dict)         # loc id -> scalar type
    children: dict = field(default_factory=dict)       # leaf loc id -> child site name
    parent: dict = field(default_factory=dict)         # loc id -> (site, path)
    notes: list = field(default_factory=list)

    def loc(self, site: str, path: tuple = ()) -> Optional[int]:
        return self.ids.get((site, path))

    def site_of(self, loc: int) -> Site:
        return self.sites[self.parent[loc][0]]

    def is_token(self, loc: int) -> bool:
        return loc != NULL_LOC and self.site_of(loc).kind == "token"

    def site_leaves(self, site: str, prefix: tuple = ()) -> list[int]:
        return [l for l, _ in self.leaves.items()
                if self.parent[l][0] == site and self.parent[l][1][:len(prefix)] == prefix]

    def add_site(self, site: Site, typedefs: dict) -> None:
        if site.name in self.sites:
            return
        self.sites[site.name] = site
        self._paths(site, site.ty, (), typedefs)

    def _paths(self, site: Site, ty, path: tuple, typedefs: dict) -> None:
        self.ids[(site.name, path)] = len(self.ids) + 1
        lid = self.ids[(site.name, path)]
        self.parent[lid] = (site.name, path)
        if isinstance(ty, AggRef) and ty.name in typedefs:
            if len(path) >= MAX_PATH:
                self.notes.append(f"field paths of {site.name} cut at depth {MAX_PATH}")
                return
            for fname, fty in typedefs[ty.name].fields:
                self._paths(site, fty, path + (fname,), typedefs)
        elif isinstance(ty, (IntTy, AddrTy)):
            self.leaves[lid] = ty
            if isinstance(ty, AddrTy) and not is_token_ptr(ty):
                if site.depth + 1 > MAX_CHILD_DEPTH:
                    self.notes.append(f"pointers stored {MAX_CHILD_DEPTH} levels below "
                                      f"{site.name.split('/')[0]} are assumed null")
                    return
                child = Site(f"{site.name}/{'.'.join(path) or '*'}", ty.pointee, "child",
                             site.depth + 1, site.collapsed)
                self.children[lid] = child.name
                self.add_site(child, typedefs)


def _recursive_functions(module: KirModule) -> set[str]:
    funcs = module.function_map()
    calls = {f.name: {i.callee for _, i in f.instructions()
                      if isinstance(i, Call) and i.callee in funcs} for f in module.functions}
    rec = set()
    for f in funcs:
        seen, stack = set(), list(calls[f])
        while stack:
            g = stack.pop()
            if g == f:
                rec.add(f)
                break
            if g not in seen:
                seen.add(g)
                stack.extend(calls[g])
    return rec


def site_name(fn: str, value: str) -> str:
    return f"{fn}:{value}"


def _multi_instance(functions: list[KirFunction], rec: set[str]) -> set[str]:
    """Functions that may run more than once per harness execution."""
    names = {f.name for f in functions}
    sites: dict[str, list[tuple[str, bool]]] = {n: [] for n in names}
    for fn in functions:
        cyclic = blocks_in_cycles(fn)
        for (blk, _), inst in fn.instructions():
            if isinstance(inst, Call) and inst.callee in names:
                sites[inst.callee].append((fn.name, blk in cyclic))
    multi = set(rec)
    changed = True
    while changed:
        changed = False
        for callee, calls in sites.items():
            if callee in multi:
                continue
            if len(calls) > 1 or any(loop or caller in multi for caller, loop in calls):
                multi.add(callee)
                changed = True
    return multi


def build_locations(module: KirModule, functions: list[KirFunction]) -> Locations:
    locs = Locations()
    typedefs = module.typedefs()
    multi = _multi_instance(functions, _recursive_functions(module))
    for g in module.globals:
        locs.add_site(Site(f"@{g.name}", g.ty, "global"), typedefs)
    for fn in functions:
        cyclic = blocks_in_cycles(fn)
        for (blk, _), inst in fn.instructions():
            collapsed = blk in cyclic or fn.name in multi
            name = site_name(fn.name, inst.result or "")
            if isinstance(inst, Alloca):
                locs.add_site(Site(name, inst.ty, "alloca", 0, collapsed), typedefs)
            elif isinstance(inst, (Nondet, Call, AsmOp)) and isinstance(inst.result_type(), AddrTy):
                if isinstance(inst, Call) and inst.callee in module.function_map():
                    continue
                ty = inst.result_type()
                kind = "token" if is_token_ptr(ty) else ("nondet" if isinstance(inst, Nondet) else "extern")
                locs.add_site(Site(name, None if kind == "token" else ty.pointee, kind, 0, collapsed),
                              typedefs)
    collapsed = sorted({s.name.split("/")[0] for s in locs.sites.values()
                        if s.collapsed and s.kind != "child"})
    if collapsed:
        locs.notes.append("objects created in loops, recursion or repeated calls "
                          "are tracked only by the class total: "
                          + ", ".join(collapsed))
    return locs


class PointsTo:
    """Andersen-style inclusion constraints solved to a fixpoint.

    ``of(fn, operand)`` is the set of location ids an address operand may
    hold (0 for null). ``contents[l]`` is what a pointer cell may hold.
    """

    def __init__(self, module: KirModule, functions: list[KirFunction], locs: Locations):
        self.module = module
        self.locs = locs
        self.values: dict[tuple, set] = {}
        self.contents: dict[int, set] = {}
        funcs = {f.name: f for f in functions}
        self._types = {f.name: f.value_types() for f in functions}
        for leaf, ty in locs.leaves.items():
            if isinstance(ty, AddrTy):
                site = locs.site_of(leaf)
                init = {NULL_LOC}
                if site.kind != "alloca" and leaf in locs.children:
                    init.add(locs.loc(locs.children[leaf]))
                self.contents[leaf] = init
        changed = True
        while changed:
            changed = False
            for fn in functions:
                for _, inst in fn.instructions():
                    changed |= self._visit(fn, inst, funcs)

    def of(self, fn: str, op) -> set:
        if isinstance(op, Null):
            return {NULL_LOC}
        if isinstance(op, Global):
            loc = self.locs.loc(f"@{op.name}")
            return {loc} if loc is not None else set()
        if isinstance(op, Value):
            return self.values.get((fn, op.name), set())
        return {NULL_LOC}

    def _add(self, key, new) -> bool:
        cur = self.values.setdefault(key, set())
        if new <= cur:
            return False
        cur |= new
        return True

    def _add_contents(self, leaf, new) -> bool:
        cur = self.contents.setdefault(leaf, set())
        if new <= cur:
            return False
        cur |= new
        return True

    def _havoc(self, loc: int) -> bool:
        """Cells under ``loc`` may now hold null or their child object."""
        site, path = self.locs.parent[loc]
        changed = False
        for leaf in self.locs.site_leaves(site, path):
            if isinstance(self.locs.leaves[leaf], AddrTy):
                new = {NULL_LOC}
                if leaf in self.locs.children:
                    new.add(self.locs.loc(self.locs.children[leaf]))
                changed |= self._add_contents(leaf, new)
        return changed

    def _visit(self, fn: KirFunction, inst, funcs) -> bool:
        key = (fn.name, inst.result) if inst.result else None
        rty = inst.result_type()
        locs = self.locs
        name = site_name(fn.name, inst.result or "")
        if isinstance(inst, Alloca):
            return self._add(key, {locs.loc(name)})
        if isinstance(inst, Nondet) or isinstance(inst, AsmOp):
            if isinstance(rty, AddrTy):
                return self._add(key, {NULL_LOC, locs.loc(name)})
            return False
        if isinstance(inst, FieldAddr):
            out = set()
            for l in self.of(fn.name, inst.base):
                if l == NULL_LOC:
                    out.add(NULL_LOC)
                    continue
                site, path = locs.parent[l]
                target = locs.loc(site, path + tuple(inst.path))
                if target is not None:
                    out.add(target)
            return self._add(key, out)
        if isinstance(inst, (Cast, Phi)) and isinstance(rty, AddrTy):
            out = set()
            ops = [op for _, op in inst.incoming] if isinstance(inst, Phi) else [inst.value]
            for op in ops:
                if isinstance(op, Value) and not isinstance(inst, Phi) and \
                        not isinstance(self._type(fn, op), AddrTy):
                    out.add(NULL_LOC)
                else:
                    out |= self.of(fn.name, op)
            return self._add(key, out)
        if isinstance(inst, Load) and isinstance(rty, AddrTy):
            out = set()
            for l in self.of(fn.name, inst.addr):
                out |= self.contents.get(l, set())
            return self._add(key, out)
        if isinstance(inst, Store) and isinstance(inst.ty, AddrTy):
            changed = False
            vals = self.of(fn.name, inst.value)
            for l in self.of(fn.name, inst.addr):
                if l in locs.leaves:
                    changed |= self._add_contents(l, vals)
            return changed
        if isinstance(inst, Call):
            changed = False
            callee = funcs.get(inst.callee)
            if callee is not None:
                for p, a in zip(callee.params, inst.args):
                    if isinstance(p.ty, AddrTy):
                        changed |= self._add((callee.name, p.name), self.of(fn.name, a))
                if key and isinstance(rty, AddrTy):
                    for _, r in callee.instructions():
                        if isinstance(r, Ret) and r.value is not None:
                            changed |= self._add(key, self.of(callee.name, r.value))
                return changed
            for j, a in enumerate(inst.args):
                if WRITEONLY in inst.attrs_of(j):
                    for l in self.of(fn.name, a):
                        if l != NULL_LOC and not locs.is_token(l):
                            changed |= self._havoc(l)
            if key and isinstance(rty, AddrTy):
                changed |= self._add(key, {NULL_LOC, locs.loc(name)})
            return changed
        return False

    def _type(self, fn: KirFunction, op):
        if isinstance(op, Value):
            return self._types[fn.name].get(op.name)
        return None
