"""Constrained Horn clause encoding of harness programs.

The abstraction keeps integers, pointers as location ids (see
:mod:`pointsto`), one integer per memory cell the program reads or writes,
a counter per (refclass, location) touched by rc operations, and one
aggregate delta per refclass. Non-recursive calls are inlined first;
whatever calls remain are linked through summary predicates ``S_<f>``.

Integer arithmetic is unbounded (no wraparound) and bitwise operations on
wide integers are left unconstrained; both over-approximate the explicit
engine. The emitted script uses ``(set-logic HORN)``: a solver answering
``sat`` has found an inductive invariant (the error is unreachable), while
``unsat`` means the error query is satisfiable, i.e. a bug path exists.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional

from ..kir.cfg import liveness
from ..kir.ir import (
    AddrTy, Alloca, AsmOp, Assert, Assume, BinOp, Br, Call, Cast, Cmp, CondBr,
    Const, FieldAddr, Global, IntTy, KirFunction, KirModule, Load, Nondet, Null,
    Phi, RcDec, RcDelta, RcInc, Ret, Store, Switch, Value, WRITEONLY,
)
from ..kir.transform import NameSupply, inline_call, used_names
from .pointsto import NULL_LOC, Locations, PointsTo, build_locations, site_name
from .solver import SolverResult, resolve_solver_cmd, run_external_solver
from .verdict import Bug, Safe, Timeout, Unknown, Verdict


class ChcError(Exception):
    """The program falls outside what the encoding supports."""


@dataclass(frozen=True)
class Clause:
    head: Optional[tuple]          # (predicate, args) or None for the error
    atoms: tuple                   # body predicate applications
    constraints: tuple             # SMT-LIB terms
    variables: tuple               # bound variable names (all Int)


@dataclass
class ChcSystem:
    predicates: dict = field(default_factory=dict)   # name -> arity
    clauses: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    components: list = field(default_factory=list)   # names of the global state slots


def _sym(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_]", "_", text)


def _call_graph_recursive(module: KirModule) -> set[str]:
    from .pointsto import _recursive_functions
    return _recursive_functions(module)


def inline_all(module: KirModule, root: str = "main", limit: int = 10_000) -> KirModule:
    """Inline every call to a non-recursive defined function into ``root``."""
    rec = _call_graph_recursive(module)
    funcs = module.function_map()
    fn = funcs[root]
    supply = NameSupply(used_names(fn))
    for _ in range(limit):
        site = next(((loc, i) for loc, i in fn.instructions()
                     if isinstance(i, Call) and i.callee in funcs and i.callee not in rec
                     and i.callee != root), None)
        if site is None:
            return module.with_function(fn)
        loc, call = site
        fn = inline_call(fn, loc, funcs[call.callee], supply, stem=call.callee)
    raise ChcError("inlining did not terminate")


def _reachable_functions(module: KirModule, root: str) -> list[KirFunction]:
    funcs = module.function_map()
    order, seen, stack = [], set(), [root]
    while stack:
        f = stack.pop()
        if f in seen or f not in funcs:
            continue
        seen.add(f)
        order.append(funcs[f])
        for _, i in funcs[f].instructions():
            if isinstance(i, Call) and i.callee in funcs:
                stack.append(i.callee)
    return order


class _Encoder:
    def __init__(self, module: KirModule, functions: list[KirFunction], root: str,
                 domain: int, underflow_check: bool):
        self.module = module
        self.functions = {f.name: f for f in functions}
        self.root = root
        self.domain = domain
        self.underflow = underflow_check
        self.locs: Locations = build_locations(module, functions)
        self.pts = PointsTo(module, functions, self.locs)
        self.system = ChcSystem()
        self.system.notes.extend(dict.fromkeys(self.locs.notes))
        self.types = {f.name: f.value_types() for f in functions}
        self._layout()

    # -- global state layout

    def _layout(self) -> None:
        touched = set()
        rc_locs: dict[str, set] = {c: set() for c in self.module.refclasses}
        for fn in self.functions.values():
            for _, inst in fn.instructions():
                if isinstance(inst, (Load, Store)):
                    touched |= {l for l in self.pts.of(fn.name, inst.addr) if l in self.locs.leaves
                                and not self.locs.site_of(l).collapsed}
                if isinstance(inst, Call) and inst.callee not in self.functions:
                    for j, a in enumerate(inst.args):
                        if WRITEONLY in inst.attrs_of(j):
                            for l in self.pts.of(fn.name, a):
                                if l != NULL_LOC and not self.locs.site_of(l).collapsed:
                                    site, path = self.locs.parent[l]
                                    touched |= set(self.locs.site_leaves(site, path))
                if isinstance(inst, (RcInc, RcDec)):
                    rc_locs.setdefault(inst.refclass, set())
                    for l in self.pts.of(fn.name, inst.obj):
                        if l != NULL_LOC and not self.locs.is_token(l) \
                                and not self.locs.site_of(l).collapsed:
                            rc_locs[inst.refclass].add(l)
        self.cells = sorted(touched)
        self.counters = sorted((c, l) for c, ls in rc_locs.items() for l in ls)
        self.classes = sorted(rc_locs)
        comps = [("cell", l) for l in self.cells] + [("ctr",) + k for k in self.counters] \
            + [("delta", c) for c in self.classes]
        self.index = {c: i for i, c in enumerate(comps)}
        self.system.components = [self._comp_name(c) for c in comps]

    def _comp_name(self, comp) -> str:
        if comp[0] == "cell":
            site, path = self.locs.parent[comp[1]]
            return f"cell {site}{'.' + '.'.join(path) if path else ''}"
        if comp[0] == "ctr":
            site, path = self.locs.parent[comp[2]]
            return f"rc {comp[1]} {site}{'.' + '.'.join(path) if path else ''}"
        return f"delta {comp[1]}"

    # -- predicates

    def block_pred(self, fn: str, block: str) -> str:
        return f"P_{_sym(fn)}_{_sym(block)}"

    def summary_pred(self, fn: str) -> str:
        return f"S_{_sym(fn)}"

    def declare(self, name: str, arity: int) -> None:
        old = self.system.predicates.get(name)
        if old is not None and old != arity:
            raise ChcError(f"predicate {name} declared with two arities")
        self.system.predicates[name] = arity

    # -- encoding

    def encode(self) -> ChcSystem:
        for fn in self.functions.values():
            self._encode_function(fn)
        return self.system

    def _encode_function(self, fn: KirFunction) -> None:
        lv = liveness(fn)
        is_root = fn.name == self.root
        params = {p.name for p in fn.params}
        nparams = 0 if is_root else len(fn.params)
        ng = len(self.index)
        heads = {}
        for blk in fn.blocks:
            phis = [p.result for p in blk.phis()]
            live = sorted(v for v in lv.live_in[blk.label] if v not in params and v not in phis)
            heads[blk.label] = live + phis
            arity = nparams + (0 if is_root else ng) + len(heads[blk.label]) + ng
            self.declare(self.block_pred(fn.name, blk.label), arity)
        if not is_root:
            self.declare(self.summary_pred(fn.name), nparams + ng + 1 + ng)
        for blk in fn.blocks:
            _BlockEncoder(self, fn, blk, heads, is_root).run()
        if is_root:
            # initial state: counters and deltas zero, global cells havoc
            enc = _BlockEncoder(self, fn, fn.entry, heads, is_root)
            enc.start_initial()
            enc.emit_edge(fn.entry.label, None)


class _BlockEncoder:
    """Symbolic execution of one block into clauses."""

    def __init__(self, enc: _Encoder, fn: KirFunction, blk, heads: dict, is_root: bool):
        self.e = enc
        self.fn = fn
        self.blk = blk
        self.heads = heads
        self.is_root = is_root
        self.vars: list[str] = []
        self.constraints: list[str] = []
        self.atoms: list[tuple] = []
        self.env: dict[str, str] = {}
        self.g: list[str] = []
        self.g0: list[str] = []
        self.params0: list[str] = []
        self.counter = 0

    # -- helpers

    def fresh(self, base: str) -> str:
        self.counter += 1
        name = f"|{base}#{self.counter}|"
        self.vars.append(name)
        return name

    def define(self, term: str, base: str = "t") -> str:
        if re.fullmatch(r"-?\d+|\|[^|]*\|", term):
            return term
        v = self.fresh(base)
        self.constraints.append(f"(= {v} {term})")
        return v

    def in_domain(self, v: str, ty) -> None:
        n = self.e.domain
        if isinstance(ty, IntTy) and ty.width == 1:
            n = min(n, 2)
        self.constraints.append(f"(and (<= 0 {v}) (< {v} {n}))")

    def op(self, operand) -> str:
        if isinstance(operand, Const):
            return str(operand.value) if operand.value >= 0 else f"(- {-operand.value})"
        if isinstance(operand, Null):
            return "0"
        if isinstance(operand, Global):
            loc = self.e.locs.loc(f"@{operand.name}")
            if loc is None:
                raise ChcError(f"address of function @{operand.name} is not supported")
            return str(loc)
        if operand.name not in self.env:
            raise ChcError(f"%{operand.name} used before definition in @{self.fn.name}")
        return self.env[operand.name]

    def pts(self, operand) -> list[int]:
        return sorted(self.e.pts.of(self.fn.name, operand))

    def slot(self, comp) -> Optional[int]:
        return self.e.index.get(comp)

    def error(self, *extra: str) -> None:
        self.e.system.clauses.append(Clause(None, tuple(self.atoms),
                                            tuple(self.constraints) + extra, tuple(self.vars)))

    # -- block entry

    def start(self) -> None:
        ng = len(self.e.index)
        args = []
        if not self.is_root:
            self.params0 = [self.fresh(f"p0.{p.name}") for p in self.fn.params]
            self.g0 = [self.fresh(f"g0.{k}") for k in range(ng)]
            args += self.params0 + self.g0
        for name in self.heads[self.blk.label]:
            v = self.fresh(name)
            self.env[name] = v
            args.append(v)
        self.g = [self.fresh(f"g.{k}") for k in range(ng)]
        args += self.g
        self.atoms.append((self.e.block_pred(self.fn.name, self.blk.label), tuple(args)))
        for p, v in zip(self.fn.params, self.params0):
            self.env[p.name] = v

    def start_initial(self) -> None:
        ng = len(self.e.index)
        self.g = ["0"] * ng
        for comp, k in self.e.index.items():
            if comp[0] == "cell" and self.e.locs.site_of(comp[1]).kind == "global":
                v = self.fresh("init")
                self._havoc_value(v, comp[1])
                self.g[k] = v

    def _havoc_value(self, v: str, leaf: int) -> None:
        ty = self.e.locs.leaves[leaf]
        if isinstance(ty, AddrTy):
            child = self.e.locs.children.get(leaf)
            if child is not None:
                self.constraints.append(f"(or (= {v} 0) (= {v} {self.e.locs.loc(child)}))")
            else:
                self.constraints.append(f"(= {v} 0)")
        else:
            self.in_domain(v, ty)

    def havoc_site(self, site: str, path: tuple = (), guard: Optional[str] = None) -> None:
        """Fresh contents for a site's cells and its children's cells."""
        todo = [(site, path)]
        while todo:
            s, p = todo.pop()
            for leaf in self.e.locs.site_leaves(s, p):
                if leaf in self.e.locs.children:
                    todo.append((self.e.locs.children[leaf], ()))
                k = self.slot(("cell", leaf))
                if k is None:
                    continue
                v = self.fresh("hv")
                self._havoc_value(v, leaf)
                self.g[k] = v if guard is None else self.define(f"(ite {guard} {v} {self.g[k]})")

    # -- edges

    def emit_edge(self, target: str, src: Optional[str]) -> None:
        blk = self.fn.block(target)
        phi_vals = {}
        for phi in blk.phis():
            for pred, op in phi.incoming:
                if pred == src:
                    phi_vals[phi.result] = self.op(op)
        args = []
        if not self.is_root:
            args += self.params0 + self.g0
        for name in self.heads[target]:
            if name in phi_vals:
                args.append(phi_vals[name])
            elif name in self.env:
                args.append(self.env[name])
            else:
                raise ChcError(f"%{name} live into ^{target} but undefined")
        args += self.g
        self.e.system.clauses.append(Clause(
            (self.e.block_pred(self.fn.name, target), tuple(args)),
            tuple(self.atoms), tuple(self.constraints), tuple(self.vars)))

    def emit_with(self, cond: str, fn) -> None:
        saved = list(self.constraints)
        self.constraints.append(cond)
        fn()
        self.constraints = saved

    # -- instructions

    def run(self) -> None:
        self.start()
        for inst in self.blk.instrs:
            if isinstance(inst, Phi):
                continue
            if not self.step(inst):
                return

    def step(self, inst) -> bool:
        name = inst.result
        ty = inst.result_type()
        if isinstance(inst, Alloca):
            loc = self.e.locs.loc(site_name(self.fn.name, name))
            self.env[name] = str(loc)
            for leaf in self.e.locs.site_leaves(site_name(self.fn.name, name)):
                k = self.slot(("cell", leaf))
                if k is not None:
                    self.g[k] = "0"
            return True
        if isinstance(inst, (Nondet, AsmOp)) or (isinstance(inst, Call)
                                                 and inst.callee not in self.e.functions):
            if isinstance(inst, Call):
                self._writeonly(inst)
            if name is None or ty is None:
                return True
            v = self.fresh(name)
            self.env[name] = v
            if isinstance(ty, AddrTy):
                site = site_name(self.fn.name, name)
                loc = self.e.locs.loc(site)
                self.constraints.append(f"(or (= {v} 0) (= {v} {loc}))")
                if self.e.locs.sites[site].kind != "token":
                    self.havoc_site(site)
            elif isinstance(ty, IntTy):
                self.in_domain(v, ty)
            return True
        if isinstance(inst, Call):
            return self._call(inst)
        if isinstance(inst, Load):
            p = self.op(inst.addr)
            if not self._deref_checks(p, inst.addr):
                return False
            cands = [l for l in self.pts(inst.addr) if l != NULL_LOC and not self.e.locs.is_token(l)]
            if not cands:
                self.constraints.append("false")
                return False
            term = None
            for l in reversed(cands):
                k = self.slot(("cell", l))
                if k is None:
                    # untracked (collapsed) cell: any value it may hold
                    val = self.fresh("opaque")
                    if isinstance(inst.ty, AddrTy):
                        alts = " ".join(f"(= {val} {c})" for c in sorted(self.e.pts.contents.get(l, {0})))
                        self.constraints.append(f"(or {alts} false)")
                else:
                    val = self.g[k]
                term = val if term is None else f"(ite (= {p} {l}) {val} {term})"
            self.env[name] = self.define(term, name)
            return True
        if isinstance(inst, Store):
            p, v = self.op(inst.addr), self.op(inst.value)
            if not self._deref_checks(p, inst.addr):
                return False
            if isinstance(inst.ty, AddrTy):
                for l in self.pts(inst.value):
                    if self.e.locs.is_token(l):
                        self.emit_with(f"(= {v} {l})", self.error)
                        self.constraints.append(f"(not (= {v} {l}))")
            cands = [l for l in self.pts(inst.addr) if l != NULL_LOC and not self.e.locs.is_token(l)]
            for l in cands:
                k = self.slot(("cell", l))
                if k is not None:
                    self.g[k] = v if len(cands) == 1 else self.define(f"(ite (= {p} {l}) {v} {self.g[k]})")
            return True
        if isinstance(inst, FieldAddr):
            p = self.op(inst.base)
            for l in self.pts(inst.base):
                if self.e.locs.is_token(l):
                    self.emit_with(f"(= {p} {l})", self.error)
                    self.constraints.append(f"(not (= {p} {l}))")
            term = "0"
            for l in self.pts(inst.base):
                if l == NULL_LOC or self.e.locs.is_token(l):
                    continue
                site, path = self.e.locs.parent[l]
                target = self.e.locs.loc(site, path + tuple(inst.path))
                if target is not None:
                    term = f"(ite (= {p} {l}) {target} {term})"
            self.env[name] = self.define(term, name)
            return True
        if isinstance(inst, (Br, CondBr, Switch)):
            self._branch(inst)
            return False
        if isinstance(inst, Ret):
            if not self.is_root:
                val = "0" if inst.value is None else self.op(inst.value)
                pred = self.e.summary_pred(self.fn.name)
                self.e.system.clauses.append(Clause(
                    (pred, tuple(self.params0 + self.g0 + [val] + self.g)),
                    tuple(self.atoms), tuple(self.constraints), tuple(self.vars)))
            return False
        if isinstance(inst, BinOp):
            a, b = self.op(inst.lhs), self.op(inst.rhs)
            if inst.op in ("add", "sub", "mul"):
                term = f"({ {'add': '+', 'sub': '-', 'mul': '*'}[inst.op] } {a} {b})"
            elif isinstance(inst.ty, IntTy) and inst.ty.width == 1:
                term = {"and": f"(ite (and (= {a} 1) (= {b} 1)) 1 0)",
                        "or": f"(ite (or (= {a} 1) (= {b} 1)) 1 0)",
                        "xor": f"(ite (= {a} {b}) 0 1)"}[inst.op]
            else:
                self.env[name] = self.fresh(name)
                return True
            self.env[name] = self.define(term, name)
            return True
        if isinstance(inst, Cmp):
            a, b = self.op(inst.lhs), self.op(inst.rhs)
            rel = {"eq": f"(= {a} {b})", "ne": f"(not (= {a} {b}))", "slt": f"(< {a} {b})",
                   "sle": f"(<= {a} {b})", "sgt": f"(> {a} {b})", "sge": f"(>= {a} {b})"}[inst.op]
            self.env[name] = self.define(f"(ite {rel} 1 0)", name)
            return True
        if isinstance(inst, Cast):
            self.env[name] = self.op(inst.value)
            return True
        if isinstance(inst, Assert):
            c = self.op(inst.cond)
            self.emit_with(f"(= {c} 0)", self.error)
            self.constraints.append(f"(not (= {c} 0))")
            return True
        if isinstance(inst, Assume):
            self.constraints.append(f"(not (= {self.op(inst.cond)} 0))")
            return True
        if isinstance(inst, (RcInc, RcDec)):
            self._rc(inst)
            return True
        if isinstance(inst, RcDelta):
            k = self.slot(("delta", inst.refclass))
            self.env[name] = self.g[k] if k is not None else "0"
            return True
        raise ChcError(f"unsupported instruction {inst.opcode}")

    def _deref_checks(self, p: str, operand) -> bool:
        self.constraints.append(f"(not (= {p} 0))")
        for l in self.pts(operand):
            if self.e.locs.is_token(l):
                self.emit_with(f"(= {p} {l})", self.error)
                self.constraints.append(f"(not (= {p} {l}))")
        return True

    def _writeonly(self, inst: Call) -> None:
        for j, a in enumerate(inst.args):
            if WRITEONLY not in inst.attrs_of(j):
                continue
            p = self.op(a)
            for l in self.pts(a):
                if l == NULL_LOC or self.e.locs.is_token(l):
                    continue
                site, path = self.e.locs.parent[l]
                self.havoc_site(site, path, guard=f"(= {p} {l})")

    def _rc(self, inst) -> None:
        o = self.op(inst.obj)
        d = 1 if isinstance(inst, RcInc) else -1
        for l in self.pts(inst.obj):
            if self.e.locs.is_token(l):
                self.emit_with(f"(= {o} {l})", self.error)
                self.constraints.append(f"(not (= {o} {l}))")
        k = self.slot(("delta", inst.refclass))
        if k is not None:
            self.g[k] = self.define(f"(+ {self.g[k]} (ite (= {o} 0) 0 {d}))", "d")
        checks = []
        for l in self.pts(inst.obj):
            k = self.slot(("ctr", inst.refclass, l))
            if k is None:
                continue
            self.g[k] = self.define(f"(+ {self.g[k]} (ite (= {o} {l}) {d} 0))", "c")
            if d < 0 and self.e.underflow:
                checks.append(f"(and (= {o} {l}) (< {self.g[k]} 0))")
        if checks:
            cond = checks[0] if len(checks) == 1 else f"(or {' '.join(checks)})"
            self.emit_with(cond, self.error)
            self.constraints.append(f"(not {cond})")

    def _call(self, inst: Call) -> bool:
        callee = self.e.functions[inst.callee]
        args = [self.op(a) for a in inst.args]
        self.e.system.clauses.append(Clause(
            (self.e.block_pred(callee.name, callee.entry.label),
             tuple(args + list(self.g) + list(self.g))),
            tuple(self.atoms), tuple(self.constraints), tuple(self.vars)))
        ret = self.fresh(inst.result or "ret")
        new_g = [self.fresh(f"g'.{k}") for k in range(len(self.g))]
        self.atoms.append((self.e.summary_pred(callee.name), tuple(args + self.g + [ret] + new_g)))
        self.g = new_g
        if inst.result is not None:
            self.env[inst.result] = ret
        return True

    def _branch(self, inst) -> None:
        src = self.blk.label
        if isinstance(inst, Br):
            self.emit_edge(inst.target, src)
        elif isinstance(inst, CondBr):
            c = self.op(inst.cond)
            self.emit_with(f"(not (= {c} 0))", lambda: self.emit_edge(inst.then_target, src))
            self.emit_with(f"(= {c} 0)", lambda: self.emit_edge(inst.else_target, src))
        else:
            v = self.op(inst.value)
            for case, tgt in inst.cases:
                self.emit_with(f"(= {v} {case})", lambda t=tgt: self.emit_edge(t, src))
            if inst.cases:
                ne = " ".join(f"(not (= {v} {c}))" for c, _ in inst.cases)
                self.emit_with(f"(and {ne})", lambda: self.emit_edge(inst.default, src))
            else:
                self.emit_edge(inst.default, src)


def encode_chc(module: KirModule, inline: bool = True, root: str = "main",
               domain: int = 2, underflow_check: bool = True) -> ChcSystem:
    """Horn clauses whose error query is satisfiable iff a bug path exists
    in the abstract semantics."""
    if module.function(root) is None:
        raise ChcError(f"no @{root} to encode")
    if inline:
        module = inline_all(module, root)
    functions = _reachable_functions(module, root)
    return _Encoder(module, functions, root, domain, underflow_check).encode()


def emit_smtlib(system: ChcSystem) -> str:
    """The system as an SMT-LIB2 script in the HORN logic."""
    out = ["(set-logic HORN)"]
    for note in system.notes:
        out.append(f"; note: {note}")
    for k, comp in enumerate(system.components):
        out.append(f"; g.{k} = {comp}")
    for name, arity in system.predicates.items():
        out.append(f"(declare-fun {name} ({' '.join(['Int'] * arity)}) Bool)")
    out.append("(declare-fun Err () Bool)")
    for cl in system.clauses:
        body = [f"({p} {' '.join(args)})" if args else p for p, args in cl.atoms]
        body += list(cl.constraints)
        if not body:
            lhs = "true"
        elif len(body) == 1:
            lhs = body[0]
        else:
            lhs = "(and " + " ".join(body) + ")"
        if cl.head is None:
            head = "Err"
        else:
            p, args = cl.head
            head = f"({p} {' '.join(args)})" if args else p
        clause = f"(=> {lhs} {head})"
        if cl.variables:
            decls = " ".join(f"({v} Int)" for v in cl.variables)
            clause = f"(forall ({decls}) {clause})"
        out.append(f"(assert {clause})")
    out.append("(assert (=> Err false))")
    out.append("(check-sat)")
    return "\n".join(out) + "\n"


def check_chc(module: KirModule, solver_cmd: Optional[str] = None, timeout: float = 300.0,
              domain: int = 2, underflow_check: bool = True, inline: bool = True) -> Verdict:
    """Encode, emit and solve; Unknown when no solver is available."""
    cmd = resolve_solver_cmd(solver_cmd)
    try:
        system = encode_chc(module, inline, domain=domain, underflow_check=underflow_check)
    except ChcError as err:
        return Unknown(f"encoding failed: {err}")
    notes = tuple(system.notes)
    if cmd is None:
        return Unknown("no Horn solver configured", notes)
    result: SolverResult = run_external_solver(emit_smtlib(system), cmd, timeout)
    if result.status == "unsat":
        return Bug("error state reachable (solver answered unsat)", notes=notes)
    if result.status == "sat":
        return Safe(notes=notes)
    if result.status == "timeout":
        return Timeout(timeout, notes)
    return Unknown(f"solver error: {result.output.strip()[:200]}", notes)
