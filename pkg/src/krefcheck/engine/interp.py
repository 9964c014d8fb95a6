"""Explicit-state semantics of KIR and the enumeration/BMC explorers.

Scalars are Python ints, the null address is ``None`` and other addresses
are :class:`Addr` values naming an object handle and a field path. Objects
come in four kinds: ``alloca`` (reading an unwritten cell is an error),
``havoc`` (unwritten cells are chosen lazily from the nondet domain),
``global`` (treated like havoc) and ``token`` (opaque, never dereferenced).
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional, Sequence

from ..kir.cfg import back_edges, liveness
from ..kir.ir import (
    AddrTy, AggRef, Alloca, AsmOp, Assert, Assume, BinOp, Br, Call, Cast, Cmp,
    CondBr, Const, FieldAddr, Global, IntTy, KirFunction, KirModule, KirType,
    Load, Nondet, Null, Phi, RcDec, RcDelta, RcInc, Ret, Store, Switch, Value,
    WRITEONLY, is_token_ptr,
)
from .verdict import Bug, Safe, Timeout, TraceStep, Unknown, Verdict

DEFAULT_DOMAIN = 2
DEFAULT_BUDGET = 200_000


class Addr(NamedTuple):
    handle: int
    path: tuple = ()


class EngineError(Exception):
    """The program uses a construct the engine cannot execute."""


class _Stuck(Exception):
    """Execution cannot continue on this path for a semantic reason."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind
        self.message = message


@dataclass
class Frame:
    fn: str
    block: str
    idx: int
    env: dict
    prev: Optional[str] = None
    ret_to: Optional[str] = None
    call_loc: Optional[tuple] = None

    def copy(self) -> "Frame":
        return Frame(self.fn, self.block, self.idx, dict(self.env), self.prev,
                     self.ret_to, self.call_loc)


@dataclass
class State:
    frames: list
    objects: dict            # handle -> (kind, type or None)
    cells: dict              # (handle, path) -> value
    lazy: set                # (handle, path) regions whose cells are havoc
    ledger: dict             # refclass -> {Addr: delta}
    next_handle: int
    loops: dict = field(default_factory=dict)
    choices: tuple = ()
    status: str = "run"      # run | done | bug | unknown
    message: str = ""
    ret: object = None

    def copy(self) -> "State":
        return State([f.copy() for f in self.frames], dict(self.objects), dict(self.cells),
                     set(self.lazy), {c: dict(m) for c, m in self.ledger.items()},
                     self.next_handle, dict(self.loops), self.choices,
                     self.status, self.message, self.ret)

    def delta(self, refclass: str) -> int:
        return sum(self.ledger.get(refclass, {}).values())

    def deltas(self) -> dict[str, int]:
        return {c: sum(m.values()) for c, m in sorted(self.ledger.items())}


@dataclass
class Config:
    domain: int = DEFAULT_DOMAIN
    budget: int = DEFAULT_BUDGET
    underflow_check: bool = True
    bound: Optional[int] = None      # None: unbounded enumeration


def _wrap(value: int, ty: KirType) -> int:
    if not isinstance(ty, IntTy):
        return value
    if ty.width == 1:
        return value & 1
    mask = (1 << ty.width) - 1
    value &= mask
    return value - (1 << ty.width) if value >> (ty.width - 1) else value


class Program:
    """A module prepared for execution starting at one function."""

    def __init__(self, module: KirModule, entry: str = "main", config: Optional[Config] = None):
        self.module = module
        self.config = config or Config()
        self.funcs = module.function_map()
        if entry not in self.funcs:
            raise EngineError(f"no function @{entry} to execute")
        self.entry = entry
        self.blocks = {f.name: f.block_map() for f in module.functions}
        self.first_non_phi = {}
        self.live_entry = {}
        self.live_after_call = {}
        self.back = {}
        self.headers = {}
        for fn in module.functions:
            lv = liveness(fn)
            self.back[fn.name] = back_edges(fn)
            self.headers[fn.name] = {dst for _, dst in self.back[fn.name]}
            for blk in fn.blocks:
                k = 0
                while k < len(blk.instrs) and isinstance(blk.instrs[k], Phi):
                    k += 1
                self.first_non_phi[(fn.name, blk.label)] = k
                phis = frozenset(p.result for p in blk.phis())
                self.live_entry[(fn.name, blk.label)] = tuple(sorted(lv.live_in[blk.label] | phis))
            for loc, inst in fn.instructions():
                if isinstance(inst, Call):
                    live = lv.after(loc, fn) - {inst.result}
                    self.live_after_call[(fn.name, loc)] = tuple(sorted(live))
        self.global_handles = {g.name: i + 1 for i, g in enumerate(module.globals)}

    # -- states

    def initial_state(self, args: Sequence = ()) -> State:
        """State at the entry of the entry function.

        ``args`` items are ints, None, Addr values, or the strings ``fresh``
        (a new havoc object of the parameter's pointee type) and ``null``.
        """
        objects = {h: ("global", g.ty) for g, h in zip(self.module.globals,
                                                        self.global_handles.values())}
        st = State([], objects, {}, set(), {}, len(objects) + 1)
        fn = self.funcs[self.entry]
        if len(args) != len(fn.params):
            raise EngineError(f"@{fn.name} takes {len(fn.params)} arguments")
        env = {}
        for p, a in zip(fn.params, args):
            if a == "fresh":
                a = self._new_object(st, "havoc", p.ty.pointee if isinstance(p.ty, AddrTy) else None)
            elif a == "null":
                a = None
            env[p.name] = a
        st.frames.append(Frame(fn.name, fn.entry.label, 0, env))
        return st

    def _new_object(self, st: State, kind: str, ty) -> Addr:
        h = st.next_handle
        st.next_handle += 1
        st.objects[h] = (kind, ty)
        return Addr(h, ())

    def instr_id(self, st: State) -> str:
        fr = st.frames[-1]
        return f"{fr.fn}:^{fr.block}#{fr.idx}"

    # -- evaluation helpers

    def _eval(self, st: State, op):
        if isinstance(op, Const):
            return op.value
        if isinstance(op, Null):
            return None
        if isinstance(op, Global):
            if op.name in self.global_handles:
                return Addr(self.global_handles[op.name], ())
            raise _Stuck("unknown", f"address of function @{op.name} is not supported")
        env = st.frames[-1].env
        if op.name not in env:
            raise _Stuck("unknown", f"%{op.name} read before definition")
        return env[op.name]

    def _is_token(self, st: State, v) -> bool:
        return isinstance(v, Addr) and st.objects[v.handle][0] == "token"

    def _scalar_choices(self, st: State, ty: KirType) -> list:
        """Values a nondet of type ``ty`` may take; fresh objects are created
        per choice by the caller through :meth:`_materialize`."""
        if isinstance(ty, IntTy):
            n = min(self.config.domain, 2) if ty.width == 1 else self.config.domain
            return list(range(n))
        if isinstance(ty, AddrTy):
            return [None, "token" if is_token_ptr(ty) else "fresh"]
        raise EngineError(f"cannot choose a value of type {ty}")

    def _materialize(self, st: State, choice, ty: KirType):
        if choice == "fresh":
            return self._new_object(st, "havoc", ty.pointee)
        if choice == "token":
            return self._new_object(st, "token", None)
        return choice

    def _branch(self, st: State, ty: KirType, apply) -> list:
        """One successor per nondet value; ``apply(state, value)`` finishes each."""
        options = self._scalar_choices(st, ty)
        out = []
        for i, choice in enumerate(options):
            s = st.copy() if i < len(options) - 1 else st
            if len(options) > 1:
                s.choices = s.choices + (i,)
            apply(s, self._materialize(s, choice, ty))
            out.append(s)
        return out

    # -- control flow

    def _goto(self, st: State, target: str) -> bool:
        """Move the top frame to ``target``; False when a loop bound prunes."""
        fr = st.frames[-1]
        src = fr.block
        if self.config.bound is not None:
            key = (len(st.frames), fr.fn, target)
            if (src, target) in self.back[fr.fn]:
                cnt = st.loops.get(key, 0) + 1
                if cnt > self.config.bound:
                    return False
                st.loops[key] = cnt
            elif target in self.headers[fr.fn]:
                st.loops[key] = 0
        fr.prev, fr.block, fr.idx = src, target, 0
        blk = self.blocks[fr.fn][target]
        k = self.first_non_phi[(fr.fn, target)]
        if k:
            vals = {}
            for phi in blk.instrs[:k]:
                for pred, op in phi.incoming:
                    if pred == src:
                        vals[phi.result] = self._eval(st, op)
                        break
                else:
                    raise _Stuck("unknown", f"phi %{phi.result} has no entry for ^{src}")
            fr.env.update(vals)
            fr.idx = k
        return True

    def _return(self, st: State, value) -> None:
        done = st.frames.pop()
        if self.config.bound is not None:
            depth = len(st.frames) + 1
            st.loops = {k: v for k, v in st.loops.items() if k[0] < depth}
        if not st.frames:
            st.status, st.ret = "done", value
            return
        caller = st.frames[-1]
        if done.ret_to is not None:
            caller.env[done.ret_to] = value
        caller.idx += 1

    def _rc(self, st: State, refclass: str, obj, delta: int) -> None:
        if obj is None:
            return
        if not isinstance(obj, Addr):
            raise _Stuck("unknown", f"rc operation on non-address {obj!r}")
        if self._is_token(st, obj):
            raise _Stuck("bug", f"{refclass} refcount operation on a device-link token")
        led = st.ledger.setdefault(refclass, {})
        led[obj] = led.get(obj, 0) + delta
        if delta < 0 and self.config.underflow_check and led[obj] < 0:
            raise _Stuck("bug", f"{refclass} refcount underflow on object #{obj.handle}"
                                f"{'.' + '.'.join(obj.path) if obj.path else ''}")
        if led[obj] == 0:
            del led[obj]

    def _load_cell(self, st: State, addr: Addr, ty: KirType, finish) -> list:
        key = (addr.handle, addr.path)
        if key in st.cells:
            finish(st, st.cells[key])
            return [st]
        kind = st.objects[addr.handle][0]
        lazy = kind in ("havoc", "global") or any(
            (addr.handle, addr.path[:k]) in st.lazy for k in range(len(addr.path) + 1))
        if not lazy:
            raise _Stuck("unknown", f"read of never-written memory #{addr.handle}"
                                    f"{'.' + '.'.join(addr.path) if addr.path else ''}")

        def apply(s, v):
            s.cells[key] = v
            finish(s, v)
        return self._branch(st, ty, apply)

    # -- the step function

    def successors(self, st: State) -> list:
        """Execute one instruction of ``st`` in place; return the successors.

        ``st`` itself is reused as one of the successors. Pruned paths
        (assume false, null dereference, loop bound) yield no successor.
        """
        fr = st.frames[-1]
        inst = self.blocks[fr.fn][fr.block].instrs[fr.idx]
        try:
            return self._exec(st, fr, inst)
        except _Stuck as stuck:
            st.status = stuck.kind
            st.message = stuck.message
            return [st]

    def _exec(self, st: State, fr: Frame, inst) -> list:
        ev = lambda op: self._eval(st, op)  # noqa: E731

        def set_and_next(s, v, name=inst.result):
            if name is not None:
                s.frames[-1].env[name] = v
            s.frames[-1].idx += 1

        if isinstance(inst, Alloca):
            set_and_next(st, self._new_object(st, "alloca", inst.ty))
            return [st]
        if isinstance(inst, Load):
            addr = ev(inst.addr)
            if addr is None:
                return []
            if not isinstance(addr, Addr):
                raise _Stuck("unknown", f"load from non-address {addr!r}")
            if self._is_token(st, addr):
                raise _Stuck("bug", "device-link token dereferenced")
            if isinstance(inst.ty, AggRef):
                raise EngineError("aggregate-typed loads are not supported")
            return self._load_cell(st, addr, inst.ty, set_and_next)
        if isinstance(inst, Store):
            addr, val = ev(inst.addr), ev(inst.value)
            if addr is None:
                return []
            if not isinstance(addr, Addr):
                raise _Stuck("unknown", f"store to non-address {addr!r}")
            if self._is_token(st, addr):
                raise _Stuck("bug", "device-link token dereferenced")
            if self._is_token(st, val):
                raise _Stuck("bug", "device-link token stored to memory; it is only valid for null checks")
            if isinstance(inst.ty, IntTy):
                val = _wrap(val, inst.ty)
            st.cells[(addr.handle, addr.path)] = val
            set_and_next(st, None)
            return [st]
        if isinstance(inst, FieldAddr):
            base = ev(inst.base)
            if base is not None:
                if not isinstance(base, Addr):
                    raise _Stuck("unknown", f"fieldaddr on non-address {base!r}")
                if self._is_token(st, base):
                    raise _Stuck("bug", "device-link token dereferenced")
                base = Addr(base.handle, base.path + tuple(inst.path))
            set_and_next(st, base)
            return [st]
        if isinstance(inst, Call):
            args = [ev(a) for a in inst.args]
            callee = self.funcs.get(inst.callee)
            if callee is not None:
                if len(args) != len(callee.params):
                    raise EngineError(f"arity mismatch calling @{callee.name}")
                env = {p.name: a for p, a in zip(callee.params, args)}
                new = Frame(callee.name, callee.entry.label, 0, env, None,
                            inst.result, (fr.block, fr.idx))
                st.frames.append(new)
                return [st]
            for j, a in enumerate(args):
                if WRITEONLY in inst.attrs_of(j) and isinstance(a, Addr):
                    if self._is_token(st, a):
                        raise _Stuck("bug", "device-link token dereferenced")
                    st.cells = {k: v for k, v in st.cells.items()
                                if not (k[0] == a.handle and k[1][:len(a.path)] == a.path)}
                    st.lazy.add((a.handle, a.path))
            if inst.result is None:
                set_and_next(st, None)
                return [st]
            return self._branch(st, inst.ty, set_and_next)
        if isinstance(inst, Br):
            return [st] if self._goto(st, inst.target) else []
        if isinstance(inst, CondBr):
            c = ev(inst.cond)
            return [st] if self._goto(st, inst.then_target if c else inst.else_target) else []
        if isinstance(inst, Switch):
            v = ev(inst.value)
            target = inst.default
            for case, tgt in inst.cases:
                if case == v:
                    target = tgt
                    break
            return [st] if self._goto(st, target) else []
        if isinstance(inst, Ret):
            self._return(st, None if inst.value is None else ev(inst.value))
            return [st]
        if isinstance(inst, BinOp):
            a, b = ev(inst.lhs), ev(inst.rhs)
            if not isinstance(a, int) or not isinstance(b, int):
                raise _Stuck("unknown", f"{inst.op} on non-integers")
            r = {"add": a + b, "sub": a - b, "mul": a * b,
                 "and": a & b, "or": a | b, "xor": a ^ b}[inst.op]
            set_and_next(st, _wrap(r, inst.ty))
            return [st]
        if isinstance(inst, Cmp):
            a, b = ev(inst.lhs), ev(inst.rhs)
            if inst.op in ("eq", "ne"):
                r = (a == b) if inst.op == "eq" else (a != b)
            else:
                if not isinstance(a, int) or not isinstance(b, int):
                    raise _Stuck("unknown", "ordered comparison of addresses")
                r = {"slt": a < b, "sle": a <= b, "sgt": a > b, "sge": a >= b}[inst.op]
            set_and_next(st, int(r))
            return [st]
        if isinstance(inst, Cast):
            v = ev(inst.value)
            if isinstance(inst.ty, IntTy):
                if v is None:
                    v = 0
                elif isinstance(v, Addr):
                    v = v.handle
                v = _wrap(v, inst.ty)
            elif isinstance(inst.ty, AddrTy):
                if isinstance(v, int):
                    if v != 0:
                        raise _Stuck("unknown", "integer-to-address cast of a nonzero value")
                    v = None
            set_and_next(st, v)
            return [st]
        if isinstance(inst, Nondet):
            return self._branch(st, inst.ty, set_and_next)
        if isinstance(inst, Assert):
            if not ev(inst.cond):
                raise _Stuck("bug", f"assertion failed: {inst.cond} is false")
            set_and_next(st, None)
            return [st]
        if isinstance(inst, Assume):
            if not ev(inst.cond):
                return []
            set_and_next(st, None)
            return [st]
        if isinstance(inst, (RcInc, RcDec)):
            self._rc(st, inst.refclass, ev(inst.obj), 1 if isinstance(inst, RcInc) else -1)
            set_and_next(st, None)
            return [st]
        if isinstance(inst, RcDelta):
            set_and_next(st, st.delta(inst.refclass))
            return [st]
        if isinstance(inst, AsmOp):
            if inst.result is None:
                set_and_next(st, None)
                return [st]
            return self._branch(st, inst.ty, set_and_next)
        if isinstance(inst, Phi):
            raise EngineError("phi reached outside block entry")
        raise EngineError(f"unsupported instruction {inst.opcode}")

    # -- canonical state summaries

    def canonical(self, st: State, with_loops: bool = True) -> tuple:
        """Hashable summary of ``st`` up to renaming of object handles.

        Only live SSA values are included. Objects unreachable from live
        values and globals and absent from the ledger are dropped.
        """
        names: dict[int, int] = {}
        order: list[int] = []

        def h(handle: int) -> int:
            if handle not in names:
                names[handle] = len(names)
                order.append(handle)
            return names[handle]

        def val(v):
            if isinstance(v, Addr):
                return ("A", h(v.handle), v.path)
            return v

        for handle in self.global_handles.values():
            h(handle)
        frames = []
        for k, fr in enumerate(st.frames):
            top = k == len(st.frames) - 1
            if top:
                live = self.live_entry[(fr.fn, fr.block)] if fr.idx == self.first_non_phi[(fr.fn, fr.block)] \
                    else tuple(sorted(fr.env))
                pos = (fr.block, fr.idx)
            else:
                live = self.live_after_call[(fr.fn, (fr.block, fr.idx))]
                pos = (fr.block, fr.idx, fr.ret_to)
            frames.append((fr.fn, pos, tuple((n, val(fr.env[n])) for n in live if n in fr.env)))
        by_handle: dict[int, list] = {}
        for (handle, path), v in st.cells.items():
            by_handle.setdefault(handle, []).append((path, v))
        cells, lazy = [], []
        ledger_addrs = sorted({a for m in st.ledger.values() for a in m})
        i = 0
        while True:
            while i < len(order):
                handle = order[i]
                i += 1
                for path, v in sorted(by_handle.get(handle, ()), key=lambda pv: pv[0]):
                    cells.append((names[handle], path, val(v)))
                for (lh, lp) in sorted(st.lazy):
                    if lh == handle:
                        lazy.append((names[handle], lp))
            pending = [a for a in ledger_addrs if a.handle not in names]
            if not pending:
                break
            h(pending[0].handle)
        objs = tuple((names[x], st.objects[x][0], str(st.objects[x][1])) for x in order)
        ledger = tuple(sorted((c, tuple(sorted((val(a), d) for a, d in m.items())))
                              for c, m in st.ledger.items() if m))
        loops = tuple(sorted(st.loops.items())) if with_loops else ()
        return (tuple(frames), objs, tuple(sorted(cells)), tuple(sorted(lazy)), ledger, loops)

    def digest(self, st: State) -> str:
        text = repr(self.canonical(st, with_loops=False)).encode()
        return f"{zlib.crc32(text):08x}"


# ----------------------------------------------------------------- drivers

@dataclass
class _Stats:
    steps: int = 0
    pruned_by_bound: bool = False
    unknown: Optional[str] = None


def _explore(prog: Program, start: State) -> tuple[Verdict, _Stats]:
    stats = _Stats()
    seen: set = set()
    stack = [start]
    budget = prog.config.budget
    while stack:
        st = stack.pop()
        while True:
            if st.status == "bug":
                return _make_bug(prog, st), stats
            if st.status == "unknown":
                stats.unknown = stats.unknown or st.message
                break
            if st.status == "done":
                break
            fr = st.frames[-1]
            if fr.idx == prog.first_non_phi[(fr.fn, fr.block)]:
                key = prog.canonical(st)
                if key in seen:
                    break
                seen.add(key)
            stats.steps += 1
            if stats.steps > budget:
                return Timeout(budget), stats
            succ = prog.successors(st)
            if not succ:
                if prog.config.bound is not None and _at_branch(prog, st):
                    stats.pruned_by_bound = True
                break
            # explore the first successor first; push the rest in reverse
            for s in reversed(succ[1:]):
                stack.append(s)
            st = succ[0]
    if stats.unknown is not None:
        return Unknown(stats.unknown), stats
    return Safe(bounded=prog.config.bound is not None), stats


def _at_branch(prog: Program, st: State) -> bool:
    # only the loop bound prunes at a terminator
    fr = st.frames[-1]
    inst = prog.blocks[fr.fn][fr.block].instrs[fr.idx]
    return isinstance(inst, (Br, CondBr, Switch))


def _make_bug(prog: Program, st: State) -> Bug:
    trace = replay(prog, st.choices)
    return Bug(st.message, tuple(trace), st.choices)


def replay(prog: Program, choices: Iterable[int], args: Sequence = ()) -> list[TraceStep]:
    """Re-execute the path selected by ``choices``; one entry per instruction."""
    choices = list(choices)
    st = prog.initial_state(args)
    trace: list[TraceStep] = []
    k = 0
    while st.status == "run":
        iid = prog.instr_id(st)
        succ = prog.successors(st)
        if not succ:
            raise EngineError("replayed path was pruned")
        if len(succ) > 1:
            st = succ[choices[k]]
            k += 1
        else:
            st = succ[0]
        trace.append(TraceStep(iid, prog.digest(st)))
    return trace


def replay_state(prog: Program, choices: Iterable[int], args: Sequence = ()) -> tuple[State, list[str]]:
    """Final state of a replayed path and the executed instruction ids."""
    choices = list(choices)
    st = prog.initial_state(args)
    ids, k = [], 0
    while st.status == "run":
        ids.append(prog.instr_id(st))
        succ = prog.successors(st)
        if not succ:
            raise EngineError("replayed path was pruned")
        st = succ[choices[k]] if len(succ) > 1 else succ[0]
        k += len(succ) > 1
    return st, ids


def enumerate_paths(module: KirModule, entry: str = "main", domain: int = DEFAULT_DOMAIN,
                    budget: int = DEFAULT_BUDGET, underflow_check: bool = True) -> Verdict:
    """Exhaustive exploration of every nondet outcome."""
    prog = Program(module, entry, Config(domain, budget, underflow_check, None))
    verdict, _ = _explore(prog, prog.initial_state())
    return verdict


def bmc(module: KirModule, bound: int, entry: str = "main", domain: int = DEFAULT_DOMAIN,
        budget: int = DEFAULT_BUDGET, underflow_check: bool = True) -> Verdict:
    """Like :func:`enumerate_paths` but each loop back-edge is taken at most
    ``bound`` times per entry into the loop."""
    if bound < 1:
        raise ValueError("unroll bound must be at least 1")
    prog = Program(module, entry, Config(domain, budget, underflow_check, bound))
    verdict, _ = _explore(prog, prog.initial_state())
    return verdict


@dataclass(frozen=True)
class FinalState:
    status: str
    ret: object
    ledger: dict             # (refclass, Addr) -> delta
    args: tuple
    message: str = ""
    initial_handles: frozenset = frozenset()


def enumerate_final_states(module: KirModule, entry: str, args: Sequence = (),
                           domain: int = DEFAULT_DOMAIN, budget: int = DEFAULT_BUDGET,
                           underflow_check: bool = False) -> list[FinalState]:
    """Every terminal state of ``entry`` (no memoization, no loop bound)."""
    prog = Program(module, entry, Config(domain, budget, underflow_check, None))
    start = prog.initial_state(args)
    actual = tuple(start.frames[0].env[p.name] for p in prog.funcs[entry].params)
    initial = frozenset(start.objects)
    out: list[FinalState] = []
    stack, steps = [start], 0
    while stack:
        st = stack.pop()
        while st.status == "run":
            steps += 1
            if steps > budget:
                raise EngineError("budget exhausted while enumerating final states")
            succ = prog.successors(st)
            if not succ:
                st = None
                break
            stack.extend(reversed(succ[1:]))
            st = succ[0]
        if st is not None:
            ledger = {(c, a): d for c, m in st.ledger.items() for a, d in m.items()}
            out.append(FinalState(st.status, st.ret, ledger, actual, st.message, initial))
    return out
