"""Reduction of refcount checking to assertion checking.

The harness is a synthesized ``main`` that builds inputs for the driver's
init function, calls it, and on a nonzero return asserts that every
refcount class is back where it started.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from .kir.ir import (
    I32, I64, AddrTy, Assert, Assume, Block, Br, Call, Cmp, Const, CondBr,
    EntryDescriptor, IntTy, KirFunction, KirModule, NULL, Nondet, RcDelta,
    Ret, Value,
)

HARNESS_NAME = "main"


class HarnessError(Exception):
    """The entry descriptor cannot be turned into a harness."""


@dataclass(frozen=True)
class HarnessProgram:
    module: KirModule
    main: str
    asserted_classes: tuple[str, ...]
    descriptor: EntryDescriptor


def default_recipe(ty) -> str:
    return "fresh" if isinstance(ty, AddrTy) else "nondet"


def build_harness(module: KirModule, descriptor: Optional[EntryDescriptor] = None) -> HarnessProgram:
    """Append ``main`` driving ``descriptor.init_function`` to ``module``."""
    descriptor = descriptor or module.entry
    if descriptor is None:
        raise HarnessError("no entry function given and the module declares none")
    init = module.function(descriptor.init_function)
    if init is None:
        raise HarnessError(f"entry function @{descriptor.init_function} is not defined")
    if not isinstance(init.ret_ty, IntTy):
        raise HarnessError(f"entry function @{init.name} must return an integer error code")
    if module.function(HARNESS_NAME) is not None:
        raise HarnessError(f"module already defines @{HARNESS_NAME}")
    recipe = descriptor.input_recipe or tuple(default_recipe(p.ty) for p in init.params)
    if len(recipe) != len(init.params):
        raise HarnessError(f"@{init.name} takes {len(init.params)} inputs, "
                           f"recipe has {len(recipe)}")

    entry, args = [], []
    for i, (param, how) in enumerate(zip(init.params, recipe)):
        name = f"in{i}"
        if how == "nondet" or not isinstance(param.ty, AddrTy):
            if how != "nondet":
                raise HarnessError(f"recipe {how} needs an address parameter (%{param.name})")
            entry.append(Nondet(result=name, ty=param.ty))
        else:
            entry.append(Nondet(result=name, ty=param.ty))
            if how == "fresh":
                entry.append(Cmp(result=f"{name}.ok", op="ne", ty=param.ty,
                                 lhs=Value(name), rhs=NULL))
                entry.append(Assume(cond=Value(f"{name}.ok")))
        args.append(Value(name))
    entry.append(Call(result="err", ty=init.ret_ty, callee=init.name, args=tuple(args)))
    entry.append(Cmp(result="failed", op="ne", ty=init.ret_ty, lhs=Value("err"), rhs=Const(0)))
    entry.append(CondBr(cond=Value("failed"), then_target="fail", else_target="done"))

    classes = tuple(module.refclasses)
    fail = []
    for cls in classes:
        fail.append(RcDelta(result=f"delta.{cls}", refclass=cls))
        fail.append(Cmp(result=f"zero.{cls}", op="eq", ty=I64,
                        lhs=Value(f"delta.{cls}"), rhs=Const(0)))
        fail.append(Assert(cond=Value(f"zero.{cls}")))
    fail.append(Br(target="done"))
    main = KirFunction(HARNESS_NAME, (), I32, (
        Block("entry", tuple(entry)),
        Block("fail", tuple(fail)),
        Block("done", (Ret(ty=I32, value=Const(0)),)),
    ))
    out = replace(module, functions=module.functions + (main,), entry=descriptor)
    return HarnessProgram(out, HARNESS_NAME, classes, descriptor)
