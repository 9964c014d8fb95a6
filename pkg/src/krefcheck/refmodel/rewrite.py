"""Module rewrites that replace kernel API calls by their models."""
from __future__ import annotations

from dataclasses import replace
from typing import Optional

from ..kir.ir import (
    AddrTy, AggRef, AsmOp, Call, Const, Global, Instruction, KirFunction,
    KirModule, Loc, Nondet, Operand, RcDec, RcInc, TOKEN_TYPE,
)
from ..kir.transform import NameSupply, inline_call, map_instructions, substitute_function, used_names
from .registry import ModelError, ModelRegistry, default_registry

TOKEN_PTR = AddrTy(AggRef(TOKEN_TYPE))


def _shadowed(module: KirModule) -> frozenset:
    # A function defined in the module takes precedence over a model.
    return frozenset(f.name for f in module.functions)


def apply_devres(module: KirModule, registry: Optional[ModelRegistry] = None) -> KirModule:
    """Run devres cleanups eagerly: the registration returns 0 and the
    cleanup is called on its payload right after the call site."""
    registry = registry or default_registry()
    local = _shadowed(module)
    funcs = []
    for fn in module.functions:
        zeroed: dict[str, Operand] = {}

        def rewrite(loc: Loc, inst: Instruction, fn=fn, zeroed=zeroed):
            if not isinstance(inst, Call) or inst.callee in local \
                    or inst.callee not in registry.devres:
                return None
            api = registry.devres[inst.callee]
            where = f"{fn.name}:^{loc[0]}#{loc[1]}"
            if max(api.action_arg, api.data_arg) >= len(inst.args):
                raise ModelError(f"{where}: {inst.callee} takes at least "
                                 f"{max(api.action_arg, api.data_arg) + 1} arguments")
            action = inst.args[api.action_arg]
            if not isinstance(action, Global):
                raise ModelError(f"{where}: devres cleanup {action} is not a function name")
            target = module.function(action.name) or module.extern(action.name)
            if target is None:
                raise ModelError(f"{where}: unknown devres cleanup @{action.name}")
            if inst.result is not None:
                zeroed[inst.result] = Const(0)
            ret_ty = target.ret_ty
            return [Call(ty=ret_ty, callee=action.name, args=(inst.args[api.data_arg],),
                         arg_attrs=())]

        new = map_instructions(fn, rewrite)
        funcs.append(substitute_function(new, zeroed))
    return replace(module, functions=tuple(funcs))


def _first_modeled(fn: KirFunction, names: frozenset) -> Optional[tuple[Loc, Instruction]]:
    for loc, inst in fn.instructions():
        if isinstance(inst, Call) and inst.callee in names:
            return loc, inst
        if isinstance(inst, AsmOp):
            return loc, inst
    return None


def _replace_at(fn: KirFunction, loc: Loc, new: list[Instruction]) -> KirFunction:
    return map_instructions(fn, lambda l, i: new if l == loc else None)


def _token_result(call: Call, api) -> bool:
    if api.flags_arg >= len(call.args):
        return True
    flags = call.args[api.flags_arg]
    # An unknown flag word may carry the auto-remove bit.
    return not isinstance(flags, Const) or bool(flags.value & api.mask)


def _rewrite_function(module: KirModule, fn: KirFunction, registry: ModelRegistry,
                      used_classes: set) -> KirFunction:
    local = _shadowed(module)
    names = (registry.names() - registry.devres_names) - local
    while True:
        hit = _first_modeled(fn, names)
        if hit is None:
            return fn
        loc, inst = hit
        where = f"{fn.name}:^{loc[0]}#{loc[1]}"
        if isinstance(inst, AsmOp):
            kind = registry.asm.get(inst.mnemonic)
            if kind == "identity" and inst.args and inst.result is not None:
                fn = _replace_at(fn, loc, [])
                fn = substitute_function(fn, {inst.result: inst.args[0]})
            elif kind is not None and inst.result is None:
                fn = _replace_at(fn, loc, [])
            else:
                rep = [Nondet(result=inst.result, ty=inst.ty)] if inst.result is not None else []
                fn = _replace_at(fn, loc, rep)
            continue
        name = inst.callee
        if name in registry.refops:
            op = registry.refops[name]
            if len(inst.args) != 1:
                raise ModelError(f"{where}: {name} expects 1 argument, got {len(inst.args)}")
            cls = RcInc if op.op == "inc" else RcDec
            used_classes.add(op.refclass)
            fn = _replace_at(fn, loc, [cls(refclass=op.refclass, obj=inst.args[0])])
            if inst.result is not None:
                # get_device() and friends hand back their argument
                fn = substitute_function(fn, {inst.result: inst.args[0]})
            continue
        if name in registry.tokens:
            if inst.result is None:
                fn = _replace_at(fn, loc, [])
            else:
                ty = TOKEN_PTR if _token_result(inst, registry.tokens[name]) else inst.ty
                fn = _replace_at(fn, loc, [Nondet(result=inst.result, ty=ty)])
            continue
        model = registry.model_for(name, module)
        assert model is not None
        if len(model.template.params) != len(inst.args):
            raise ModelError(f"{where}: {name} expects {len(model.template.params)} "
                             f"arguments, got {len(inst.args)}")
        used_classes.update(model.fresh_object_classes)
        supply = NameSupply(used_names(fn))
        fn = inline_call(fn, loc, model.template, supply, stem=name)


def apply_models(module: KirModule, registry: Optional[ModelRegistry] = None) -> KirModule:
    """Replace every modeled API call and inline-asm placeholder.

    Devres registrations are rewritten first. Calls to functions the
    module defines itself are left alone. Refclasses the models touch are
    declared on the result.
    """
    registry = registry or default_registry()
    module = apply_devres(module, registry)
    used: set = set()
    funcs = tuple(_rewrite_function(module, fn, registry, used) for fn in module.functions)
    out = replace(module, functions=funcs)
    for cls in sorted(used):
        out = out.with_refclass(cls)
    return out


__all__ = ["apply_models", "apply_devres", "TOKEN_PTR"]
