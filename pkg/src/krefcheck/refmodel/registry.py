"""Kernel API models and the registry that maps API names to them."""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Union

from ..kir.ir import (
    NULL, PTR, AddrTy, AggRef, Alloca, Assume, Block, Br, Cmp, CondBr,
    FieldAddr, IntTy, KirFunction, KirModule, KirType, Nondet, Param, Phi,
    RcDec, RcInc, Ret, Value, field_path_type,
)
from .kref import find_kref_types


class ModelError(Exception):
    """Raised for registrations or rewrites the models cannot express."""


@dataclass(frozen=True)
class DtApiKind:
    """A quadrant of the device-tree API classification."""
    decrements_input_rc: bool
    may_return_null_on_null_input: bool


# Instructions a model template may use.
TEMPLATE_INSTRUCTIONS = (Nondet, RcInc, RcDec, CondBr, Br, Cmp, Phi, Ret,
                         FieldAddr, Alloca, Assume)


@dataclass(frozen=True)
class ApiModel:
    api_name: str
    template: KirFunction
    fresh_object_classes: tuple[str, ...] = ()

    def __post_init__(self):
        for _, inst in self.template.instructions():
            if not isinstance(inst, TEMPLATE_INSTRUCTIONS):
                raise ModelError(f"{self.api_name}: template uses {inst.opcode}")


@dataclass(frozen=True)
class RefOp:
    op: str  # "inc" | "dec"
    refclass: str


@dataclass(frozen=True)
class BusFinder:
    aggregate: str
    field: str
    param_tys: tuple[KirType, ...]


@dataclass(frozen=True)
class DevresApi:
    action_arg: int
    data_arg: int


@dataclass(frozen=True)
class TokenApi:
    flags_arg: int
    mask: int


@dataclass
class ModelRegistry:
    refops: dict[str, RefOp] = field(default_factory=dict)
    dt_classification: dict[str, DtApiKind] = field(default_factory=dict)
    dt_classes: dict[str, str] = field(default_factory=dict)
    bus_finders: dict[str, BusFinder] = field(default_factory=dict)
    devres: dict[str, DevresApi] = field(default_factory=dict)
    tokens: dict[str, TokenApi] = field(default_factory=dict)
    asm: dict[str, str] = field(default_factory=dict)

    @property
    def devres_names(self) -> frozenset:
        return frozenset(self.devres)

    def names(self) -> frozenset:
        return frozenset(self.refops) | frozenset(self.dt_classification) \
            | frozenset(self.bus_finders) | frozenset(self.devres) | frozenset(self.tokens)

    def model_for(self, name: str, module: KirModule) -> Optional[ApiModel]:
        """Template model for ``name``, or None if it is not template-based."""
        if name in self.dt_classification:
            return dt_model_template(self.dt_classification[name], self.dt_classes[name], name)
        if name in self.bus_finders:
            bf = self.bus_finders[name]
            return model_bus_find(module, bf.aggregate, bf.field, name, bf.param_tys)
        return None

    def check(self) -> None:
        groups = [set(self.refops), set(self.dt_classification), set(self.bus_finders),
                  set(self.devres), set(self.tokens)]
        for i, a in enumerate(groups):
            for b in groups[i + 1:]:
                if a & b:
                    raise ModelError(f"API registered with two meanings: {sorted(a & b)}")
        for mnem, kind in self.asm.items():
            if kind not in ("nop", "identity"):
                raise ModelError(f"asm {mnem}: unknown equivalent {kind!r}")


def _fields(raw: str) -> dict[str, str]:
    out = {}
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ModelError(f"expected key=value, got {part!r}")
        k, v = part.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def _bool(v: str) -> bool:
    if v.lower() in ("yes", "true", "1"):
        return True
    if v.lower() in ("no", "false", "0"):
        return False
    raise ModelError(f"expected yes/no, got {v!r}")


def _param_type(text: str) -> KirType:
    if text == "ptr":
        return PTR
    if text.startswith("i") and text[1:].isdigit():
        return IntTy(int(text[1:]))
    raise ModelError(f"unsupported parameter type {text!r}")


def load_registry(source: Union[str, Path]) -> ModelRegistry:
    """Parse a registry file (or its text)."""
    text = Path(source).read_text() if isinstance(source, Path) else source
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=(";", "#"),
                                   inline_comment_prefixes=(";",), interpolation=None)
    cp.optionxform = str
    cp.read_string(text)
    reg = ModelRegistry()
    known = {"refops", "dt", "bus", "devres", "token", "asm"}
    for section in cp.sections():
        if section not in known:
            raise ModelError(f"unknown registry section [{section}]")
    for name, raw in cp.items("refops") if cp.has_section("refops") else []:
        f = _fields(raw)
        if f.get("op") not in ("inc", "dec"):
            raise ModelError(f"{name}: op must be inc or dec")
        reg.refops[name] = RefOp(f["op"], f["class"])
    for name, raw in cp.items("dt") if cp.has_section("dt") else []:
        f = _fields(raw)
        reg.dt_classification[name] = DtApiKind(_bool(f["decrements"]), _bool(f["null_on_null"]))
        reg.dt_classes[name] = f.get("class", "of_node")
    for name, raw in cp.items("bus") if cp.has_section("bus") else []:
        f = _fields(raw)
        tys = tuple(_param_type(t) for t in f.get("params", "ptr").split())
        reg.bus_finders[name] = BusFinder(f["aggregate"], f["field"], tys)
    for name, raw in cp.items("devres") if cp.has_section("devres") else []:
        f = _fields(raw)
        reg.devres[name] = DevresApi(int(f["action"]), int(f["data"]))
    for name, raw in cp.items("token") if cp.has_section("token") else []:
        f = _fields(raw)
        reg.tokens[name] = TokenApi(int(f["flags"]), int(f["mask"], 0))
    for name, raw in cp.items("asm") if cp.has_section("asm") else []:
        reg.asm[name] = raw.strip()
    reg.check()
    return reg


def default_registry() -> ModelRegistry:
    text = resources.files(__package__).joinpath("models.ini").read_text()
    return load_registry(text)


# ---------------------------------------------------------------- templates

def dt_model_template(kind: DtApiKind, refclass: str, name: str = "dt_api") -> ApiModel:
    """Template for one device-tree API quadrant.

    The input node loses a reference when the API decrements and the node
    is non-null. The result is either null or a fresh node holding one new
    reference. With ``may_return_null_on_null_input`` a null input returns
    null with no refcount effect at all.
    """
    node, isnull = Value("node"), Value("isnull")
    fresh, got = Value("fresh"), Value("got")
    entry = Block("entry", (
        Cmp(result="isnull", op="eq", ty=PTR, lhs=node, rhs=NULL),
        CondBr(cond=isnull, then_target="null_in", else_target="node_in"),
    ))
    node_in = Block("node_in", (
        (RcDec(refclass=refclass, obj=node),) if kind.decrements_input_rc else ()
    ) + (Br(target="pick"),))
    if kind.may_return_null_on_null_input:
        null_in = Block("null_in", (Ret(ty=PTR, value=NULL),))
    else:
        null_in = Block("null_in", (Br(target="pick"),))
    pick = Block("pick", (
        Nondet(result="fresh", ty=PTR),
        Cmp(result="got", op="ne", ty=PTR, lhs=fresh, rhs=NULL),
        CondBr(cond=got, then_target="inc", else_target="out"),
    ))
    inc = Block("inc", (RcInc(refclass=refclass, obj=fresh), Br(target="out")))
    out = Block("out", (Ret(ty=PTR, value=fresh),))
    fn = KirFunction(name, (Param("node", PTR),), PTR,
                     (entry, node_in, null_in, pick, inc, out))
    return ApiModel(name, fn, (refclass,))


def model_bus_find(module: KirModule, aggregate: str, field_name: str,
                   name: str = "bus_find", param_tys: tuple = (PTR,)) -> ApiModel:
    """Template for a bus finder returning an object that embeds a device.

    The result is null, or a fresh ``aggregate`` whose embedded device has
    gained one reference; the address returned is the aggregate's base.
    """
    typedefs = module.typedefs()
    if aggregate not in typedefs:
        raise ModelError(f"{name}: unknown aggregate {aggregate}")
    fty = field_path_type(typedefs, aggregate, (field_name,))
    if not isinstance(fty, AggRef) or fty.name not in find_kref_types(module):
        raise ModelError(f"{name}: {aggregate}.{field_name} is not an embedded refcounted device")
    obj, got = Value("obj"), Value("got")
    entry = Block("entry", (
        Nondet(result="obj", ty=AddrTy(AggRef(aggregate))),
        Cmp(result="got", op="ne", ty=PTR, lhs=obj, rhs=NULL),
        CondBr(cond=got, then_target="found", else_target="none"),
    ))
    found = Block("found", (
        FieldAddr(result="dev", agg=aggregate, base=obj, path=(field_name,), field_ty=fty),
        RcInc(refclass="device", obj=Value("dev")),
        Ret(ty=PTR, value=obj),
    ))
    none = Block("none", (Ret(ty=PTR, value=NULL),))
    params = tuple(Param(f"arg{i}", t) for i, t in enumerate(param_tys))
    fn = KirFunction(name, params, PTR, (entry, found, none))
    return ApiModel(name, fn, ("device",))
