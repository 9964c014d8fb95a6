from __future__ import annotations

from ..kir.ir import AddrTy, AggRef, KirModule, KirType


def find_kref_types(module: KirModule) -> frozenset:
    """Aggregates that embed the kref counter, directly or through a field.

    Least fixpoint: an aggregate is in the set iff it declares a kref path
    or has a by-value field whose aggregate type is already in the set.
    """
    found = {td.name for td in module.types if td.kref_path is not None}
    changed = True
    while changed:
        changed = False
        for td in module.types:
            if td.name in found:
                continue
            if any(isinstance(t, AggRef) and t.name in found for _, t in td.fields):
                found.add(td.name)
                changed = True
    return frozenset(found)


def addresses_kref(ty: KirType, kref_types: frozenset) -> bool:
    """True for ``ptr<T>`` where T embeds a kref."""
    return (isinstance(ty, AddrTy) and isinstance(ty.pointee, AggRef)
            and ty.pointee.name in kref_types)
