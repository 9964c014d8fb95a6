"""Exhaustive checks of the four device-tree API templates.

Each quadrant gets four checks, sixteen in total:
input-delta on a non-null node, input-delta on a null node, freshness and
+1 of every non-null result, and the null-on-null contract.
"""
from itertools import product

from krefcheck.engine import enumerate_final_states
from krefcheck.engine.interp import Addr
from krefcheck.kir.ir import KirModule
from krefcheck.refmodel import DtApiKind, dt_model_template

KINDS = [DtApiKind(d, n) for d, n in product((True, False), repeat=2)]


def _finals(kind, arg, template_kind=None):
    model = dt_model_template(template_kind or kind, "of_node", "api")
    module = KirModule(refclasses=("of_node",), functions=(model.template,))
    return enumerate_final_states(module, "api", (arg,))


def _input_delta(fs):
    return sum(d for (cls, a), d in fs.ledger.items()
               if a.handle in fs.initial_handles and cls == "of_node")


def quadrant_checks(kind, template_kind=None):
    """[(label, passed)] for one quadrant.

    ``template_kind`` checks a different quadrant's template against the
    contract of ``kind``; tests use it to show the checks can fail.
    """
    live = _finals(kind, "fresh", template_kind)
    null = _finals(kind, "null", template_kind)
    want = -1 if kind.decrements_input_rc else 0
    checks = []
    checks.append(("input delta, non-null node",
                   bool(live) and all(_input_delta(f) == want for f in live)))
    checks.append(("input delta, null node",
                   bool(null) and all(_input_delta(f) == 0 for f in null)))

    def fresh_ok(f):
        if f.ret is None:
            return all(d == 0 for (_, a), d in f.ledger.items()
                       if a.handle not in f.initial_handles)
        if not isinstance(f.ret, Addr) or f.ret.handle in f.initial_handles:
            return False
        return f.ledger.get(("of_node", f.ret), 0) == 1
    checks.append(("non-null result is fresh with +1",
                   all(fresh_ok(f) for f in live + null)
                   and any(f.ret is not None for f in live)))
    if kind.may_return_null_on_null_input:
        ok = all(f.ret is None and not any(f.ledger.values()) for f in null)
    else:
        ok = any(f.ret is not None for f in null) and any(f.ret is None for f in null)
    checks.append(("null-on-null contract", ok))
    return checks


def all_quadrant_checks():
    return [(f"decrements={k.decrements_input_rc} null_on_null={k.may_return_null_on_null_input}: "
             + label, ok) for k in KINDS for label, ok in quadrant_checks(k)]
