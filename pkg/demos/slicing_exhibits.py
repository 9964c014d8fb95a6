"""Slicing is not free: one false positive and one miss.

Both programs are in the corpus with expectations that deliberately
differ from the ground truth, so the corpus stays green while recording
the behavior.
"""
from krefcheck import Options, check, load
from krefcheck.corpus import load_manifest

programs = {e.name: e for e in load_manifest().entries}

for name in ("acer_fp", "indirect_flow_miss"):
    entry = programs[name]
    module = load(entry.path.read_text(), str(entry.path))
    unsliced, _ = check(module, entry.entry, Options(slice=False))
    sliced, prep = check(module, entry.entry, Options(slice=True))
    print(f"{name}: truth {entry.truth.upper()}")
    print(f"  unsliced: {unsliced.status.upper()}")
    print(f"  sliced:   {sliced.status.upper()}  ({prep.after}/{prep.before} instructions kept)")
    print(f"  why: {entry.note}")
    print()
