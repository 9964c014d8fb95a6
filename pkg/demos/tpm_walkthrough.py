"""Walk one real leak through every stage of the pipeline.

tpm_bios_measurements_open takes a reference on the chip's device and
forgets to drop it when seq_open fails. The fixed version drops it.
"""
from krefcheck import check, load, prepare
from krefcheck.corpus import corpus_file
from krefcheck.kir.printer import format_function
from krefcheck.refmodel import apply_models


def show(title, text):
    print(f"== {title}")
    print(text.rstrip())
    print()


leak = load(corpus_file("tpm_leak.kir").read_text(), "tpm_leak.kir")
INIT = "tpm_bios_measurements_open"
show("driver code", format_function(leak.function(INIT)))
show("after models: get_device becomes rc_inc",
     format_function(apply_models(leak).function(INIT)))

prep = prepare(leak)
show("harness: on failure every refclass must be balanced",
     format_function(prep.module.function("main")))
print(f"slicing kept {prep.after} of {prep.before} instructions: {prep.rule_counts()}\n")

verdict, _ = check(leak)
print(f"verdict: {verdict.status.upper()} ({verdict.message})")
print(f"replay with nondet choices {list(verdict.choices)}:")
for step in verdict.trace:
    print(f"  {step.instr:<40} {step.digest}")

fixed, _ = check(load(corpus_file("tpm_fixed.kir").read_text(), "tpm_fixed.kir"))
print(f"\nwith put_device on the error path: {fixed.status.upper()}")
