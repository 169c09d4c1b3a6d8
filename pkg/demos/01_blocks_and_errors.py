"""Walk one program through parsing, block segmentation and error injection.

Run: python demos/01_blocks_and_errors.py
"""

from scadkit.dataset import describe_error
from scadkit.mutate import ERROR_TYPES, ExhaustedRetries, applicable_types, mutate
from scadkit.segment import annotate, segment
from scadkit.syntax import parse, print_program

SOURCE = """
wall = 2;
gap = 6;
difference() {
    cube([20, 12, 8]);
    translate([wall, wall, wall]) cube([20 - 2 * wall, 12 - 2 * wall, 10]);
}
for (i = [0:2]) translate([i * gap + 3, 6, 8]) cylinder(h=4, r=1.5);
translate([10, 6, -3]) rotate([0, 0, 45]) cube([3, 3, 3], center=true);
"""

program = parse(SOURCE)
print("Canonical form:\n")
print(print_program(program))

# Blocks are the unit the reviewer points at: a leading run of assignments,
# then one block per top-level geometry statement.
blocks = segment(program)
for b in blocks:
    print(f"Block {b.id}: {b.kind.value:<11} {len(b.statements)} statement(s)")

annotated = annotate(program)
print("\nAnnotated program:\n")
print(print_program(annotated))

# Every error type that applies to this program, with the reviewer-style text.
print("Injected errors:")
for t in ERROR_TYPES:
    if t not in applicable_types(annotated):
        continue
    try:
        mutant, record = mutate(annotated, t, seed=1)
    except ExhaustedRetries:
        print(f"  {t.value:<16} no visible mutation found")
        continue
    print(f"  {t.value:<16} {describe_error(record, annotated)}")
