"""Tour of the state taxonomy: classes, hierarchy, per-object states.

Run with: python3 demos/01_taxonomy_tour.py
"""

from statechef import load_canonical_taxonomy

taxonomy = load_canonical_taxonomy()

print("The 11 training classes, in canonical index order:")
for cls in taxonomy.classes():
    members = ", ".join(cls.fine_members)
    print(f"  {cls.index:2d}  {cls.name:<10} <- fine states: {members}")

print("\nFine-state hierarchy (22 leaves, 10 selected for training):")
by_parent: dict[str, list[str]] = {}
for fine in taxonomy.fine_states:
    tag = "*" if fine.selected else " "
    by_parent.setdefault(fine.parent, []).append(f"{fine.name}{tag}")
for parent, children in by_parent.items():
    print(f"  {parent:<14} {', '.join(children)}")
print("  (* = selected)")

print("\nAdmissible states per object (size matches the per-object table):")
for obj in taxonomy.objects:
    states = ", ".join(sorted(obj.admissible_states, key=taxonomy.class_index))
    print(f"  {obj.name:<11} ({obj.state_count}): {states}")

print("\nLookups work through aliases too:")
print("  'orange' resolves to:", taxonomy.resolve_object("orange").name)
print("  garlic admits:", sorted(taxonomy.admissible_states("garlic")))
