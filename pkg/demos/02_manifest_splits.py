"""Manifests, stratified splitting, and class statistics.

Builds a 9309-record synthetic manifest with the published class balance,
splits it 70/15/15 per class with largest-remainder rounding, and shows
that the result is deterministic and order-invariant.

Run with: python3 demos/02_manifest_splits.py
"""

from statechef import class_stats, stratified_split
from statechef.manifest import DatasetManifest
from statechef.synthetic import proportioned_manifest

manifest = proportioned_manifest(total=9309, seed=5)
print(f"manifest: {len(manifest)} records, all unassigned")

print("\nclass statistics:")
for name, count in class_stats(manifest).items():
    bar = "#" * (count // 40)
    print(f"  {name:<10} {count:5d} {bar}")

published = (6498, 1413, 1398)
ratios = tuple(v / 9309 for v in published)
split = stratified_split(manifest, ratios, seed=11)
sizes = split.split_sizes()
print(f"\nsplit sizes: train {sizes['train']}, test {sizes['test']}, val {sizes['val']}")
print(f"reference    train {published[0]}, test {published[1]}, val {published[2]}")

again = stratified_split(manifest, ratios, seed=11)
print("\nsame seed twice -> identical assignment:", split.records == again.records)

reversed_manifest = DatasetManifest(
    records=tuple(reversed(manifest.records)),
    taxonomy_version=manifest.taxonomy_version,
)
re_split = stratified_split(reversed_manifest, ratios, seed=11)
same = {r.id: r.split for r in re_split.records} == {r.id: r.split for r in split.records}
print("record order permuted -> same assignment:", same)

small = stratified_split(
    DatasetManifest(records=manifest.records[:10]), (0.7, 0.15, 0.15), seed=1
)
print("\n10 records at 70/15/15 round to:", {k: v for k, v in small.split_sizes().items() if v})
