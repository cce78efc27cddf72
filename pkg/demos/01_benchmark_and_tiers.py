"""A long-tailed 2-D benchmark and the frequency tiers that drive augmentation.

Run: python demos/01_benchmark_and_tiers.py
"""

from subflow.synthbench import augmentation_targets, default_spec, generate_dataset, partition_classes, \
    synthetic_counts

spec = default_spec(seed=0)
train = generate_dataset(spec)
counts = train.counts()

# The largest class is set aside; the median of the rest anchors the tiers.
part = partition_classes(counts)
targets = augmentation_targets(part)
extra = synthetic_counts(targets, counts)

print(f"median of non-dominant counts: {part.median:g}")
print(f"{'class':>5} {'n':>6} {'tier':>9} {'target':>7} {'synthetic':>9} {'modes':>5}")
for c in sorted(counts):
    print(f"{c:>5} {counts[c]:>6} {part.tiers[c]:>9} {targets[c]:>7} {extra[c]:>9} "
          f"{len(spec.class_spec(c).modes):>5}")
print(f"total synthetic rows to generate: {sum(extra.values())}")
