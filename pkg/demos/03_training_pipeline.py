"""Two-phase transfer learning on the synthetic texture set, then one
object-specific fine-tune with a replaced head.

Uses the tiny random backbone so everything runs in seconds on a CPU. The
production schedules (100+250 epochs, four fine-tuning stages) are printed
for reference but not executed here.

Run with: python3 demos/03_training_pipeline.py
"""

import numpy as np

from statechef import (
    BackboneSpec,
    HeadSpec,
    build_model,
    object_finetune_schedule,
    replace_head,
    run_schedule,
    run_stage,
    snapshot_parameters,
    whole_dataset_schedule,
)
from statechef.synthetic import abbreviated_two_phase, texture_dataset

print("production whole-dataset schedule:")
for i, stage in enumerate(whole_dataset_schedule().stages, 1):
    print(f"  stage {i}: freeze={stage.freeze_scope:<14} lr={stage.learning_rate:<9} epochs={stage.epochs}")
print("production per-object schedule:")
for i, stage in enumerate(object_finetune_schedule().stages, 1):
    print(f"  stage {i}: freeze={stage.freeze_scope:<21} lr={stage.learning_rate:<9} epochs={stage.epochs}")

print("\nbuilding the tiny model and the 11-texture dataset...")
data = texture_dataset(per_class=20, size=32, seed=0)
model = build_model(BackboneSpec.tiny(), HeadSpec.tiny(), seed=0)

schedule = abbreviated_two_phase()
print(f"running abbreviated schedule ({[s.epochs for s in schedule.stages]} epochs)...")
model, history = run_schedule(model, data, schedule, seed=7)
probs = model.predict(data.images)
accuracy = (probs.argmax(axis=1) == data.labels).mean()
print(f"final training top-1: {accuracy:.1%} (loss {history.train_loss[-1]:.3f})")

print("\nper-object fine-tuning: swap the 11-way head for a 5-way head")
backbone_before = snapshot_parameters(model, prefix="backbone.")
garlic_model = replace_head(model, 5, seed=1)
print("  head now has", garlic_model.head.fc.out_features, "units")
print("  backbone untouched:", snapshot_parameters(garlic_model, prefix='backbone.') == backbone_before)

garlic_data = texture_dataset(per_class=10, size=32, seed=3, class_names=("whole", "peeled", "sliced", "grated", "creamy"))
stage = object_finetune_schedule().stages[0]
stage = type(stage)(freeze_scope=stage.freeze_scope, learning_rate=stage.learning_rate, epochs=5,
                    augmentation=schedule.stages[0].augmentation)
garlic_model, garlic_history = run_stage(garlic_model, garlic_data, stage, seed=2)
garlic_probs = garlic_model.predict(garlic_data.images)
garlic_acc = (garlic_probs.argmax(axis=1) == garlic_data.labels).mean()
print(f"  after 5 head-only epochs: {garlic_acc:.1%} on the 5-state fixture")
print("  backbone still frozen bit-exactly:",
      snapshot_parameters(garlic_model, prefix="backbone.") == backbone_before)
