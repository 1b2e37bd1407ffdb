import json

import numpy as np
import pytest

from statechef.augment import AugmentationConfig
from statechef.manifest import DatasetManifest, SampleRecord, save_manifest
from statechef.models import replace_head, snapshot_parameters, trainable_parameter_names
from statechef.synthetic import texture_dataset, write_texture_dataset
from statechef.taxonomy import validate_taxonomy
from statechef.training import (
    Schedule,
    TrainingError,
    TrainingSet,
    TrainingStage,
    load_schedule,
    object_finetune_schedule,
    run_stage,
    save_schedule,
    train_object_models,
    whole_dataset_schedule,
)

QUIET_AUG = AugmentationConfig.disabled()


def quick_stage(scope="none", lr=0.01, epochs=1, **kwargs):
    return TrainingStage(
        freeze_scope=scope, learning_rate=lr, epochs=epochs, augmentation=QUIET_AUG, **kwargs
    )


class TestSchedules:
    def test_whole_dataset_stages(self):
        schedule = whole_dataset_schedule()
        assert len(schedule.stages) == 2
        first, second = schedule.stages
        assert first.freeze_scope == "backbone_only"
        assert first.learning_rate == 0.001
        assert (first.beta1, first.beta2) == (0.9, 0.999)
        assert first.epochs == 100
        assert second.freeze_scope == "none"
        assert second.learning_rate == 0.000005
        assert second.epochs == 250
        for stage in schedule.stages:
            assert stage.l2_coefficient > 0
            assert stage.augmentation.enabled

    def test_object_finetune_stages(self):
        schedule = object_finetune_schedule()
        assert [s.freeze_scope for s in schedule.stages] == [
            "all_but_final",
            "all_but_final",
            "added_layers_unfrozen",
            "none",
        ]
        assert [s.learning_rate for s in schedule.stages] == [0.01, 0.001, 0.00001, 0.000005]
        assert [s.epochs for s in schedule.stages] == [40, 80, 120, 160]

    def test_stage_validation(self):
        with pytest.raises(TrainingError, match="scope"):
            TrainingStage(freeze_scope="半", learning_rate=0.1, epochs=1)
        with pytest.raises(TrainingError, match="epochs"):
            TrainingStage(freeze_scope="none", learning_rate=0.1, epochs=0)
        with pytest.raises(TrainingError, match="betas"):
            TrainingStage(freeze_scope="none", learning_rate=0.1, epochs=1, beta1=1.5)
        with pytest.raises(TrainingError, match="stages"):
            Schedule(name="empty", stages=())

    def test_schedule_file_roundtrip(self, tmp_path):
        schedule = object_finetune_schedule()
        path = save_schedule(schedule, tmp_path / "sched.json")
        assert load_schedule(path) == schedule


class TestRunStage:
    def test_empty_split_rejected(self, tiny_model):
        empty = TrainingSet(
            images=np.zeros((0, 16, 16, 3), dtype=np.uint8),
            labels=np.zeros(0, dtype=np.int64),
            sample_ids=(),
            label_space=tuple(f"c{i}" for i in range(11)),
        )
        with pytest.raises(TrainingError, match="empty"):
            run_stage(tiny_model(), empty, quick_stage())

    def test_class_count_mismatch(self, tiny_model, small_textures):
        model = replace_head(tiny_model(), 5)
        with pytest.raises(TrainingError, match="classes"):
            run_stage(model, small_textures, quick_stage())

    def test_lr_zero_keeps_parameters(self, tiny_model, small_textures):
        model = tiny_model(seed=3)
        param_names = {n for n, _ in model.named_parameters()}
        before = {k: v for k, v in snapshot_parameters(model).items() if k in param_names}
        run_stage(model, small_textures, quick_stage(lr=0.0), seed=1)
        after = {k: v for k, v in snapshot_parameters(model).items() if k in param_names}
        assert before == after

    @pytest.mark.parametrize("scope", ["all_but_final", "backbone_only", "added_layers_unfrozen"])
    def test_freeze_bit_exactness(self, tiny_model, small_textures, scope):
        model = tiny_model(seed=1)
        trainable = trainable_parameter_names(model, scope)
        before = snapshot_parameters(model)
        run_stage(model, small_textures, quick_stage(scope=scope), seed=2)
        after = snapshot_parameters(model)
        changed = {k for k in before if before[k] != after[k]}
        # every trainable parameter moved, nothing frozen did
        assert trainable <= changed
        frozen_params = {n for n, _ in model.named_parameters()} - trainable
        assert not changed & frozen_params
        # frozen batch-norm statistics (buffers) stayed put too
        frozen_prefixes = ("backbone.",) if scope != "all_but_final" else ("backbone.", "head.bn_", "head.pointwise", "head.conv_")
        for name in before:
            if name.endswith(("running_mean", "running_var", "num_batches_tracked")) and name.startswith(frozen_prefixes):
                assert before[name] == after[name], name

    def test_history_lengths_and_val(self, tiny_model, small_textures):
        model = tiny_model()
        _, history = run_stage(model, small_textures, quick_stage(epochs=3), seed=0, val_data=small_textures)
        assert len(history) == 3
        assert len(history.val_accuracy) == 3
        assert all(v is not None for v in history.val_accuracy)
        assert all(w >= 0 for w in history.wall_clock)

    def test_reproducible_digests(self, tiny_model, small_textures):
        def train():
            model = tiny_model(seed=5)
            run_stage(model, small_textures, quick_stage(epochs=2, lr=0.005), seed=11)
            return snapshot_parameters(model)

        assert train() == train()

    def test_augmented_training_is_deterministic(self, tiny_model, small_textures):
        aug = AugmentationConfig(seed=7)
        stage = TrainingStage(freeze_scope="none", learning_rate=0.005, epochs=2, augmentation=aug)

        def train():
            model = tiny_model(seed=5)
            run_stage(model, small_textures, stage, seed=13)
            return snapshot_parameters(model)

        assert train() == train()

    def test_loss_improves_on_overfit_fixture(self, tiny_model):
        data = texture_dataset(per_class=6, size=16, seed=0)
        model = tiny_model(seed=0)
        _, history = run_stage(model, data, quick_stage(scope="backbone_only", lr=0.003, epochs=8), seed=3)
        assert history.train_loss[-1] <= history.train_loss[0]

    def test_history_save(self, tiny_model, small_textures, tmp_path):
        _, history = run_stage(tiny_model(), small_textures, quick_stage(epochs=2), seed=0)
        path = history.save(tmp_path / "history.jsonl")
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [0, 1]
        assert {"train_loss", "train_accuracy", "val_loss", "val_accuracy", "wall_clock"} <= rows[0].keys()


class TestTrainingSetFromManifest:
    def test_loads_files(self, tmp_path, taxonomy):
        manifest = write_texture_dataset(tmp_path, per_class=2, size=16, seed=0, taxonomy=taxonomy)
        data = TrainingSet.from_manifest(manifest, "train", taxonomy.class_names())
        assert len(data) == 22
        assert data.images.shape[1:] == (16, 16, 3)
        assert set(data.labels.tolist()) == set(range(11))

    def test_state_outside_label_space(self, tmp_path):
        image_path = tmp_path / "img.npy"
        np.save(image_path, np.zeros((8, 8, 3), dtype=np.uint8))
        record = SampleRecord(id="x", uri=str(image_path), object="milk", state="juice", split="train")
        manifest = DatasetManifest(records=(record,))
        with pytest.raises(Exception, match="label space"):
            TrainingSet.from_manifest(manifest, "train", ("whole", "sliced"))


def per_object_manifests(taxonomy, tmp_path, images_per_state=2):
    """One tiny manifest per object, restricted to admissible states."""
    manifests = {}
    image_path = tmp_path / "shared.npy"
    np.save(image_path, np.zeros((16, 16, 3), dtype=np.uint8))
    class_order = {name: i for i, name in enumerate(taxonomy.class_names())}
    for obj in taxonomy.object_names():
        records = []
        for state in sorted(taxonomy.admissible_states(obj), key=class_order.__getitem__):
            for j in range(images_per_state):
                records.append(
                    SampleRecord(
                        id=f"{obj}-{state}-{j}",
                        uri=str(image_path),
                        object=obj,
                        state=state,
                        split="train",
                    )
                )
        manifests[obj] = DatasetManifest(records=tuple(records))
    return manifests


class TestObjectModels:
    def test_sixteen_models_with_expected_heads(self, tiny_model, taxonomy, tmp_path):
        base = tiny_model(seed=4)
        manifests = per_object_manifests(taxonomy, tmp_path)
        schedule = Schedule(name="fast", stages=(quick_stage(scope="all_but_final", epochs=1),))
        results = train_object_models(base, manifests, taxonomy, schedule=schedule, seed=1)
        assert len(results) == 16
        assert "dough" not in results
        garlic_model, _, garlic_space = results["garlic"]
        assert garlic_model.class_count == 5
        assert len(garlic_space) == 5
        milk_model, _, _ = results["milk"]
        assert milk_model.class_count == 2
        # backbone initialized from (and, under all_but_final, still equal to) the base
        base_backbone = snapshot_parameters(base, prefix="backbone.")
        for obj, (model, _, _) in results.items():
            assert snapshot_parameters(model, prefix="backbone.") == base_backbone, obj

    def test_missing_manifest_named(self, tiny_model, taxonomy, tmp_path):
        manifests = per_object_manifests(taxonomy, tmp_path)
        del manifests["carrot"]
        with pytest.raises(TrainingError, match="carrot"):
            train_object_models(tiny_model(), manifests, taxonomy)

    def test_single_state_object_rejected(self, tiny_model, taxonomy, tmp_path):
        doc = taxonomy.to_document()
        for entry in doc["objects"]:
            if entry["name"] == "mushroom":
                entry["admissible"] = ["whole"]
        crippled = validate_taxonomy(doc)
        manifests = per_object_manifests(crippled, tmp_path)
        with pytest.raises(TrainingError, match="mushroom"):
            train_object_models(tiny_model(), manifests, crippled)
