"""Staged training: whole-dataset transfer learning and per-object fine-tuning.

The whole-dataset schedule has two phases (train the added layers with the
backbone frozen, then unfreeze everything at a tiny learning rate); the
per-object schedule has four stages with progressively wider freeze scopes.
Parameters outside a stage's freeze scope never change, bit for bit, and a
stage is deterministic given its seed in single-worker mode.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
from torch.nn import functional as F

from .augment import AugmentationConfig, augment_view
from .manifest import DatasetManifest, ManifestError, records_as_arrays
from .models import (
    FREEZE_SCOPES,
    StateClassifier,
    apply_freeze,
    frozen_submodules,
    replace_head,
)
from .taxonomy import Taxonomy

__all__ = [
    "TrainingStage",
    "Schedule",
    "TrainingHistory",
    "TrainingSet",
    "whole_dataset_schedule",
    "object_finetune_schedule",
    "run_stage",
    "run_schedule",
    "train_object_models",
    "save_schedule",
    "load_schedule",
]


class TrainingError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingStage:
    freeze_scope: str
    learning_rate: float
    epochs: int
    beta1: float = 0.9
    beta2: float = 0.999
    l2_coefficient: float = 1e-4
    batch_size: int = 32
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)

    def __post_init__(self):
        if self.freeze_scope not in FREEZE_SCOPES:
            raise TrainingError(f"unknown freeze scope {self.freeze_scope!r}; known: {FREEZE_SCOPES}")
        if self.learning_rate < 0:
            raise TrainingError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise TrainingError(f"betas must lie in (0,1), got ({self.beta1}, {self.beta2})")
        if self.l2_coefficient < 0:
            raise TrainingError(f"l2_coefficient must be non-negative, got {self.l2_coefficient}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")

    def to_json(self) -> dict:
        return {
            "freeze_scope": self.freeze_scope,
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "l2_coefficient": self.l2_coefficient,
            "batch_size": self.batch_size,
            "augmentation": self.augmentation.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "TrainingStage":
        doc = dict(doc)
        aug = doc.pop("augmentation", None)
        if aug is not None:
            doc["augmentation"] = AugmentationConfig.from_json(aug)
        return cls(**doc)


@dataclass(frozen=True)
class Schedule:
    name: str
    stages: tuple[TrainingStage, ...]

    def __post_init__(self):
        if not self.stages:
            raise TrainingError(f"schedule {self.name!r} has no stages")
        object.__setattr__(self, "stages", tuple(self.stages))

    def to_json(self) -> dict:
        return {"name": self.name, "stages": [s.to_json() for s in self.stages]}

    @classmethod
    def from_json(cls, doc: dict) -> "Schedule":
        return cls(name=doc["name"], stages=tuple(TrainingStage.from_json(s) for s in doc["stages"]))


def whole_dataset_schedule() -> Schedule:
    """Two-phase transfer learning over all 11 classes.

    Phase 1 freezes the backbone and trains the added layers for 100 epochs
    at lr 0.001 (Adam, beta1 0.9, beta2 0.999); phase 2 unfreezes everything
    for 250 epochs at lr 0.000005. Augmentation and L2 regularization are on
    in both phases.
    """
    return Schedule(
        name="whole-dataset",
        stages=(
            TrainingStage(freeze_scope="backbone_only", learning_rate=0.001, epochs=100),
            TrainingStage(freeze_scope="none", learning_rate=0.000005, epochs=250),
        ),
    )


def object_finetune_schedule() -> Schedule:
    """Four-stage per-object fine-tuning.

    Stages 1-2 freeze all layers but the last, stage 3 unfreezes the added
    head layers, stage 4 unfreezes the whole model. Learning rates are
    0.01 / 0.001 / 0.00001 / 0.000005 and epochs 40 / 80 / 120 / 160.
    """
    scopes = ("all_but_final", "all_but_final", "added_layers_unfrozen", "none")
    rates = (0.01, 0.001, 0.00001, 0.000005)
    epochs = (40, 80, 120, 160)
    return Schedule(
        name="object-finetune",
        stages=tuple(
            TrainingStage(freeze_scope=s, learning_rate=lr, epochs=e)
            for s, lr, e in zip(scopes, rates, epochs)
        ),
    )


def save_schedule(schedule: Schedule, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(schedule.to_json(), indent=2) + "\n")
    return path


def load_schedule(path: str | Path) -> Schedule:
    return Schedule.from_json(json.loads(Path(path).read_text()))


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    val_accuracy: list[float | None] = field(default_factory=list)
    wall_clock: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_loss)

    def extend(self, other: "TrainingHistory") -> None:
        self.train_loss.extend(other.train_loss)
        self.train_accuracy.extend(other.train_accuracy)
        self.val_loss.extend(other.val_loss)
        self.val_accuracy.extend(other.val_accuracy)
        self.wall_clock.extend(other.wall_clock)

    def save(self, path: str | Path) -> Path:
        """One JSON record per epoch, line-delimited."""
        path = Path(path)
        with path.open("w") as fh:
            for epoch in range(len(self)):
                fh.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "train_loss": self.train_loss[epoch],
                            "train_accuracy": self.train_accuracy[epoch],
                            "val_loss": self.val_loss[epoch],
                            "val_accuracy": self.val_accuracy[epoch],
                            "wall_clock": self.wall_clock[epoch],
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
        return path


@dataclass(frozen=True)
class TrainingSet:
    """In-memory training data: images, integer labels, and stable sample ids."""

    images: np.ndarray  # N x H x W x 3
    labels: np.ndarray  # N, indices into label_space
    sample_ids: tuple[str, ...]
    label_space: tuple[str, ...]

    def __post_init__(self):
        if len(self.images) != len(self.labels) or len(self.labels) != len(self.sample_ids):
            raise TrainingError("images, labels, and sample_ids must align")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_manifest(
        cls,
        manifest: DatasetManifest,
        split: str,
        label_space: Sequence[str],
        root: str | Path | None = None,
    ) -> "TrainingSet":
        records = manifest.split_records(split)
        images, labels, ids = records_as_arrays(records, label_space, root=root)
        return cls(images=images, labels=labels, sample_ids=tuple(ids), label_space=tuple(label_space))


def _stable_key(text: str) -> int:
    import hashlib

    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def _epoch_batch(
    data: TrainingSet,
    order: np.ndarray,
    start: int,
    stop: int,
    stage: TrainingStage,
    seed: int,
    epoch: int,
) -> tuple[np.ndarray, np.ndarray]:
    indices = order[start:stop]
    images = []
    for i in indices:
        img = data.images[i]
        if stage.augmentation.enabled:
            rng = np.random.default_rng(
                [stage.augmentation.seed, seed, epoch, _stable_key(data.sample_ids[i])]
            )
            img = augment_view(img, stage.augmentation, rng)
        images.append(img)
    return np.stack(images), data.labels[indices]


@torch.no_grad()
def _evaluate(model: StateClassifier, data: TrainingSet, batch_size: int) -> tuple[float, float]:
    was_training = model.training
    model.eval()
    total_loss, correct = 0.0, 0
    for start in range(0, len(data), batch_size):
        x = model.prepare_batch(data.images[start : start + batch_size])
        y = torch.from_numpy(data.labels[start : start + batch_size])
        logits = model(x)
        total_loss += F.cross_entropy(logits, y, reduction="sum").item()
        correct += (logits.argmax(dim=1) == y).sum().item()
    if was_training:
        model.train()
    return total_loss / len(data), correct / len(data)


def run_stage(
    model: StateClassifier,
    data: TrainingSet,
    stage: TrainingStage,
    seed: int = 0,
    val_data: TrainingSet | None = None,
) -> tuple[StateClassifier, TrainingHistory]:
    """Train one stage in place and return (model, per-epoch history).

    Parameters outside the stage's freeze scope are untouched bit-exactly;
    frozen batch-norm layers also keep their running statistics. The run is
    a deterministic function of (model state, data, stage, seed).
    """
    if len(data) == 0:
        raise TrainingError("training split is empty")
    if len(data.label_space) != model.class_count:
        raise TrainingError(
            f"model expects {model.class_count} classes but the data has "
            f"{len(data.label_space)} ({list(data.label_space)})"
        )
    if int(data.labels.max()) >= model.class_count:
        raise TrainingError("label index exceeds the model's class count")

    apply_freeze(model, stage.freeze_scope)
    frozen = frozen_submodules(model, stage.freeze_scope)
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(
        trainable,
        lr=stage.learning_rate,
        betas=(stage.beta1, stage.beta2),
        weight_decay=stage.l2_coefficient,
    )

    history = TrainingHistory()
    for epoch in range(stage.epochs):
        started = time.monotonic()
        model.train()
        for module in frozen:
            module.eval()
        order = np.random.default_rng([seed, epoch]).permutation(len(data))
        epoch_loss, epoch_correct = 0.0, 0
        for start in range(0, len(data), stage.batch_size):
            stop = min(start + stage.batch_size, len(data))
            images, labels = _epoch_batch(data, order, start, stop, stage, seed, epoch)
            x = model.prepare_batch(images)
            y = torch.from_numpy(labels)
            logits = model(x)
            loss = F.cross_entropy(logits, y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += loss.item() * len(labels)
            epoch_correct += (logits.argmax(dim=1) == y).sum().item()

        if val_data is not None and len(val_data):
            val_loss, val_acc = _evaluate(model, val_data, stage.batch_size)
        else:
            val_loss = val_acc = None
        history.train_loss.append(epoch_loss / len(data))
        history.train_accuracy.append(epoch_correct / len(data))
        history.val_loss.append(val_loss)
        history.val_accuracy.append(val_acc)
        history.wall_clock.append(time.monotonic() - started)

    model.eval()
    return model, history


def run_schedule(
    model: StateClassifier,
    data: TrainingSet,
    schedule: Schedule,
    seed: int = 0,
    val_data: TrainingSet | None = None,
) -> tuple[StateClassifier, TrainingHistory]:
    """Run every stage of a schedule in order; histories are concatenated."""
    history = TrainingHistory()
    for stage_index, stage in enumerate(schedule.stages):
        model, stage_history = run_stage(
            model, data, stage, seed=seed * 1000 + stage_index, val_data=val_data
        )
        history.extend(stage_history)
    return model, history


def train_object_models(
    base_model: StateClassifier,
    manifests: Mapping[str, DatasetManifest],
    taxonomy: Taxonomy,
    schedule: Schedule | None = None,
    seed: int = 0,
    data_root: str | Path | None = None,
    exclude: Sequence[str] = ("dough",),
) -> dict[str, tuple[StateClassifier, TrainingHistory, tuple[str, ...]]]:
    """Fine-tune one model per object from a shared base checkpoint.

    Each object's head is replaced with one unit per admissible state and
    trained under the four-stage schedule on that object's manifest. Returns
    {object: (model, history, label_space)} for every object except those
    excluded (dough by default, leaving 16).
    """
    schedule = schedule or object_finetune_schedule()
    results: dict[str, tuple[StateClassifier, TrainingHistory, tuple[str, ...]]] = {}
    class_order = {name: i for i, name in enumerate(taxonomy.class_names())}
    for obj in taxonomy.object_names():
        if obj in exclude:
            continue
        if obj not in manifests:
            raise TrainingError(f"missing manifest for object {obj!r}")
        admissible = taxonomy.admissible_states(obj)
        if len(admissible) < 2:
            raise TrainingError(
                f"object {obj!r} has {len(admissible)} admissible states; need at least 2"
            )
        label_space = tuple(sorted(admissible, key=class_order.__getitem__))
        object_seed = seed * 100003 + _stable_key(obj) % 100003
        model = replace_head(base_model, len(label_space), seed=object_seed)
        data = TrainingSet.from_manifest(manifests[obj], "train", label_space, root=data_root)
        if len(data) == 0:
            raise TrainingError(f"object {obj!r} has an empty training split")
        try:
            val = TrainingSet.from_manifest(manifests[obj], "val", label_space, root=data_root)
        except ManifestError:
            val = None
        model, history = run_schedule(
            model, data, schedule, seed=object_seed, val_data=val if val and len(val) else None
        )
        results[obj] = (model, history, label_space)
    return results


def abbreviated(schedule: Schedule, max_epochs: int) -> Schedule:
    """Same stages with epoch counts capped; useful for smoke runs."""
    return Schedule(
        name=f"{schedule.name}-abbreviated",
        stages=tuple(replace(s, epochs=min(s.epochs, max_epochs)) for s in schedule.stages),
    )
