"""Synthetic fixtures: procedural texture images and proportioned manifests.

The texture dataset gives each of the 11 classes a visually distinct
procedural pattern with per-image jitter, small enough to overfit in
seconds. The proportioned manifest mirrors the published class balance
(two classes above 1000 images, the rest in the 700..1000 band, 9309
total) without any real image data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AugmentationConfig
from .manifest import DatasetManifest, SampleRecord, save_manifest
from .taxonomy import CLASS_NAMES, Taxonomy, load_canonical_taxonomy
from .training import Schedule, TrainingSet, TrainingStage

__all__ = [
    "texture_image",
    "texture_dataset",
    "write_texture_dataset",
    "proportioned_class_counts",
    "proportioned_manifest",
    "abbreviated_two_phase",
]

# Class counts matching the published balance: 9309 total, "whole" and
# "sliced" above 1000, every other class in the 700..1000 band.
_CLASS_COUNTS = {
    "whole": 1200,
    "peeled": 780,
    "floured": 700,
    "sliced": 1050,
    "diced": 920,
    "grated": 800,
    "julienne": 730,
    "juice": 810,
    "creamy": 860,
    "mixed": 709,
    "other": 750,
}


def texture_image(class_index: int, rng: np.random.Generator, size: int = 32) -> np.ndarray:
    """One uint8 HxWx3 image of the class's procedural texture family."""
    if not 0 <= class_index < 11:
        raise ValueError(f"class_index must be in 0..10, got {class_index}")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    freq = rng.uniform(0.8, 1.2)
    base: np.ndarray
    if class_index == 0:  # horizontal stripes
        base = np.sin(yy * 0.9 * freq + phase)
    elif class_index == 1:  # vertical stripes
        base = np.sin(xx * 0.9 * freq + phase)
    elif class_index == 2:  # checkerboard
        cell = max(2, int(4 * freq))
        base = (((yy // cell) + (xx // cell)) % 2) * 2.0 - 1.0
    elif class_index == 3:  # diagonal stripes
        base = np.sin((xx + yy) * 0.7 * freq + phase)
    elif class_index == 4:  # dots
        base = np.sin(yy * 1.6 * freq + phase) * np.sin(xx * 1.6 * freq + phase)
    elif class_index == 5:  # radial rings
        r = np.hypot(yy - size / 2, xx - size / 2)
        base = np.sin(r * 1.1 * freq + phase)
    elif class_index == 6:  # vertical gradient
        base = (yy / size) * 2.0 - 1.0
    elif class_index == 7:  # horizontal gradient
        base = (xx / size) * 2.0 - 1.0
    elif class_index == 8:  # coarse blocks
        cell = max(4, int(8 * freq))
        block_rng = np.random.default_rng(rng.integers(0, 2**32))
        blocks = block_rng.uniform(-1, 1, (size // cell + 1, size // cell + 1))
        base = blocks[(yy // cell).astype(int), (xx // cell).astype(int)]
    elif class_index == 9:  # anti-diagonal stripes
        base = np.sin((xx - yy) * 0.7 * freq + phase)
    else:  # high-frequency speckle
        base = np.sin(yy * 3.1 * freq + phase) * np.cos(xx * 2.7 * freq)

    base = base + rng.normal(0, 0.08, base.shape)
    channel_mix = np.array(
        [
            [1.0, 0.2, 0.1],
            [0.1, 1.0, 0.2],
            [0.2, 0.1, 1.0],
        ]
    )[class_index % 3]
    image = (base[..., None] * channel_mix[None, None, :] + 1.0) / 2.0
    return (np.clip(image, 0, 1) * 255).astype(np.uint8)


def texture_dataset(
    per_class: int = 20,
    size: int = 32,
    seed: int = 0,
    class_names: Sequence[str] = CLASS_NAMES,
) -> TrainingSet:
    """In-memory, balanced 11-class texture dataset."""
    rng = np.random.default_rng(seed)
    images, labels, ids = [], [], []
    for class_index in range(len(class_names)):
        for j in range(per_class):
            images.append(texture_image(class_index, rng, size=size))
            labels.append(class_index)
            ids.append(f"tex-{class_names[class_index]}-{j:03d}")
    return TrainingSet(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=np.int64),
        sample_ids=tuple(ids),
        label_space=tuple(class_names),
    )


def write_texture_dataset(
    root: str | Path,
    per_class: int = 20,
    size: int = 32,
    seed: int = 0,
    taxonomy: Taxonomy | None = None,
    split: str = "train",
) -> DatasetManifest:
    """Materialize the texture dataset as .npy files plus a manifest file.

    Each record's object is a category that actually admits its state, so
    the manifest validates against the canonical taxonomy.
    """
    taxonomy = taxonomy or load_canonical_taxonomy()
    root = Path(root)
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    data = texture_dataset(per_class=per_class, size=size, seed=seed)
    host_object = _object_admitting(taxonomy)
    records = []
    for image, label, sample_id in zip(data.images, data.labels, data.sample_ids):
        state = data.label_space[label]
        path = images_dir / f"{sample_id}.npy"
        np.save(path, image)
        records.append(
            SampleRecord(
                id=sample_id,
                uri=str(path),
                object=host_object[state],
                state=state,
                split=split,
                source="synthetic",
                width=size,
                height=size,
            )
        )
    manifest = DatasetManifest(records=tuple(records), taxonomy_version=taxonomy.version)
    save_manifest(manifest, root / "manifest.jsonl")
    return manifest


def _object_admitting(taxonomy: Taxonomy) -> dict[str, str]:
    """First object (by canonical order) admitting each state; other -> potato."""
    mapping: dict[str, str] = {}
    for state in CLASS_NAMES:
        for obj in taxonomy.objects:
            if state in obj.admissible_states:
                mapping[state] = obj.name
                break
        else:
            mapping[state] = taxonomy.object_names()[0]
    return mapping


def proportioned_class_counts(total: int = 9309) -> dict[str, int]:
    """Per-class record counts mirroring the published class statistics."""
    counts = dict(_CLASS_COUNTS)
    if total != sum(_CLASS_COUNTS.values()):
        scale = total / sum(_CLASS_COUNTS.values())
        counts = {k: int(round(v * scale)) for k, v in _CLASS_COUNTS.items()}
        drift = total - sum(counts.values())
        counts["whole"] += drift
    return counts


def proportioned_manifest(
    total: int = 9309,
    taxonomy: Taxonomy | None = None,
    seed: int = 0,
) -> DatasetManifest:
    """Unassigned manifest with the published class proportions.

    Record ids are shuffled into an arbitrary but deterministic order so
    split tests cannot accidentally rely on grouped input.
    """
    taxonomy = taxonomy or load_canonical_taxonomy()
    host_object = _object_admitting(taxonomy)
    records = []
    for state, count in proportioned_class_counts(total).items():
        for j in range(count):
            sample_id = f"{state}-{j:05d}"
            records.append(
                SampleRecord(
                    id=sample_id,
                    uri=f"mem://{sample_id}",
                    object=host_object[state],
                    state=state,
                    split="unassigned",
                    source="synthetic",
                )
            )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    return DatasetManifest(
        records=tuple(records[i] for i in order),
        taxonomy_version=taxonomy.version,
    )


def abbreviated_two_phase(
    stage1_epochs: int = 25,
    stage2_epochs: int = 10,
    stage1_lr: float = 0.003,
    stage2_lr: float = 0.0005,
    batch_size: int = 32,
    augmentation: AugmentationConfig | None = None,
) -> Schedule:
    """Scaled-down two-phase transfer schedule for the texture fixture.

    Keeps the shape of the full schedule (backbone frozen, then everything
    unfrozen) with epoch counts and learning rates sized for a tiny model.
    """
    augmentation = augmentation if augmentation is not None else AugmentationConfig.disabled()
    return Schedule(
        name="two-phase-abbreviated",
        stages=(
            TrainingStage(
                freeze_scope="backbone_only",
                learning_rate=stage1_lr,
                epochs=stage1_epochs,
                batch_size=batch_size,
                augmentation=augmentation,
            ),
            TrainingStage(
                freeze_scope="none",
                learning_rate=stage2_lr,
                epochs=stage2_epochs,
                batch_size=batch_size,
                augmentation=augmentation,
            ),
        ),
    )
