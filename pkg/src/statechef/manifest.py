"""Labeled image collections: records, stratified splits, stats, and imports.

Manifests are value-semantic: operations return new manifests and never
mutate their input. The on-disk format is line-delimited JSON, one record
per line with fields id, uri, object, state, split, source, flags, width,
height.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence
from urllib.parse import urlparse

import numpy as np

from .taxonomy import CLASS_NAMES, Taxonomy

__all__ = [
    "SPLITS",
    "SOURCES",
    "RECORD_FLAGS",
    "ManifestError",
    "SampleRecord",
    "DatasetManifest",
    "CrawlImport",
    "stratified_split",
    "class_stats",
    "import_crawl_list",
    "sample_imagenet_subset",
    "load_manifest",
    "save_manifest",
    "load_image",
]

SPLITS = ("train", "test", "val", "unassigned")
SOURCES = ("web-crawl", "imagenet", "synthetic")
RECORD_FLAGS = ("multi_state", "ambiguous", "mislabeled_suspect")

# Split priority used to break remainder ties: train first, then test.
_SPLIT_ORDER = ("train", "test", "val")


class ManifestError(ValueError):
    """Raised for malformed records, manifests, or split requests."""


@dataclass(frozen=True)
class SampleRecord:
    id: str
    uri: str
    object: str
    state: str
    split: str = "unassigned"
    source: str = "synthetic"
    flags: frozenset[str] = frozenset()
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("record id must be non-empty")
        if self.state not in CLASS_NAMES:
            raise ManifestError(f"record {self.id!r}: unknown state {self.state!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"record {self.id!r}: unknown split {self.split!r}")
        if self.source not in SOURCES:
            raise ManifestError(f"record {self.id!r}: unknown source {self.source!r}")
        bad_flags = set(self.flags) - set(RECORD_FLAGS)
        if bad_flags:
            raise ManifestError(f"record {self.id!r}: unknown flags {sorted(bad_flags)}")
        if not isinstance(self.flags, frozenset):
            object.__setattr__(self, "flags", frozenset(self.flags))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "uri": self.uri,
            "object": self.object,
            "state": self.state,
            "split": self.split,
            "source": self.source,
            "flags": sorted(self.flags),
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SampleRecord":
        return cls(
            id=doc["id"],
            uri=doc["uri"],
            object=doc["object"],
            state=doc["state"],
            split=doc.get("split", "unassigned"),
            source=doc.get("source", "synthetic"),
            flags=frozenset(doc.get("flags", ())),
            width=doc.get("width"),
            height=doc.get("height"),
        )


@dataclass(frozen=True)
class DatasetManifest:
    records: tuple[SampleRecord, ...] = ()
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    taxonomy_version: str = ""

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        ids = [r.id for r in self.records]
        if len(ids) != len(set(ids)):
            dupes = sorted({i for i in ids if ids.count(i) > 1})[:5]
            raise ManifestError(f"duplicate record ids in manifest: {dupes}")

    def __len__(self) -> int:
        return len(self.records)

    def split_records(self, split: str) -> tuple[SampleRecord, ...]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        return tuple(r for r in self.records if r.split == split)

    def split_sizes(self) -> dict[str, int]:
        sizes = {s: 0 for s in SPLITS}
        for r in self.records:
            sizes[r.split] += 1
        return sizes

    def validate_against(self, taxonomy: Taxonomy) -> None:
        """Check object names and state admissibility against a taxonomy.

        States equal to "other" are always allowed; anything else must be in
        the object's admissible set.
        """
        for r in self.records:
            category = taxonomy.resolve_object(r.object)
            if r.state != "other" and r.state not in category.admissible_states:
                raise ManifestError(
                    f"record {r.id!r}: state {r.state!r} is not admissible for "
                    f"object {r.object!r} (allowed: {sorted(category.admissible_states)})"
                )


def _check_ratios(ratios: Sequence[float]) -> tuple[float, float, float]:
    if len(ratios) != 3:
        raise ManifestError(f"expected 3 split ratios, got {len(ratios)}")
    if any(r < 0 for r in ratios):
        raise ManifestError(f"split ratios must be non-negative, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ManifestError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    return (float(ratios[0]), float(ratios[1]), float(ratios[2]))


def _largest_remainder(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Apportion n into three counts; ties go to train, then test."""
    quotas = [n * r for r in ratios]
    base = [math.floor(q) for q in quotas]
    leftover = n - sum(base)
    order = sorted(range(3), key=lambda i: (-(quotas[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return (base[0], base[1], base[2])


def _stable_key(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


def stratified_split(
    manifest: DatasetManifest,
    ratios: Sequence[float] | None = None,
    seed: int = 0,
    allow_reassign: bool = False,
) -> DatasetManifest:
    """Assign train/test/val splits per state class.

    Each class is apportioned by largest-remainder rounding of
    ratio x class_count, so every per-split class count is within one
    rounding unit of its exact quota. Assignment is a deterministic
    function of (seed, record ids): records are canonicalized by sorted id
    before the seeded shuffle, so record order in the manifest is
    irrelevant.
    """
    ratios = _check_ratios(ratios if ratios is not None else manifest.ratios)
    assigned = [r.id for r in manifest.records if r.split != "unassigned"]
    if assigned and not allow_reassign:
        raise ManifestError(
            f"{len(assigned)} records already assigned (e.g. {assigned[0]!r}); "
            "pass allow_reassign=True to re-split"
        )

    by_state: dict[str, list[SampleRecord]] = {}
    for r in manifest.records:
        by_state.setdefault(r.state, []).append(r)

    new_split: dict[str, str] = {}
    for state, group in by_state.items():
        counts = _largest_remainder(len(group), ratios)
        rng = np.random.default_rng([seed, _stable_key(state)])
        ordered = sorted(group, key=lambda r: r.id)
        perm = rng.permutation(len(ordered))
        shuffled = [ordered[i] for i in perm]
        cursor = 0
        for split_name, count in zip(_SPLIT_ORDER, counts):
            for r in shuffled[cursor : cursor + count]:
                new_split[r.id] = split_name
            cursor += count

    records = tuple(replace(r, split=new_split[r.id]) for r in manifest.records)
    return DatasetManifest(records=records, ratios=ratios, taxonomy_version=manifest.taxonomy_version)


def class_stats(manifest: DatasetManifest) -> "OrderedDict[str, int]":
    """Histogram of records over the 11 state classes, in canonical order."""
    counts: "OrderedDict[str, int]" = OrderedDict((name, 0) for name in CLASS_NAMES)
    for r in manifest.records:
        counts[r.state] += 1
    return counts


@dataclass(frozen=True)
class CrawlImport:
    """Result of a crawl-list import: parsed records plus line-level errors."""

    records: tuple[SampleRecord, ...]
    errors: tuple[tuple[int, str], ...] = ()  # (line number, reason)


def _uri_is_well_formed(line: str) -> bool:
    if any(c.isspace() for c in line):
        return False
    parsed = urlparse(line)
    if parsed.scheme in ("http", "https", "ftp"):
        return bool(parsed.netloc)
    if parsed.scheme == "file":
        return bool(parsed.path)
    # No scheme: accept plain paths (relative or absolute).
    return not parsed.scheme


def import_crawl_list(path: str | Path, object_name: str, keyword_state: str) -> CrawlImport:
    """Turn a one-URI-per-line crawl export into pending sample records.

    Every record gets split=unassigned and source=web-crawl with the
    keyword state as its provisional label. Malformed lines are reported
    with their line numbers rather than aborting the import.
    """
    path = Path(path)
    if keyword_state not in CLASS_NAMES:
        raise ManifestError(f"unknown keyword state {keyword_state!r}")
    try:
        text = path.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read crawl list {path}: {exc}") from exc

    records: list[SampleRecord] = []
    errors: list[tuple[int, str]] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if not _uri_is_well_formed(line):
            errors.append((line_no, f"malformed URI: {raw!r}"))
            continue
        digest = hashlib.sha256(line.encode()).hexdigest()[:12]
        records.append(
            SampleRecord(
                id=f"{object_name}-{keyword_state}-{digest}",
                uri=line,
                object=object_name,
                state=keyword_state,
                split="unassigned",
                source="web-crawl",
            )
        )
    return CrawlImport(records=tuple(records), errors=tuple(errors))


def sample_imagenet_subset(
    categories: Sequence[str],
    per_category: int,
    pool: DatasetManifest,
    seed: int = 0,
) -> DatasetManifest:
    """Uniformly sample per_category records for each category from a pool.

    Selection is without replacement and deterministic under the seed; a
    category with too few pool records raises an error naming it.
    """
    if per_category < 0:
        raise ManifestError(f"per_category must be non-negative, got {per_category}")
    by_object: dict[str, list[SampleRecord]] = {}
    for r in pool.records:
        by_object.setdefault(r.object, []).append(r)

    chosen: list[SampleRecord] = []
    for idx, category in enumerate(categories):
        candidates = sorted(by_object.get(category, []), key=lambda r: r.id)
        if len(candidates) < per_category:
            raise ManifestError(
                f"pool has only {len(candidates)} records for category "
                f"{category!r}, need {per_category}"
            )
        if per_category == 0:
            continue
        rng = np.random.default_rng([seed, _stable_key(category)])
        picks = rng.choice(len(candidates), size=per_category, replace=False)
        chosen.extend(candidates[i] for i in sorted(picks))
    return DatasetManifest(records=tuple(chosen), taxonomy_version=pool.taxonomy_version)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for r in manifest.records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")
    return path


def load_manifest(
    path: str | Path,
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    taxonomy_version: str = "",
) -> DatasetManifest:
    path = Path(path)
    records: list[SampleRecord] = []
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{line_no}: invalid JSON record: {exc}") from exc
        try:
            records.append(SampleRecord.from_json(doc))
        except (KeyError, ManifestError) as exc:
            raise ManifestError(f"{path}:{line_no}: {exc}") from exc
    return DatasetManifest(records=tuple(records), ratios=ratios, taxonomy_version=taxonomy_version)


def load_image(uri: str, root: str | Path | None = None) -> np.ndarray:
    """Load an image referenced by a record URI into an HxWx3 array.

    Supports plain paths, file:// URIs, and .npy arrays. Paths are resolved
    against ``root`` when given.
    """
    parsed = urlparse(uri)
    if parsed.scheme == "file":
        path = Path(parsed.path)
    elif parsed.scheme in ("http", "https", "ftp"):
        raise ManifestError(f"remote image URIs are not fetched here: {uri!r}")
    else:
        path = Path(uri)
    if root is not None and not path.is_absolute():
        path = Path(root) / path

    if path.suffix == ".npy":
        array = np.load(path)
    else:
        from PIL import Image

        with Image.open(path) as img:
            array = np.asarray(img.convert("RGB"))
    if array.ndim != 3 or array.shape[2] != 3:
        raise ManifestError(f"image {uri!r} is not HxWx3, got shape {array.shape}")
    return array


def records_as_arrays(
    records: Iterable[SampleRecord],
    label_space: Sequence[str],
    root: str | Path | None = None,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Materialize records as (images, labels, sample_ids) for training.

    Labels are indices into ``label_space``; a record whose state is not in
    the label space is an error.
    """
    index = {name: i for i, name in enumerate(label_space)}
    images: list[np.ndarray] = []
    labels: list[int] = []
    ids: list[str] = []
    for r in records:
        if r.state not in index:
            raise ManifestError(
                f"record {r.id!r} has state {r.state!r} outside the label space {list(label_space)}"
            )
        images.append(load_image(r.uri, root=root))
        labels.append(index[r.state])
        ids.append(r.id)
    if not images:
        return np.zeros((0, 1, 1, 3), dtype=np.uint8), np.zeros(0, dtype=np.int64), ids
    return np.stack(images), np.asarray(labels, dtype=np.int64), ids
