"""State hierarchy: fine states, the 11 training classes, and per-object admissible states.

The canonical taxonomy ships as a JSON document with three arrays
(``fine_states``, ``classes``, ``objects``). The file, not this module, is
the source of truth for which states each object can take; this module
loads, validates, and queries it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

__all__ = [
    "CLASS_NAMES",
    "HIERARCHY_NODES",
    "FineState",
    "StateClass",
    "ObjectCategory",
    "Taxonomy",
    "TaxonomyError",
    "load_taxonomy",
    "save_taxonomy",
    "canonical_taxonomy_path",
    "load_canonical_taxonomy",
]

# Canonical class order; indices 0..10 are fixed by this tuple.
CLASS_NAMES = (
    "whole",
    "peeled",
    "floured",
    "sliced",
    "diced",
    "grated",
    "julienne",
    "juice",
    "creamy",
    "mixed",
    "other",
)

FINE_STATE_COUNT = 22
SELECTED_COUNT = 10

# Internal nodes of the hierarchy: two top-level branches, five refinements.
# Fine states hang off these as leaves.
HIERARCHY_NODES: dict[str, str | None] = {
    "shape change": None,
    "surface change": None,
    "separated": "shape change",
    "morphed": "shape change",
    "merged": "shape change",
    "color": "surface change",
    "texture": "surface change",
}


class TaxonomyError(ValueError):
    """Raised when a taxonomy document fails parsing or validation."""


@dataclass(frozen=True)
class FineState:
    name: str
    parent: str
    selected: bool


@dataclass(frozen=True)
class StateClass:
    name: str
    index: int
    fine_members: tuple[str, ...] = ()


@dataclass(frozen=True)
class ObjectCategory:
    name: str
    admissible_states: frozenset[str]
    aliases: tuple[str, ...] = ()

    @property
    def state_count(self) -> int:
        return len(self.admissible_states)


@dataclass(frozen=True)
class Taxonomy:
    """Validated, immutable view of a taxonomy document.

    ``version`` is the SHA-256 of the source document and is excluded from
    equality so that a save/load round trip compares equal structurally.
    """

    fine_states: tuple[FineState, ...]
    state_classes: tuple[StateClass, ...]
    objects: tuple[ObjectCategory, ...]
    notes: tuple[str, ...] = ()
    version: str = field(default="", compare=False)

    def classes(self) -> list[StateClass]:
        """The 11 classes in canonical index order; stable across calls."""
        return sorted(self.state_classes, key=lambda c: c.index)

    def class_names(self) -> list[str]:
        return [c.name for c in self.classes()]

    def class_index(self, name: str) -> int:
        for c in self.state_classes:
            if c.name == name:
                return c.index
        raise TaxonomyError(f"unknown state class {name!r}")

    def object_names(self) -> list[str]:
        return [o.name for o in self.objects]

    def resolve_object(self, name: str) -> ObjectCategory:
        for o in self.objects:
            if o.name == name or name in o.aliases:
                return o
        raise TaxonomyError(f"unknown object category {name!r}")

    def admissible_states(self, object_name: str) -> frozenset[str]:
        return self.resolve_object(object_name).admissible_states

    def class_for_fine_state(self, fine_name: str) -> str:
        for c in self.state_classes:
            if fine_name in c.fine_members:
                return c.name
        raise TaxonomyError(f"fine state {fine_name!r} is not mapped to any class")

    def to_document(self) -> dict:
        return {
            "fine_states": [
                {"name": f.name, "parent": f.parent, "selected": f.selected}
                for f in self.fine_states
            ],
            "classes": [
                {"name": c.name, "index": c.index, "fine_members": list(c.fine_members)}
                for c in self.classes()
            ],
            "objects": [
                {
                    "name": o.name,
                    **({"aliases": list(o.aliases)} if o.aliases else {}),
                    "admissible": sorted(o.admissible_states, key=CLASS_NAMES.index),
                }
                for o in self.objects
            ],
            "notes": list(self.notes),
        }


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise TaxonomyError(message)


def _parse_fine_states(entries: list) -> tuple[FineState, ...]:
    states: list[FineState] = []
    parents_seen: dict[str, set[str]] = {}
    for entry in entries:
        name = entry.get("name")
        parent = entry.get("parent")
        selected = entry.get("selected", False)
        _require(isinstance(name, str) and name, f"fine state with missing name: {entry!r}")
        _require(
            parent in HIERARCHY_NODES,
            f"fine state {name!r} has orphan parent {parent!r}; "
            f"known hierarchy nodes: {sorted(HIERARCHY_NODES)}",
        )
        parents_seen.setdefault(name, set()).add(parent)
        states.append(FineState(name=name, parent=parent, selected=bool(selected)))

    for name, parents in parents_seen.items():
        if len(parents) > 1:
            raise TaxonomyError(
                f"fine state {name!r} has {len(parents)} parents "
                f"({sorted(parents)}); the hierarchy must be a tree"
            )
    names = [s.name for s in states]
    dupes = sorted({n for n in names if names.count(n) > 1})
    _require(not dupes, f"duplicate fine state entries: {dupes}")
    _require(
        len(states) == FINE_STATE_COUNT,
        f"expected {FINE_STATE_COUNT} fine states, found {len(states)}",
    )
    selected = [s.name for s in states if s.selected]
    _require(
        len(selected) == SELECTED_COUNT,
        f"expected {SELECTED_COUNT} selected fine states, found {len(selected)}: {selected}",
    )
    return tuple(states)


def _parse_classes(entries: list, fine_states: tuple[FineState, ...]) -> tuple[StateClass, ...]:
    classes: list[StateClass] = []
    fine_names = {f.name for f in fine_states}
    selected_names = {f.name for f in fine_states if f.selected}
    for entry in entries:
        name = entry.get("name")
        index = entry.get("index")
        members = tuple(entry.get("fine_members", ()))
        _require(name in CLASS_NAMES, f"unknown state class {name!r}")
        _require(isinstance(index, int), f"class {name!r} has non-integer index {index!r}")
        unknown = sorted(set(members) - fine_names)
        _require(not unknown, f"class {name!r} lists unknown fine members: {unknown}")
        classes.append(StateClass(name=name, index=index, fine_members=members))

    names = [c.name for c in classes]
    _require(len(classes) == len(CLASS_NAMES), f"expected 11 classes, found {len(classes)}")
    _require(sorted(names) == sorted(CLASS_NAMES), f"class names must be exactly {CLASS_NAMES}")
    indices = sorted(c.index for c in classes)
    _require(indices == list(range(11)), f"class indices must be a bijection onto 0..10, got {indices}")
    for c in classes:
        _require(
            CLASS_NAMES[c.index] == c.name,
            f"class {c.name!r} has index {c.index}; canonical order requires "
            f"index {CLASS_NAMES.index(c.name)}",
        )

    membership: dict[str, str] = {}
    for c in classes:
        for m in c.fine_members:
            if m in membership:
                raise TaxonomyError(
                    f"fine state {m!r} is a member of both {membership[m]!r} and {c.name!r}"
                )
            membership[m] = c.name
        selected_members = [m for m in c.fine_members if m in selected_names]
        if c.name == "other":
            _require(
                not selected_members,
                f"class 'other' must not contain selected fine states: {selected_members}",
            )
        else:
            _require(
                len(selected_members) == 1,
                f"class {c.name!r} must contain exactly one selected fine state, "
                f"found {selected_members}",
            )
    return tuple(classes)


def _parse_objects(entries: list) -> tuple[ObjectCategory, ...]:
    objects: list[ObjectCategory] = []
    for entry in entries:
        name = entry.get("name")
        admissible = entry.get("admissible", [])
        aliases = tuple(entry.get("aliases", ()))
        _require(isinstance(name, str) and name, f"object with missing name: {entry!r}")
        unknown = sorted(set(admissible) - set(CLASS_NAMES))
        _require(not unknown, f"object {name!r} lists unknown states: {unknown}")
        _require(len(admissible) == len(set(admissible)), f"object {name!r} repeats states")
        _require(admissible, f"object {name!r} has an empty admissible set")
        objects.append(
            ObjectCategory(name=name, admissible_states=frozenset(admissible), aliases=aliases)
        )
    names = [o.name for o in objects]
    dupes = sorted({n for n in names if names.count(n) > 1})
    _require(not dupes, f"duplicate object entries: {dupes}")
    covered = set().union(*(o.admissible_states for o in objects)) if objects else set()
    missing = sorted(set(CLASS_NAMES) - covered)
    _require(not missing, f"no object admits states {missing}; the union must cover all 11 classes")
    return tuple(objects)


def validate_taxonomy(document: dict, version: str = "") -> Taxonomy:
    """Build a Taxonomy from a parsed document, enforcing every invariant."""
    if not isinstance(document, dict):
        raise TaxonomyError(f"taxonomy document must be an object, got {type(document).__name__}")
    for key in ("fine_states", "classes", "objects"):
        _require(key in document, f"taxonomy document is missing the {key!r} array")
        _require(isinstance(document[key], list), f"taxonomy field {key!r} must be an array")
    fine_states = _parse_fine_states(document["fine_states"])
    classes = _parse_classes(document["classes"], fine_states)
    objects = _parse_objects(document["objects"])
    notes = tuple(document.get("notes", ()))
    return Taxonomy(
        fine_states=fine_states,
        state_classes=classes,
        objects=objects,
        notes=notes,
        version=version,
    )


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load and validate a taxonomy file.

    Raises:
        TaxonomyError: on parse failure or any invariant violation; the
            message names the offending entry.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise TaxonomyError(f"cannot read taxonomy file {path}: {exc}") from exc
    try:
        document = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"taxonomy file {path} is not valid JSON: {exc}") from exc
    return validate_taxonomy(document, version=hashlib.sha256(raw).hexdigest())


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> Path:
    """Write a taxonomy document; load_taxonomy(save_taxonomy(t)) == t."""
    path = Path(path)
    path.write_text(json.dumps(taxonomy.to_document(), indent=2, sort_keys=False) + "\n")
    return path


def canonical_taxonomy_path() -> Path:
    """Path of the taxonomy file shipped with the package."""
    return Path(str(resources.files("statechef").joinpath("data/canonical_taxonomy.json")))


def load_canonical_taxonomy() -> Taxonomy:
    return load_taxonomy(canonical_taxonomy_path())
