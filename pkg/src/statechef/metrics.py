"""Top-k accuracy, per-class accuracy, confusion matrices, and table reports.

Probability ties are broken toward the lower class index so every metric is
an exact, reproducible function of its inputs. "Macro" accuracy always means
the unweighted mean over classes (or over objects in per-object tables);
averages in rendered tables are recomputed from the rows, never stored.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "EvaluationError",
    "EvaluationReport",
    "topk_accuracy",
    "per_class_accuracy",
    "confusion_matrix",
    "evaluate",
    "render_report",
    "TABLE_LAYOUTS",
]


class EvaluationError(ValueError):
    pass


def _check_inputs(probs: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2:
        raise EvaluationError(f"probabilities must be an NxC matrix, got shape {probs.shape}")
    if labels.ndim != 1 or len(labels) != len(probs):
        raise EvaluationError(
            f"labels length {labels.shape} does not match {len(probs)} probability rows"
        )
    if len(probs) == 0:
        raise EvaluationError("empty evaluation input")
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise EvaluationError("label index outside the class range")
    return probs, labels


def topk_accuracy(probs: np.ndarray, labels: Sequence[int], k: int) -> float:
    """Fraction of rows whose true label ranks among the k most probable classes.

    Equal probabilities rank the lower class index first.
    """
    probs, labels = _check_inputs(probs, np.asarray(labels))
    if not 1 <= k <= probs.shape[1]:
        raise EvaluationError(f"k must be in 1..{probs.shape[1]}, got {k}")
    # Stable sort keeps lower indices first among equal values.
    ranked = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    hits = (ranked == labels[:, None]).any(axis=1)
    return float(hits.mean())


def per_class_accuracy(
    probs: np.ndarray,
    labels: Sequence[int],
    class_names: Sequence[str] | None = None,
) -> tuple[dict, float]:
    """Per-class top-1 accuracy plus the unweighted macro mean.

    Classes absent from the labels are excluded from both the map and the
    macro average.
    """
    probs, labels = _check_inputs(probs, np.asarray(labels))
    predictions = probs.argmax(axis=1)  # argmax takes the first (lowest) index on ties
    per_class: dict = {}
    for cls in sorted(set(labels.tolist())):
        mask = labels == cls
        key = class_names[cls] if class_names is not None else cls
        per_class[key] = float((predictions[mask] == cls).mean())
    macro = float(np.mean(list(per_class.values())))
    return per_class, macro


def confusion_matrix(probs: np.ndarray, labels: Sequence[int], class_count: int | None = None) -> np.ndarray:
    """Counts matrix where entry (i, j) tallies true class i predicted as j."""
    probs, labels = _check_inputs(probs, np.asarray(labels))
    size = class_count if class_count is not None else probs.shape[1]
    predictions = probs.argmax(axis=1)
    matrix = np.zeros((size, size), dtype=np.int64)
    np.add.at(matrix, (labels, predictions), 1)
    return matrix


@dataclass
class EvaluationReport:
    topk: dict[int, float]
    per_class: dict[str, float]
    macro: float
    confusion: np.ndarray
    sample_count: int
    class_names: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "topk": {str(k): v for k, v in self.topk.items()},
            "per_class": self.per_class,
            "macro": self.macro,
            "confusion": self.confusion.tolist(),
            "sample_count": self.sample_count,
            "class_names": list(self.class_names),
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvaluationReport":
        return cls(
            topk={int(k): v for k, v in doc["topk"].items()},
            per_class=dict(doc["per_class"]),
            macro=doc["macro"],
            confusion=np.asarray(doc["confusion"], dtype=np.int64),
            sample_count=doc["sample_count"],
            class_names=tuple(doc["class_names"]),
        )


def evaluate(
    probs: np.ndarray,
    labels: Sequence[int],
    class_names: Sequence[str],
) -> EvaluationReport:
    """Full report: top-1/2/3, per-class and macro accuracy, confusion counts."""
    probs_arr, labels_arr = _check_inputs(probs, np.asarray(labels))
    if probs_arr.shape[1] != len(class_names):
        raise EvaluationError(
            f"{probs_arr.shape[1]} probability columns vs {len(class_names)} class names"
        )
    ks = [k for k in (1, 2, 3) if k <= probs_arr.shape[1]]
    topk = {k: topk_accuracy(probs_arr, labels_arr, k) for k in ks}
    per_class, macro = per_class_accuracy(probs_arr, labels_arr, class_names)
    return EvaluationReport(
        topk=topk,
        per_class=per_class,
        macro=macro,
        confusion=confusion_matrix(probs_arr, labels_arr),
        sample_count=len(labels_arr),
        class_names=tuple(class_names),
    )


# Per-object table layouts: required numeric columns and whether an average
# row is appended. Values are percentages in the row dicts.
TABLE_LAYOUTS: Mapping[str, dict] = {
    "table1": {"key": "model", "columns": ("dataset_top1", "dataset_top2", "imagenet_top1", "imagenet_top2"), "average": False},
    "table2": {"key": "object", "columns": ("top1", "voting", "states", "test_set"), "average": True},
    "table3": {"key": "object", "columns": ("top1", "top2", "top3"), "average": True},
}


def _layout_rows(rows: Sequence[Mapping], layout: str) -> tuple[str, tuple[str, ...], bool]:
    if layout not in TABLE_LAYOUTS:
        raise EvaluationError(f"unknown layout {layout!r}; known: {sorted(TABLE_LAYOUTS)}")
    if not rows:
        raise EvaluationError(f"layout {layout!r} given an empty report")
    spec = TABLE_LAYOUTS[layout]
    for row in rows:
        missing = [c for c in (spec["key"], *spec["columns"]) if c not in row or row[c] is None]
        if missing:
            raise EvaluationError(f"row {row.get(spec['key'], row)!r} is missing fields {missing}")
    return spec["key"], spec["columns"], spec["average"]


def table_averages(rows: Sequence[Mapping], layout: str) -> dict[str, float]:
    """Unweighted column means for a per-object table layout."""
    _, columns, has_average = _layout_rows(rows, layout)
    if not has_average:
        raise EvaluationError(f"layout {layout!r} has no average row")
    return {c: float(np.mean([row[c] for row in rows])) for c in columns}


def render_report(report: "EvaluationReport | Sequence[Mapping]", layout: str = "classes", fmt: str = "text") -> str:
    """Deterministic text or JSON rendering of a report.

    ``layout`` "classes" takes an EvaluationReport; the per-object layouts
    take a sequence of row mappings and append a freshly computed averages
    row.
    """
    if fmt not in ("text", "json"):
        raise EvaluationError(f"unknown format {fmt!r}")
    if layout == "classes":
        if not isinstance(report, EvaluationReport):
            raise EvaluationError("layout 'classes' requires an EvaluationReport")
        if fmt == "json":
            return json.dumps(report.to_json(), indent=2, sort_keys=True)
        lines = [f"samples: {report.sample_count}"]
        for k in sorted(report.topk):
            lines.append(f"top-{k} accuracy: {100 * report.topk[k]:.1f}%")
        lines.append(f"macro (average class) accuracy: {100 * report.macro:.1f}%")
        lines.append("per-class accuracy:")
        for name, acc in report.per_class.items():
            lines.append(f"  {name:<12} {100 * acc:.1f}%")
        return "\n".join(lines) + "\n"

    rows = list(report)  # type: ignore[arg-type]
    key, columns, has_average = _layout_rows(rows, layout)
    if fmt == "json":
        doc = {"layout": layout, "rows": rows}
        if has_average:
            doc["average"] = table_averages(rows, layout)
        return json.dumps(doc, indent=2, sort_keys=True, default=float)

    widths = {key: max(len(key), *(len(str(r[key])) for r in rows))}
    header = [key.ljust(widths[key])] + [c.rjust(9) for c in columns]
    lines = ["  ".join(header)]
    for row in rows:
        cells = [str(row[key]).ljust(widths[key])]
        cells += [f"{row[c]:9.1f}" for c in columns]
        lines.append("  ".join(cells))
    if has_average:
        averages = table_averages(rows, layout)
        cells = ["average".ljust(widths[key])] + [f"{averages[c]:9.1f}" for c in columns]
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"
