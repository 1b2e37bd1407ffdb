"""Soft voting across models and validation-driven weight search.

Votes are normalized weighted sums of per-model probability matrices, so
scaling every weight by the same positive factor changes nothing. The weight
search exhaustively scans a simplex grid and scores each candidate by
average per-class top-1 accuracy on validation data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .metrics import per_class_accuracy

__all__ = [
    "VotingError",
    "EnsembleWeights",
    "weighted_vote",
    "search_weights",
    "simplex_grid",
    "write_prediction_dump",
    "read_prediction_dump",
]


class VotingError(ValueError):
    pass


@dataclass(frozen=True)
class EnsembleWeights:
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if any(w < 0 for w in self.weights):
            raise VotingError(f"weights must be non-negative, got {self.weights}")
        if not any(w > 0 for w in self.weights):
            raise VotingError("at least one weight must be positive")

    def __len__(self) -> int:
        return len(self.weights)

    def to_json(self) -> dict:
        return {"weights": list(self.weights)}

    @classmethod
    def from_json(cls, doc: dict) -> "EnsembleWeights":
        return cls(weights=tuple(doc["weights"]))


def weighted_vote(probabilities: Sequence[np.ndarray], weights: EnsembleWeights) -> np.ndarray:
    """Normalized weighted sum of probability matrices; rows keep summing to 1."""
    if len(probabilities) == 0:
        raise VotingError("no probability matrices given")
    if len(weights) != len(probabilities):
        raise VotingError(
            f"{len(weights)} weights for {len(probabilities)} models"
        )
    matrices = [np.asarray(p, dtype=np.float64) for p in probabilities]
    shape = matrices[0].shape
    for i, m in enumerate(matrices):
        if m.ndim != 2 or m.shape != shape:
            raise VotingError(f"matrix {i} has shape {m.shape}, expected {shape}")
    total = sum(weights.weights)
    combined = np.zeros(shape, dtype=np.float64)
    for w, m in zip(weights.weights, matrices):
        combined += w * m
    return combined / total


def simplex_grid(model_count: int, step: float) -> Iterator[tuple[float, ...]]:
    """Weight vectors on the unit simplex with the given resolution.

    Vectors are multiples of 1/round(1/step) summing to 1, yielded in
    lexicographically ascending order; every one-hot corner is included.
    """
    if not 0 < step <= 1:
        raise VotingError(f"grid step must be in (0, 1], got {step}")
    if model_count < 1:
        raise VotingError("need at least one model")
    denominator = max(1, round(1 / step))

    def compositions(slots: int, remaining: int) -> Iterator[tuple[int, ...]]:
        if slots == 1:
            yield (remaining,)
            return
        for first in range(remaining + 1):
            for rest in compositions(slots - 1, remaining - first):
                yield (first, *rest)

    for counts in compositions(model_count, denominator):
        yield tuple(c / denominator for c in counts)


def search_weights(
    per_model_val_probs: Sequence[np.ndarray],
    labels: Sequence[int],
    grid_step: float = 0.1,
) -> EnsembleWeights:
    """Exhaustive simplex-grid search maximizing average per-class accuracy.

    Ties resolve to the lexicographically smallest weight vector. Because the
    one-hot corners are grid points, the winner is never worse than any
    single model on the same validation data.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        raise VotingError("empty validation set")
    matrices = [np.asarray(p, dtype=np.float64) for p in per_model_val_probs]
    if not matrices:
        raise VotingError("no probability matrices given")

    best_weights: tuple[float, ...] | None = None
    best_metric = -1.0
    for candidate in simplex_grid(len(matrices), grid_step):
        if not any(candidate):
            continue
        combined = weighted_vote(matrices, EnsembleWeights(candidate))
        _, macro = per_class_accuracy(combined, labels)
        if macro > best_metric:
            best_metric = macro
            best_weights = candidate
    assert best_weights is not None
    return EnsembleWeights(best_weights)


def write_prediction_dump(
    path: str | Path,
    sample_ids: Sequence[str],
    model_id: str,
    probs: np.ndarray,
) -> Path:
    """Line-delimited {sample_id, model_id, probs[C]} records."""
    probs = np.asarray(probs, dtype=np.float64)
    if len(sample_ids) != len(probs):
        raise VotingError(f"{len(sample_ids)} sample ids for {len(probs)} probability rows")
    path = Path(path)
    with path.open("w") as fh:
        for sid, row in zip(sample_ids, probs):
            fh.write(
                json.dumps({"sample_id": sid, "model_id": model_id, "probs": row.tolist()})
                + "\n"
            )
    return path


def read_prediction_dump(path: str | Path) -> tuple[list[str], str, np.ndarray]:
    """Read a dump back as (sample_ids, model_id, NxC probabilities)."""
    sample_ids: list[str] = []
    rows: list[list[float]] = []
    model_id = ""
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            sample_ids.append(doc["sample_id"])
            rows.append(doc["probs"])
            model_id = doc.get("model_id", model_id)
        except (json.JSONDecodeError, KeyError) as exc:
            raise VotingError(f"{path}:{line_no}: malformed prediction record: {exc}") from exc
    if not rows:
        raise VotingError(f"prediction dump {path} is empty")
    return sample_ids, model_id, np.asarray(rows, dtype=np.float64)
