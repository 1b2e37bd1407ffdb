"""Semi-automatic labeling: model proposals, review decisions, and export.

Proposals and decisions live in append-only line-delimited logs. A decision
is fsynced to disk before it is applied or acknowledged, so replaying the
logs after a crash reconstructs the identical store. Review sessions apply
decisions through compare-and-set versioning: each applied decision bumps
the session version by exactly one, and a stale expected version is a
retryable conflict, never a lost or double-applied decision.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .manifest import DatasetManifest, SampleRecord, load_image
from .taxonomy import CLASS_NAMES

__all__ = [
    "LabelingError",
    "VersionConflictError",
    "LabelProposal",
    "ReviewSession",
    "ProposalStore",
    "propose_labels",
    "export_accepted",
]

PROPOSAL_STATUSES = ("pending", "accepted", "overridden", "discarded")
DECISIONS = ("accept", "override", "discard", "revert")


class LabelingError(ValueError):
    pass


class VersionConflictError(LabelingError):
    """Stale expected_version: the session moved on; refresh and retry."""


@dataclass
class LabelProposal:
    sample_id: str
    proposed: tuple[tuple[str, float], ...]  # (state, probability), non-increasing
    model_ref: str
    status: str = "pending"
    final_state: str | None = None
    record: SampleRecord | None = None  # source record snapshot, used for export

    def __post_init__(self):
        if not self.proposed:
            raise LabelingError(f"proposal {self.sample_id!r} has no proposed states")
        probs = [p for _, p in self.proposed]
        if any(b > a + 1e-12 for a, b in zip(probs, probs[1:])):
            raise LabelingError(
                f"proposal {self.sample_id!r}: probabilities must be non-increasing, got {probs}"
            )
        for state, _ in self.proposed:
            if state not in CLASS_NAMES:
                raise LabelingError(f"proposal {self.sample_id!r}: unknown state {state!r}")
        self._check_status()

    def _check_status(self) -> None:
        if self.status not in PROPOSAL_STATUSES:
            raise LabelingError(f"unknown proposal status {self.status!r}")
        top = self.proposed[0][0]
        if self.status == "accepted" and self.final_state != top:
            raise LabelingError(
                f"accepted proposal {self.sample_id!r} must carry its top state {top!r}"
            )
        if self.status == "overridden" and (self.final_state is None or self.final_state == top):
            raise LabelingError(
                f"overridden proposal {self.sample_id!r} needs a final state different from {top!r}"
            )
        if self.status in ("pending", "discarded") and self.final_state is not None:
            raise LabelingError(f"{self.status} proposal {self.sample_id!r} cannot carry a final state")

    def to_json(self) -> dict:
        doc = {
            "sample_id": self.sample_id,
            "proposed": [[s, p] for s, p in self.proposed],
            "model_ref": self.model_ref,
            "status": self.status,
            "final_state": self.final_state,
        }
        if self.record is not None:
            doc["record"] = self.record.to_json()
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "LabelProposal":
        record = doc.get("record")
        return cls(
            sample_id=doc["sample_id"],
            proposed=tuple((s, float(p)) for s, p in doc["proposed"]),
            model_ref=doc.get("model_ref", ""),
            status=doc.get("status", "pending"),
            final_state=doc.get("final_state"),
            record=SampleRecord.from_json(record) if record else None,
        )


@dataclass(frozen=True)
class ReviewSession:
    session_id: str
    reviewer: str
    version: int
    cursor: str | None = None  # sample_id of the next pending proposal


class ProposalStore:
    """Durable proposal/decision store rooted at a directory.

    Files: proposals.jsonl (append-only proposal log), decisions.jsonl
    (append-only decision log), sessions.jsonl (session creation log), and
    an optional snapshot.json written by compact().
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._proposals_path = self.root / "proposals.jsonl"
        self._decisions_path = self.root / "decisions.jsonl"
        self._sessions_path = self.root / "sessions.jsonl"
        self._snapshot_path = self.root / "snapshot.json"
        self._lock = threading.RLock()
        self._proposals: dict[str, LabelProposal] = {}
        self._order: list[str] = []
        self._sessions: dict[str, dict] = {}
        self._seq = 0
        self._load()

    # -- persistence ----------------------------------------------------

    def _append(self, path: Path, doc: dict) -> None:
        with path.open("a") as fh:
            fh.write(json.dumps(doc, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _load(self) -> None:
        replay_from = 0
        if self._snapshot_path.exists():
            snapshot = json.loads(self._snapshot_path.read_text())
            for doc in snapshot["proposals"]:
                proposal = LabelProposal.from_json(doc)
                self._proposals[proposal.sample_id] = proposal
                self._order.append(proposal.sample_id)
            self._sessions = {s["session_id"]: s for s in snapshot["sessions"]}
            self._seq = snapshot["seq"]
            replay_from = snapshot["seq"]
        else:
            if self._proposals_path.exists():
                for line in self._proposals_path.read_text().splitlines():
                    if not line.strip():
                        continue
                    proposal = LabelProposal.from_json(json.loads(line))
                    if proposal.sample_id not in self._proposals:
                        self._order.append(proposal.sample_id)
                    self._proposals[proposal.sample_id] = proposal
            if self._sessions_path.exists():
                for line in self._sessions_path.read_text().splitlines():
                    if not line.strip():
                        continue
                    doc = json.loads(line)
                    self._sessions[doc["session_id"]] = {**doc, "version": 0}
        if self._decisions_path.exists():
            for line in self._decisions_path.read_text().splitlines():
                if not line.strip():
                    continue
                doc = json.loads(line)
                if doc["seq"] <= replay_from:
                    continue
                self._apply(doc)
                self._seq = doc["seq"]

    def compact(self) -> Path:
        """Write a snapshot so future loads replay only newer decisions."""
        with self._lock:
            snapshot = {
                "seq": self._seq,
                "proposals": [self._proposals[sid].to_json() for sid in self._order],
                "sessions": list(self._sessions.values()),
            }
            tmp = self._snapshot_path.with_suffix(".tmp")
            tmp.write_text(json.dumps(snapshot, sort_keys=True))
            tmp.replace(self._snapshot_path)
            return self._snapshot_path

    # -- proposals ------------------------------------------------------

    def add_proposals(self, proposals: Iterable[LabelProposal]) -> int:
        with self._lock:
            added = 0
            for proposal in proposals:
                if proposal.sample_id in self._proposals:
                    raise LabelingError(f"duplicate proposal for sample {proposal.sample_id!r}")
                self._append(self._proposals_path, proposal.to_json())
                self._proposals[proposal.sample_id] = proposal
                self._order.append(proposal.sample_id)
                added += 1
            return added

    def get_proposal(self, sample_id: str) -> LabelProposal:
        with self._lock:
            if sample_id not in self._proposals:
                raise LabelingError(f"unknown proposal {sample_id!r}")
            return self._proposals[sample_id]

    def proposals(self, status: str | None = None) -> list[LabelProposal]:
        with self._lock:
            items = [self._proposals[sid] for sid in self._order]
            if status is None:
                return items
            if status not in PROPOSAL_STATUSES:
                raise LabelingError(f"unknown status {status!r}")
            return [p for p in items if p.status == status]

    def status_counts(self) -> dict[str, int]:
        with self._lock:
            counts = {s: 0 for s in PROPOSAL_STATUSES}
            for sid in self._order:
                counts[self._proposals[sid].status] += 1
            return counts

    # -- sessions and decisions -----------------------------------------

    def create_session(self, reviewer: str) -> ReviewSession:
        with self._lock:
            session_id = uuid.uuid4().hex[:12]
            doc = {"session_id": session_id, "reviewer": reviewer}
            self._append(self._sessions_path, doc)
            self._sessions[session_id] = {**doc, "version": 0}
            return self.get_session(session_id)

    def get_session(self, session_id: str) -> ReviewSession:
        with self._lock:
            if session_id not in self._sessions:
                raise LabelingError(f"unknown session {session_id!r}")
            raw = self._sessions[session_id]
            return ReviewSession(
                session_id=session_id,
                reviewer=raw["reviewer"],
                version=raw["version"],
                cursor=self._next_pending_id(),
            )

    def _next_pending_id(self) -> str | None:
        for sid in self._order:
            if self._proposals[sid].status == "pending":
                return sid
        return None

    def next_pending(self, session_id: str) -> LabelProposal | None:
        with self._lock:
            self.get_session(session_id)
            sid = self._next_pending_id()
            return self._proposals[sid] if sid else None

    def _apply(self, doc: dict) -> None:
        """Apply one decision log record to in-memory state (no validation)."""
        proposal = self._proposals[doc["proposal_id"]]
        decision = doc["decision"]
        if decision == "accept":
            proposal.status = "accepted"
            proposal.final_state = proposal.proposed[0][0]
        elif decision == "override":
            proposal.status = "overridden"
            proposal.final_state = doc["state"]
        elif decision == "discard":
            proposal.status = "discarded"
            proposal.final_state = None
        elif decision == "revert":
            proposal.status = "pending"
            proposal.final_state = None
        session = self._sessions[doc["session_id"]]
        session["version"] += 1

    def decide(
        self,
        session_id: str,
        proposal_id: str,
        decision: str,
        expected_version: int,
        state: str | None = None,
    ) -> ReviewSession:
        """Apply one reviewer decision under compare-and-set versioning.

        The decision is durably logged before the in-memory state changes;
        a mismatched expected_version raises VersionConflictError and
        changes nothing.
        """
        with self._lock:
            session = self.get_session(session_id)
            if decision not in DECISIONS:
                raise LabelingError(f"unknown decision {decision!r}; known: {DECISIONS}")
            if expected_version != session.version:
                raise VersionConflictError(
                    f"session {session_id} is at version {session.version}, "
                    f"decision expected {expected_version}"
                )
            proposal = self.get_proposal(proposal_id)
            if decision == "revert":
                if proposal.status == "pending":
                    raise LabelingError(f"proposal {proposal_id!r} is already pending")
            elif proposal.status != "pending":
                raise LabelingError(
                    f"proposal {proposal_id!r} is {proposal.status}, not pending"
                )
            if decision == "override":
                if state is None:
                    raise LabelingError("override requires a state")
                if state not in CLASS_NAMES:
                    raise LabelingError(f"unknown override state {state!r}")
                if state == proposal.proposed[0][0]:
                    raise LabelingError(
                        f"override state equals the top proposal {state!r}; use accept"
                    )
            elif state is not None:
                raise LabelingError(f"decision {decision!r} does not take a state")

            self._seq += 1
            doc = {
                "seq": self._seq,
                "session_id": session_id,
                "proposal_id": proposal_id,
                "decision": decision,
                "state": state,
            }
            self._append(self._decisions_path, doc)
            self._apply(doc)
            return self.get_session(session_id)

    def audit_length(self, session_id: str | None = None) -> int:
        """Number of logged decisions, optionally for one session."""
        if not self._decisions_path.exists():
            return 0
        count = 0
        for line in self._decisions_path.read_text().splitlines():
            if not line.strip():
                continue
            if session_id is None or json.loads(line)["session_id"] == session_id:
                count += 1
        return count


def propose_labels(
    predictor,
    manifest: DatasetManifest,
    k: int,
    class_names: Sequence[str],
    model_ref: str = "",
    image_root: str | Path | None = None,
    image_loader: Callable[[str], np.ndarray] | None = None,
) -> tuple[list[LabelProposal], list[tuple[str, str]]]:
    """Run a model over a manifest and emit pending top-k proposals.

    ``predictor`` is anything with predict(NxHxWx3) -> NxC probabilities.
    Unreadable images are skipped and reported as (sample_id, reason) pairs
    rather than failing the batch.
    """
    if k < 1:
        raise LabelingError(f"k must be >= 1, got {k}")
    if k > len(class_names):
        raise LabelingError(f"k={k} exceeds the class count {len(class_names)}")
    loader = image_loader or (lambda uri: load_image(uri, root=image_root))

    proposals: list[LabelProposal] = []
    skipped: list[tuple[str, str]] = []
    for record in manifest.records:
        try:
            image = loader(record.uri)
        except Exception as exc:  # unreadable or malformed image
            skipped.append((record.id, str(exc)))
            continue
        probs = np.asarray(predictor.predict(image[None, ...]))[0]
        if len(probs) != len(class_names):
            raise LabelingError(
                f"predictor emitted {len(probs)} probabilities for {len(class_names)} classes"
            )
        ranked = np.argsort(-probs, kind="stable")[:k]
        proposals.append(
            LabelProposal(
                sample_id=record.id,
                proposed=tuple((class_names[i], float(probs[i])) for i in ranked),
                model_ref=model_ref,
                record=record,
            )
        )
    return proposals, skipped


def export_accepted(store: ProposalStore) -> DatasetManifest:
    """Manifest of exactly the accepted and overridden proposals.

    Each exported record carries the reviewer-confirmed final state;
    pending and discarded proposals never appear.
    """
    records: list[SampleRecord] = []
    for proposal in store.proposals():
        if proposal.status not in ("accepted", "overridden"):
            continue
        base = proposal.record
        if base is None:
            base = SampleRecord(
                id=proposal.sample_id,
                uri="",
                object="unknown",
                state=proposal.final_state or "other",
            )
        records.append(
            SampleRecord(
                id=base.id,
                uri=base.uri,
                object=base.object,
                state=proposal.final_state,  # type: ignore[arg-type]
                split="unassigned",
                source=base.source,
                flags=base.flags,
                width=base.width,
                height=base.height,
            )
        )
    return DatasetManifest(records=tuple(records))
